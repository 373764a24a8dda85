"""Role-based coordination engine with a deterministic network simulator."""

from .model import (
    Classification,
    ConditionKind,
    Configuration,
    ConfigState,
    Condition,
    Direction,
    Environment,
    Necessity,
    Role,
    ServiceSpec,
    Thing,
    Trigger,
    classify,
    induce_things,
    validate_role,
)
from .context import (
    Activity,
    ActivityRule,
    ContextState,
    Event,
    EventRule,
    Signal,
    aggregate_signals,
    infer_activity,
    update_context,
)
from .matching import MatchProblem, MatchResult, compute_delta, feasible, oracle_delta
from .lifecycle import ConfigurationTemplate, Goal, form_configuration
from .engine import Orchestrator, run_scenario
from .scenario import ScenarioDoc, load_scenario, serialize_scenario
from .trace import Trace, read_jsonl, summarize

__version__ = "0.1.0"

__all__ = [
    "Activity",
    "ActivityRule",
    "Classification",
    "Condition",
    "ConditionKind",
    "ConfigState",
    "Configuration",
    "ConfigurationTemplate",
    "ContextState",
    "Direction",
    "Environment",
    "Event",
    "EventRule",
    "Goal",
    "MatchProblem",
    "MatchResult",
    "Necessity",
    "Orchestrator",
    "Role",
    "ScenarioDoc",
    "ServiceSpec",
    "Signal",
    "Thing",
    "Trace",
    "Trigger",
    "aggregate_signals",
    "classify",
    "compute_delta",
    "feasible",
    "form_configuration",
    "induce_things",
    "infer_activity",
    "load_scenario",
    "oracle_delta",
    "read_jsonl",
    "run_scenario",
    "serialize_scenario",
    "summarize",
    "update_context",
    "validate_role",
    "__version__",
]
