"""Bundled example scenarios."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

_NAMES = ("mesh_presenter", "jogging", "auction_relay")


def bundled() -> tuple[str, ...]:
    return _NAMES


def path(name: str) -> Path:
    """Filesystem path of a bundled scenario by bare name."""
    if name not in _NAMES:
        raise KeyError(f"no bundled scenario named {name!r}; have {', '.join(_NAMES)}")
    return Path(str(resources.files(__package__) / f"{name}.json"))


def resolve(ref: str) -> Path:
    """Interpret a CLI reference as a bundled name first, then as a path."""
    if ref in _NAMES:
        return path(ref)
    return Path(ref)
