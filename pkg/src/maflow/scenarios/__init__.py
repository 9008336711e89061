"""Bundled scenario documents, one per acceptance criterion.

Use :func:`scenario_path` to locate a document by stem, or load it through
``maflow run --config $(python -c "from maflow.scenarios import scenario_path;
print(scenario_path('02-constant-ode'))")``.
"""

from pathlib import Path

_HERE = Path(__file__).resolve().parent


def available() -> list:
    return sorted(p.stem for p in _HERE.glob("*.json"))


def scenario_path(stem: str) -> Path:
    p = _HERE / f"{stem}.json"
    if not p.is_file():
        raise FileNotFoundError(f"no bundled scenario {stem!r}; have {available()}")
    return p
