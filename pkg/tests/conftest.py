"""Shared fixtures: bundled scenarios run once per session and are cached."""

import json
from dataclasses import dataclass, field

import pytest

from maflow import cli
from maflow.scenarios import scenario_path


@dataclass
class ScenarioOutcome:
    stem: str
    mode: str
    ctx: cli.RunContext
    reports: list = field(default_factory=list)

    def report(self, name: str):
        hits = [r for r in self.reports if r.name == name]
        if not hits:
            raise KeyError(
                f"{self.stem} produced no report {name!r}; "
                f"have {[r.name for r in self.reports]}"
            )
        return hits[0]


_CACHE: dict = {}


def run_scenario(stem: str) -> ScenarioOutcome:
    """Integrate a bundled scenario and execute its declared checks, once."""
    if stem in _CACHE:
        return _CACHE[stem]
    doc = json.loads(scenario_path(stem).read_text())
    mode, ctx, reports = cli.integrate_scenario(doc)
    names = list(doc.get("checks", []))
    if "comparison" in names and ctx.traj_b is None and ctx.initial_b is not None:
        cli.run_comparison_pair(ctx)
    reports = list(reports) + cli.execute_checks(names, ctx)
    outcome = ScenarioOutcome(stem=stem, mode=mode, ctx=ctx, reports=reports)
    _CACHE[stem] = outcome
    return outcome


@pytest.fixture(scope="session")
def scenario():
    return run_scenario
