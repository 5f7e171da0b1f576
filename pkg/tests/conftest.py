import sys
import numpy as np
import pytest

from inarmix.simstudy import get_scenario, simulate_panel


def scenario_panel(name: str, seed: int, n: int | None = None):
    """Labelled panel simulated from a builtin scenario (optionally fewer series)."""
    spec = get_scenario(name)
    if n is not None:
        from dataclasses import replace
        spec = replace(spec, n_individuals=n)
    panel, labels = simulate_panel(spec, np.random.default_rng(seed))
    return spec, panel, labels


@pytest.fixture
def nb_very_easy():
    return scenario_panel("nb-very-easy", 7)


@pytest.fixture
def poisson_very_easy():
    return scenario_panel("poisson-very-easy", 3)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
