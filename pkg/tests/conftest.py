import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from echoscope.config import load_config, scenario_path  # noqa: E402
from echoscope.simulate import run_scenario  # noqa: E402

_RUNS: dict = {}
ACCEPTANCE_LINES: list = []


def scenario_run(name, **overrides):
    """Runs a bundled scenario once per session and caches the result."""
    key = (name, tuple(sorted(overrides.items())))
    if key not in _RUNS:
        _RUNS[key] = run_scenario(load_config(scenario_path(name), overrides))
    return _RUNS[key]


@pytest.fixture(scope="session")
def run_named():
    return scenario_run


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
