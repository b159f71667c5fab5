"""Shared fixtures: a small two-modality problem every suite can afford."""

import numpy as np
import pytest

from psfunmix import (
    MixtureParams,
    SupportSpec,
    build_dictionary,
    lorentz,
    make_grid,
    synthesize,
)


@pytest.fixture(scope="session")
def family():
    return lorentz()


@pytest.fixture(scope="session")
def small_grid():
    return make_grid(T=4.0, N=801)


@pytest.fixture(scope="session")
def small_support():
    return SupportSpec(locations=((0.0, 1.0, 2.0), (0.5, 1.5)))


@pytest.fixture(scope="session")
def small_params():
    return MixtureParams(theta=(0.2, 0.1), eta=(1.0, 0.8, 0.6, 0.5, 0.4))


@pytest.fixture(scope="session")
def small_signal(family, small_grid, small_support, small_params):
    stack = build_dictionary(family, small_grid, small_support, small_params.theta)
    return synthesize(stack, small_params.eta)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)


# The acceptance suite records one "criterion N: PASS|FAIL" line per test;
# replaying them in the terminal summary keeps them visible even for passing
# tests, whose captured stdout pytest normally swallows.
_acceptance_verdicts = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _acceptance_verdicts


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_verdicts:
            terminalreporter.write_line(line)
