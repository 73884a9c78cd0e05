"""Shared fixtures: the reference parameter set and a reduced twin.

The reference configuration (500 servers, offered load 150 per server,
processing capacity 200 flows per server) is what the acceptance suite
exercises end to end; the reduced twin keeps the same per-server load at a
fraction of the event volume for fast unit runs.
"""

import pytest

from stickysim.core import SystemParams

# verdict lines collected by the acceptance tests; echoed after the run
# summary so they are visible without -s
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def full_params() -> SystemParams:
    return SystemParams(n=500, lam=100.0, beta=1.5, nu=100.0, mu=20000.0)


@pytest.fixture(scope="session")
def reduced_params() -> SystemParams:
    return SystemParams(n=100, lam=100.0, beta=1.5, nu=100.0, mu=20000.0)


@pytest.fixture(scope="session")
def small_params() -> SystemParams:
    # tiny system for hand-checkable runs: rho = 3 flows per server
    return SystemParams(n=20, lam=3.0, beta=1.0, nu=1.0, mu=10.0)
