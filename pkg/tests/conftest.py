from functools import lru_cache

import pytest

from afmod import germ as Gm
from afmod import surface as S

SEED_POLY = (1.0, 0.5, 0.3, 0.2)

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@lru_cache(maxsize=None)
def bolza():
    return S.build_bolza_group()


@lru_cache(maxsize=None)
def mesh(level):
    return S.build_mesh(bolza(), level)


@lru_cache(maxsize=None)
def sigma(peak=0.3):
    return S.build_quad_diff(bolza(), SEED_POLY, normalize_to=peak)


@lru_cache(maxsize=None)
def solved(level, scale=1.0):
    """(GermPair, trace) for the seed series at peak 0.3 times scale."""
    return Gm.continuation_solve(mesh(level), sigma().scaled(scale))


@pytest.fixture(scope="session")
def G():
    return bolza()


@pytest.fixture(scope="session")
def sigma03():
    return sigma()
