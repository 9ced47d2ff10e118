from __future__ import annotations

import numpy as np
import pytest

from convbond.discretization import build_grid
from convbond.lcp import solve
from convbond.model import ModelParams

# reference configuration; its exercise region is empty on [0, T]
DEFAULT = dict(sigma=0.3, r=0.05, q=0.03, c=2.0, gamma=1.0, K=100.0, T=1.0)
# exercise region touches x = K/gamma near t = 1.42 < T
TOUCHING = dict(sigma=0.1, r=0.1, q=0.08, c=1.0, gamma=1.0, K=100.0, T=2.0)

_cache: dict = {}


def cached_solve(params: ModelParams, nx: int, nt: int | None = None, **kw):
    nt = nx if nt is None else nt
    key = (tuple(params.as_dict().items()), nx, nt, tuple(sorted(kw.items())))
    if key not in _cache:
        _cache[key] = solve(params, build_grid(params, nx, nt), **kw)
    return _cache[key]


@pytest.fixture(scope="session")
def default_params() -> ModelParams:
    return ModelParams(**DEFAULT)


@pytest.fixture(scope="session")
def touching_params() -> ModelParams:
    return ModelParams(**TOUCHING)


@pytest.fixture(scope="session")
def default_surface(default_params):
    return cached_solve(default_params, 200)


@pytest.fixture(scope="session")
def touching_surfaces(touching_params):
    """Nested refinement levels 201, 401, 801."""
    return [cached_solve(touching_params, n) for n in (201, 401, 801)]


def random_admissible(rng: np.random.Generator) -> ModelParams:
    """Parameters satisfying c < rK and c < qK.

    Ranges lean toward low volatility, long horizons and small coupons so a
    fair share of draws has a non-empty conversion region before maturity.
    """
    sigma = rng.uniform(0.08, 0.3)
    r = rng.uniform(0.04, 0.12)
    q = rng.uniform(0.04, 0.12)
    c = rng.uniform(0.0, 0.4) * min(r, q) * 100.0
    return ModelParams(sigma=sigma, r=r, q=q, c=c, gamma=rng.uniform(0.5, 2.0), K=100.0, T=rng.uniform(1.0, 3.0))


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
