"""Binomial-lattice pricer for the callable convertible bond.

Independent of the finite-difference path: the lattice prices the
untruncated problem on a CRR tree, applying at each node

    V = max(gamma s, min(disc * E[V'] + c dt, K))

i.e. the issuer's call cap inside and the holder's conversion outside.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ProbabilityOutOfRange
from .model import ModelParams

MIN_STEPS = 64


@dataclass(frozen=True)
class TreeSpec:
    steps: int
    params: ModelParams
    anchor_spot: float

    def __post_init__(self) -> None:
        if self.steps < MIN_STEPS:
            raise ValueError(f"steps must be >= {MIN_STEPS}")
        if self.anchor_spot < 0.0:
            raise ValueError("anchor_spot must be >= 0")
        p = self.probability
        if not 0.0 < p < 1.0:
            raise ProbabilityOutOfRange(f"risk-neutral probability {p:.6g} outside (0, 1); use more steps", p=p)

    @property
    def dt(self) -> float:
        return self.params.T / self.steps

    @property
    def up(self) -> float:
        return math.exp(self.params.sigma * math.sqrt(self.dt))

    @property
    def probability(self) -> float:
        u = self.up
        d = 1.0 / u
        return (math.exp((self.params.r - self.params.q) * self.dt) - d) / (u - d)


def tree_price(spec: TreeSpec) -> float:
    p_ = spec.params
    N, dt = spec.steps, spec.dt
    u = spec.up
    p = spec.probability
    disc = math.exp(-p_.r * dt)
    coupon = p_.c * dt

    def conversion(level: int) -> np.ndarray:
        # node j at this level sits at s0 u^(level - 2j)
        return p_.gamma * spec.anchor_spot * u ** np.arange(level, -level - 1, -2, dtype=float)

    V = np.maximum(conversion(N), p_.K)
    slack = 1e-12 * p_.K
    for level in range(N - 1, -1, -1):
        cont = disc * (p * V[:-1] + (1.0 - p) * V[1:]) + coupon
        conv = conversion(level)
        V = np.maximum(conv, np.minimum(cont, p_.K))
        assert np.all(V >= conv - slack) and np.all(V <= np.maximum(p_.K, conv) + slack)
    return float(V[0])


def tree_price_at(params: ModelParams, spot: float, steps: int) -> float:
    return tree_price(TreeSpec(steps=steps, params=params, anchor_spot=spot))


def convergence_sequence(params: ModelParams, spot: float, steps=(250, 500, 1000, 2000)) -> list[float]:
    """|value(2N) - value(N)| for consecutive entries of ``steps``."""
    values = [tree_price_at(params, spot, n) for n in steps]
    return [abs(b - a) for a, b in zip(values, values[1:])]
