"""Model ingredients for the callable convertible bond.

The bond value V(x, t) lives on (0, K/gamma) x (0, T), is bounded below by the
conversion value gamma*x and above by the call price K (equal to the face
value here).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from numbers import Real
from typing import Mapping

import numpy as np

from .errors import (
    NoFreeBoundary,
    NonPositive,
    UnsupportedFeature,
    UpperObstacleActive,
    ValidationError,
)

logger = logging.getLogger(__name__)

FIELDS = ("sigma", "r", "q", "c", "gamma", "K", "T")


@dataclass(frozen=True)
class Domain:
    x_max: float
    T: float


@dataclass(frozen=True)
class ModelParams:
    """Constant coefficients of the pricing problem.

    sigma: volatility (1/sqrt(year)); r: interest rate; q: dividend yield;
    c: continuous coupon (cash per year); gamma: conversion ratio;
    K: face value and call price (cash); T: maturity (years).

    Construction enforces 0 < c/(q*gamma) < K/gamma, i.e. c < qK, and c < rK.
    """

    sigma: float
    r: float
    q: float
    c: float
    gamma: float
    K: float
    T: float

    def __post_init__(self) -> None:
        for name in FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, Real):
                raise UnsupportedFeature(
                    f"{name} must be a real constant (variable coefficients are not supported)",
                    field=name,
                )
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite, got {value!r}", field=name)
            object.__setattr__(self, name, float(value))

        for name in ("sigma", "r", "gamma", "K", "T"):
            if getattr(self, name) <= 0.0:
                raise NonPositive(f"{name} must be > 0, got {getattr(self, name)}", field=name)
        for name in ("q", "c"):
            if getattr(self, name) < 0.0:
                raise NonPositive(f"{name} must be >= 0, got {getattr(self, name)}", field=name)

        if self.c >= self.r * self.K:
            raise UpperObstacleActive(
                f"c={self.c} >= rK={self.r * self.K}: the call cap is an active upper obstacle",
                c=self.c,
                rK=self.r * self.K,
            )
        if self.c >= self.q * self.K:
            raise NoFreeBoundary(
                f"c={self.c} >= qK={self.q * self.K}: conversion is never optimal",
                c=self.c,
                qK=self.q * self.K,
            )
        # algebraic consequence of c < qK; kept as a guard against edits above
        assert exercise_lower_bound(self) < self.x_max

        if self.dividend_exceeds_rate:
            logger.warning("q=%g exceeds r=%g; accepted, but atypical", self.q, self.r)

    @property
    def x_max(self) -> float:
        return self.K / self.gamma

    @property
    def domain(self) -> Domain:
        return Domain(x_max=self.x_max, T=self.T)

    @property
    def dividend_exceeds_rate(self) -> bool:
        return self.q > self.r

    def replace(self, **changes: float) -> "ModelParams":
        values = {name: getattr(self, name) for name in FIELDS}
        values.update(changes)
        return ModelParams(**values)

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in FIELDS}


def validate(raw: Mapping[str, object]) -> ModelParams:
    """Build validated parameters from a raw record keyed by FIELDS.

    Raises one of NonPositive, UpperObstacleActive, NoFreeBoundary,
    UnsupportedFeature or ValidationError; each carries ``code``.
    """
    missing = [name for name in FIELDS if name not in raw]
    if missing:
        raise ValidationError(f"missing parameters: {', '.join(missing)}", missing=missing)
    extra = sorted(set(raw) - set(FIELDS))
    if extra:
        raise ValidationError(f"unknown parameters: {', '.join(extra)}", unknown=extra)
    return ModelParams(**{name: raw[name] for name in FIELDS})


def boundary_value_x0(params: ModelParams, t):
    """Closed-form bond value on the degenerate boundary x = 0.

    Solves dV/dt + c = rV backward from V(0, T) = K.  Accepts scalars or arrays.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > params.T):
        raise ValueError(f"t must lie in [0, {params.T}]")
    tau = params.T - t_arr
    # K e^{-r tau} + (c/r)(1 - e^{-r tau}) rearranged around expm1 for accuracy
    value = params.K + (params.K - params.c / params.r) * np.expm1(-params.r * tau)
    return float(value) if value.ndim == 0 else value


def exercise_lower_bound(params: ModelParams) -> float:
    """Smallest stock level at which conversion can be optimal: c / (q gamma)."""
    if params.c == 0.0:
        return 0.0
    return params.c / (params.q * params.gamma)


def perpetual_root(params: ModelParams) -> float:
    """Positive root beta of 0.5 sigma^2 b(b-1) + (r-q) b - r = 0."""
    a = 0.5 * params.sigma**2
    b = params.r - params.q - a
    return (-b + math.sqrt(b * b + 4.0 * a * params.r)) / (2.0 * a)


def perpetual_boundary(params: ModelParams) -> float:
    """Conversion boundary of the infinite-horizon problem.

    Smooth fit of c/r + A x^beta against gamma*x.  The finite-horizon value
    dominates the perpetual one, so when this is >= K/gamma the exercise region
    is empty for every maturity.
    """
    beta = perpetual_root(params)
    return params.c * beta / (params.r * params.gamma * (beta - 1.0))


def exercise_region_possible(params: ModelParams) -> bool:
    return perpetual_boundary(params) < params.x_max
