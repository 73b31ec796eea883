"""Probability distributions on finite outcome sets and their information geometry.

Values are immutable once constructed and every operation returns a new
value, so everything here is safe to share between threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# Weights at or below this are structural zeros; distinguishes true boundary
# points from underflow produced by fixed-point iterates.
SUPPORT_TOL = 1e-14

# Normalization slack accepted by the value constructors.
SUM_TOL = 1e-12


def _readonly(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Distribution:
    """A point of the probability simplex with explicit support."""

    weights: np.ndarray

    def __post_init__(self):
        w = _readonly(self.weights)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0.0):
            raise ValueError("weights must be non-negative")
        total = float(w.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, expected 1 within {SUM_TOL}")
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return self.weights.shape[0]

    @cached_property
    def support(self) -> tuple[int, ...]:
        """Indices whose weight exceeds ``SUPPORT_TOL``."""
        return tuple(int(i) for i in np.flatnonzero(self.weights > SUPPORT_TOL))

    @property
    def is_interior(self) -> bool:
        return len(self.support) == len(self)

    @classmethod
    def uniform(cls, n: int) -> Distribution:
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def dirac(cls, n: int, index: int) -> Distribution:
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w)

    @classmethod
    def normalized(cls, values) -> Distribution:
        """Build a distribution from non-negative weights, dividing by their sum."""
        arr = np.asarray(values, dtype=float)
        total = arr.sum()
        if not total > 0.0:
            raise ValueError("cannot normalize weights with non-positive total")
        return cls(arr / total)


@dataclass(frozen=True, eq=False)
class TangentVector:
    """A zero-sum direction attached to a base point of the simplex."""

    base: Distribution
    components: np.ndarray

    def __post_init__(self):
        c = _readonly(self.components)
        if c.shape != self.base.weights.shape:
            raise ValueError("components must match the base dimension")
        if abs(float(c.sum())) > SUM_TOL:
            raise ValueError("tangent components must sum to zero")
        object.__setattr__(self, "components", c)


def kl_divergence(p: Distribution, q: Distribution) -> float:
    """Relative entropy sum(p * ln(p/q)) in nats.

    Conventions: 0*ln(0/q) = 0 and p*ln(p/0) = +inf, so the result is
    ``math.inf`` exactly when support(p) is not contained in support(q);
    callers can test the absolute-continuity precondition with
    ``math.isinf``.
    """
    if len(p) != len(q):
        raise ValueError(f"dimension mismatch: {len(p)} vs {len(q)}")
    pw, qw = p.weights, q.weights
    mask = pw > SUPPORT_TOL
    if np.any(qw[mask] <= SUPPORT_TOL):
        return math.inf
    pm = pw[mask]
    return float(np.sum(pm * np.log(pm / qw[mask])))


def entropy(p: Distribution) -> float:
    """Shannon entropy -sum(p * ln p) in nats, with 0*ln 0 = 0."""
    w = p.weights[p.weights > SUPPORT_TOL]
    return float(-np.sum(w * np.log(w)))


def m_geodesic(p: Distribution, q: Distribution, t: float) -> Distribution:
    """Mixture geodesic (1-t)*p + t*q, defined for t in [0, 1]."""
    if len(p) != len(q):
        raise ValueError(f"dimension mismatch: {len(p)} vs {len(q)}")
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"mixture parameter t={t!r} outside [0, 1]")
    return Distribution((1.0 - t) * p.weights + t * q.weights)


def e_geodesic(p: Distribution, q: Distribution, t: float) -> Distribution:
    """Exponential geodesic with components proportional to p^(1-t) * q^t.

    Both endpoints must be interior.  The curve parameter ranges over all of
    the reals: values outside [0, 1] extrapolate the geodesic, which tends to
    vertex measures as t goes to +/- infinity.  Computed in log space with
    max subtraction so large |t| cannot overflow.
    """
    if len(p) != len(q):
        raise ValueError(f"dimension mismatch: {len(p)} vs {len(q)}")
    if not p.is_interior or not q.is_interior:
        raise ValueError("e-geodesic endpoints must have full support")
    logs = (1.0 - t) * np.log(p.weights) + t * np.log(q.weights)
    logs -= logs.max()
    w = np.exp(logs)
    return Distribution(w / w.sum())


@dataclass(frozen=True, eq=False)
class BregmanBall:
    """KL ball {p : kl_divergence(p, center) <= radius}, radius in nats."""

    center: Distribution
    radius: float

    def __post_init__(self):
        if not self.center.is_interior:
            raise ValueError("ball center must be interior")
        if not self.radius >= 0.0:
            raise ValueError("radius must be non-negative")

    def contains(self, p: Distribution) -> bool:
        return bregman_ball_contains(self, p)


def bregman_ball_contains(ball: BregmanBall, p: Distribution) -> bool:
    """Membership test with a 1e-12 slack on the boundary."""
    return kl_divergence(p, ball.center) <= ball.radius + 1e-12
