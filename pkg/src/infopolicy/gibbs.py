"""Gibbs policies for the multiplier form of bounded-rational control.

Convention used throughout: the inverse temperature multiplies utility
inside the exponent, policy ~ prior * exp(beta * u), while the control
objective weights the divergence cost by its reciprocal,

    maximize  E_p[u] - (1/beta) * KL(p, prior).

All exponentials go through log-sum-exp with max subtraction so that sweeps
up to beta = 1e3 and beyond stay finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kernel import StochasticKernel, UtilityMatrix
from .simplex import Distribution, TangentVector


@dataclass(frozen=True, eq=False)
class GibbsProblem:
    """Utilities over outcomes, an interior prior, and an inverse temperature."""

    utilities: np.ndarray
    prior: Distribution
    beta: float

    def __post_init__(self):
        u = np.asarray(self.utilities, dtype=float)
        if u.ndim != 1 or len(u) != len(self.prior):
            raise ValueError("utilities must be a 1-d sequence matching the prior")
        if not np.all(np.isfinite(u)):
            raise ValueError("utilities must be finite")
        if not self.prior.is_interior:
            raise ValueError("prior must have full support")
        if not (math.isfinite(self.beta) and self.beta >= 0.0):
            raise ValueError("beta must be a finite non-negative real")
        u.setflags(write=False)
        object.__setattr__(self, "utilities", u)


@dataclass(frozen=True, eq=False)
class GibbsSolution:
    """Optimal policy together with the scalar summaries of the optimum."""

    policy: Distribution
    log_partition: float
    free_energy: float
    expected_utility: float
    utility_variance: float
    kl_cost: float


def _log_weights(problem: GibbsProblem) -> np.ndarray:
    return np.log(problem.prior.weights) + problem.beta * problem.utilities


def partition_function(problem: GibbsProblem) -> float:
    """ln Z = ln sum_i q_i exp(beta * u_i), evaluated as a log-sum-exp."""
    return float(logsumexp(_log_weights(problem)))


def _policy_weights(problem: GibbsProblem) -> np.ndarray:
    logw = _log_weights(problem)
    logw -= logw.max()
    w = np.exp(logw)
    return w / w.sum()


def gibbs_policy(problem: GibbsProblem) -> GibbsSolution:
    """Solve the multiplier problem: prior reweighted by exp(beta*u).

    The free energy equals ln(Z)/beta for beta > 0; at beta = 0 the policy
    is the prior and the free energy is the prior-expected utility (the
    high-temperature limit of the quotient).
    """
    w = _policy_weights(problem)
    lnz = partition_function(problem)
    mean = float(w @ problem.utilities)
    var = float(w @ (problem.utilities - mean) ** 2)
    if problem.beta > 0.0:
        fe = lnz / problem.beta
        kl = max(problem.beta * mean - lnz, 0.0)
    else:
        fe = float(problem.prior.weights @ problem.utilities)
        kl = 0.0
    return GibbsSolution(
        policy=Distribution(w),
        log_partition=lnz,
        free_energy=fe,
        expected_utility=mean,
        utility_variance=var,
        kl_cost=kl,
    )


def cumulants(problem: GibbsProblem) -> tuple[float, float]:
    """Mean and variance of the utility under the Gibbs policy.

    These are the first two derivatives of beta -> ln Z(beta).
    """
    sol = gibbs_policy(problem)
    return sol.expected_utility, sol.utility_variance


def rate_of_beta(problem: GibbsProblem) -> float:
    """Divergence cost of the optimal policy, r = beta*E[u] - ln Z >= 0.

    Equals KL(policy, prior); strictly increasing in beta, zero at beta = 0,
    saturating at -ln(prior mass of the argmax set).
    """
    return gibbs_policy(problem).kl_cost


def max_rate(utilities, prior: Distribution) -> float:
    """Supremum of the divergence cost: -ln of the prior mass on argmax(u)."""
    u = np.asarray(utilities, dtype=float)
    top = u == u.max()
    return float(-np.log(prior.weights[top].sum()))


def beta_of_rate(
    utilities,
    prior: Distribution,
    r: float,
    tol: float = 1e-10,
    max_doublings: int = 200,
    max_bisect: int = 200,
) -> float:
    """Invert the rate map: the beta >= 0 whose policy has divergence cost r.

    Valid for 0 <= r < max_rate; bisection on the strictly increasing rate
    function, with exponential bracket growth to find the upper end.
    """
    if r < 0.0:
        raise ValueError("rate must be non-negative")
    r_max = max_rate(utilities, prior)
    if r >= r_max:
        raise ValueError(f"rate {r!r} is unattainable (max_rate = {r_max!r})")
    if r == 0.0:
        return 0.0

    def rate(beta: float) -> float:
        return rate_of_beta(GibbsProblem(utilities, prior, beta))

    lo, hi = 0.0, 1.0
    for _ in range(max_doublings):
        if rate(hi) > r:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise ValueError(f"rate {r!r} too close to max_rate to bracket")
    mid = 0.5 * (lo + hi)
    for _ in range(max_bisect):
        mid = 0.5 * (lo + hi)
        if rate(mid) < r:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    if abs(rate(mid) - r) >= tol:
        raise ValueError(f"bisection stalled at rate residual {abs(rate(mid) - r):.3e}")
    return mid


def solution_geodesic(utilities, prior: Distribution, t_grid) -> list[Distribution]:
    """The optimal-policy curve t -> prior * exp(t*u) / Z(t).

    This is the exponential geodesic through the prior with initial velocity
    prior*(u - E_prior[u]), evaluated for any real t (negative t runs toward
    the utility minimizer).  At t = beta it coincides with the Gibbs policy.
    """
    u = np.asarray(utilities, dtype=float)
    if u.ndim != 1 or len(u) != len(prior):
        raise ValueError("utilities must be a 1-d sequence matching the prior")
    if not prior.is_interior:
        raise ValueError("prior must have full support")
    logq = np.log(prior.weights)
    out = []
    for t in np.asarray(t_grid, dtype=float):
        logw = logq + t * u
        logw -= logw.max()
        w = np.exp(logw)
        out.append(Distribution(w / w.sum()))
    return out


def solution_geodesic_tangent(utilities, prior: Distribution) -> TangentVector:
    """Initial velocity of the optimal-policy curve at t = 0."""
    u = np.asarray(utilities, dtype=float)
    mean = float(prior.weights @ u)
    return TangentVector(base=prior, components=prior.weights * (u - mean))


def state_dependent_gibbs(U: UtilityMatrix, kappa: StochasticKernel, beta: float) -> StochasticKernel:
    """Rowwise Gibbs reweighting of a kernel of state-dependent priors.

    Row x of the result is kappa(x,.) * exp(beta*U(x,.)) normalized by the
    per-state partition sum; zeros of kappa stay structural zeros.
    """
    if U.shape != kappa.rows.shape:
        raise ValueError(f"shape mismatch: utilities {U.shape} vs kernel {kappa.rows.shape}")
    if not (math.isfinite(beta) and beta >= 0.0):
        raise ValueError("beta must be a finite non-negative real")
    support = kappa.rows > 0.0
    logits = np.where(support, np.log(np.where(support, kappa.rows, 1.0)) + beta * U.entries, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    return StochasticKernel(w / w.sum(axis=1, keepdims=True))
