"""Rate-utility analysis: optimal priors, the self-consistent policy system,
curve tracing, and utility expansion/contraction paths.

The central object is the coupled fixed point in (kernel, output marginal):
every kernel row is a Gibbs reweighting of the shared output marginal, and
the marginal is the source-weighted mixture of the rows.  Tracing it over
the inverse temperature sweeps out the rate-utility curve, whose slope is
the temperature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernel import (
    JointDistribution,
    NonConvergenceError,
    StochasticKernel,
    UtilityMatrix,
    mutual_information,
    mutual_information_gradient,
    push_forward,
    semidirect_product,
)
from .simplex import Distribution

DEAD_COLUMN_TOL = 1e-300  # marginal mass below this is pinned to zero
BETA_CAP = 1e4  # beyond this, rate queries return the max-rate endpoint


@dataclass(frozen=True, eq=False)
class RateUtilityProblem:
    """A source over states, a state-action utility table, and an optional
    support mask restricting which actions each state may use."""

    source: Distribution
    utilities: UtilityMatrix
    support_mask: np.ndarray | None = None

    def __post_init__(self):
        if not self.source.is_interior:
            raise ValueError("source must have full support")
        if self.utilities.shape[0] != len(self.source):
            raise ValueError("utility rows must match the source dimension")
        if self.support_mask is not None:
            mask = np.asarray(self.support_mask, dtype=bool)
            if mask.shape != self.utilities.shape:
                raise ValueError("support mask shape must match the utility matrix")
            if not mask.any(axis=1).all():
                bad = int(np.flatnonzero(~mask.any(axis=1))[0])
                raise ValueError(f"support mask row {bad} admits no action")
            mask.setflags(write=False)
            object.__setattr__(self, "support_mask", mask)

    @property
    def mask(self) -> np.ndarray:
        """Admissibility as a boolean matrix (all-true when unrestricted)."""
        if self.support_mask is not None:
            return self.support_mask
        return np.ones(self.utilities.shape, dtype=bool)

    def negated(self) -> RateUtilityProblem:
        return RateUtilityProblem(self.source, self.utilities.negated(), self.support_mask)


@dataclass(frozen=True, eq=False)
class RateUtilityPoint:
    """One sample of the rate-utility curve: the multiplier, the achieved
    information rate and expected utility, and the solving kernel."""

    beta: float
    rate: float
    utility: float
    kernel: StochasticKernel
    marginal: Distribution
    residual: float
    iterations: int = 0
    converged: bool = True
    damping_events: int = 0
    dead_columns: int = 0


def optimal_generic_prior(P: Distribution, K: StochasticKernel) -> StochasticKernel:
    """Best unrestricted prior kernel for a fixed policy kernel: K itself.

    Minimizing the source-averaged divergence of the policy rows from the
    prior rows is achieved by matching them exactly, which collapses the
    outer optimization and leaves a degenerate inner problem solved by the
    rowwise argmax kernel.
    """
    if len(P) != K.n_inputs:
        raise ValueError(f"dimension mismatch: |P|={len(P)} vs kernel rows {K.n_inputs}")
    return StochasticKernel(K.rows.copy())


def optimal_constant_prior(P: Distribution, K: StochasticKernel) -> Distribution:
    """Best constant prior for a fixed policy kernel: the output marginal.

    This is the m-projection of the joint onto product measures.
    """
    return push_forward(K, P)


def deterministic_argmax_kernel(problem: RateUtilityProblem) -> StochasticKernel:
    """Rowwise point mass on the best admissible action (lowest index on ties)."""
    u = problem.utilities.entries
    masked = np.where(problem.mask, u, -np.inf)
    rows = np.zeros_like(u)
    rows[np.arange(u.shape[0]), np.argmax(masked, axis=1)] = 1.0
    return StochasticKernel(rows)


def zero_rate_point(problem: RateUtilityProblem) -> RateUtilityPoint:
    """Zero-information endpoint: the best single action used in every state.

    The admissible candidates are the actions allowed in all states; the
    winner maximizes the source-averaged utility column (lowest index on
    ties).  The optimizing joint is the product of the source with that
    point mass.
    """
    common = problem.mask.all(axis=0)
    if not common.any():
        raise ValueError("no action is admissible in every state; zero rate unattainable")
    col_values = problem.source.weights @ problem.utilities.entries
    col_values = np.where(common, col_values, -np.inf)
    best = int(np.argmax(col_values))
    n = problem.utilities.shape[1]
    kernel = StochasticKernel.constant(Distribution.dirac(n, best), len(problem.source))
    return RateUtilityPoint(
        beta=0.0,
        rate=0.0,
        utility=float(col_values[best]),
        kernel=kernel,
        marginal=Distribution.dirac(n, best),
        residual=0.0,
    )


def max_rate_point(problem: RateUtilityProblem) -> RateUtilityPoint:
    """Maximum-rate endpoint: the deterministic rowwise-argmax kernel."""
    kernel = deterministic_argmax_kernel(problem)
    joint = semidirect_product(problem.source, kernel)
    masked = np.where(problem.mask, problem.utilities.entries, -np.inf)
    utility = float(problem.source.weights @ masked.max(axis=1))
    return RateUtilityPoint(
        beta=math.inf,
        rate=mutual_information(joint),
        utility=utility,
        kernel=kernel,
        marginal=joint.y_marginal,
        residual=0.0,
    )


def _gibbs_rows(u, log_q, beta, mask):
    """Rowwise policy q*exp(beta*u)/Z on the admissible support.

    Returns the kernel matrix and the per-row log partition sums.
    """
    logits = np.where(mask, log_q[None, :] + beta * u, -np.inf)
    peak = logits.max(axis=1, keepdims=True)
    w = np.exp(logits - peak)
    sums = w.sum(axis=1, keepdims=True)
    log_z = peak[:, 0] + np.log(sums[:, 0])
    return w / sums, log_z


def solve_self_consistent(
    problem: RateUtilityProblem,
    beta: float,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    strict: bool = True,
) -> RateUtilityPoint:
    """Solve the coupled kernel/marginal fixed point at one multiplier value.

    Alternates the two defining maps: rebuild the kernel rows as Gibbs
    reweightings of the current output marginal, then refresh the marginal
    as the source-weighted row mixture.  Convergence requires the sup-norm
    change of both the marginal and the kernel to drop below ``tol``.

    Stabilization details:
      * marginal updates are damped by a factor that starts at 1 and halves
        whenever the residual increases (large multipliers can oscillate);
      * marginal mass underflowing ``DEAD_COLUMN_TOL`` is pinned to zero,
        yielding a reduced-support fixed point that the interior iteration
        only approaches asymptotically.

    With ``strict`` a failure to converge raises ``NonConvergenceError``;
    otherwise the best iterate is returned flagged ``converged=False``.
    """
    if not (math.isfinite(beta) and beta >= 0.0):
        raise ValueError("beta must be a finite non-negative real")
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    p = problem.source.weights
    u = problem.utilities.entries
    mask = problem.mask
    admissible = mask.any(axis=0)

    q = np.where(admissible, 1.0 / admissible.sum(), 0.0)
    with np.errstate(divide="ignore"):
        K, _ = _gibbs_rows(u, np.log(q, where=q > 0.0, out=np.full_like(q, -np.inf)), beta, mask & (q > 0.0)[None, :])
    alpha = 1.0
    damping_events = 0
    residual = math.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        q_raw = p @ K
        q_new = (1.0 - alpha) * q + alpha * q_raw
        q_new[q_new < DEAD_COLUMN_TOL] = 0.0
        q_new /= q_new.sum()
        with np.errstate(divide="ignore"):
            log_q = np.log(q_new, where=q_new > 0.0, out=np.full_like(q_new, -np.inf))
        K_new, _ = _gibbs_rows(u, log_q, beta, mask & (q_new > 0.0)[None, :])
        new_residual = max(
            float(np.abs(q_new - q).max()), float(np.abs(K_new - K).max())
        )
        if new_residual > residual and alpha > 2.0**-20:
            alpha *= 0.5
            damping_events += 1
        residual = new_residual
        q, K = q_new, K_new
        if residual < tol:
            break
    converged = residual < tol
    if not converged and strict:
        raise NonConvergenceError(
            f"fixed point residual {residual:.3e} after {max_iter} iterations at beta={beta!r}",
            residual=residual,
        )

    with np.errstate(divide="ignore"):
        log_q = np.log(q, where=q > 0.0, out=np.full_like(q, -np.inf))
    K, log_z = _gibbs_rows(u, log_q, beta, mask & (q > 0.0)[None, :])
    kernel = StochasticKernel(K)
    marginal = push_forward(kernel, problem.source)
    joint = p[:, None] * K
    utility = float(np.sum(joint * u))
    rate = max(float(beta * utility - p @ log_z), 0.0)
    return RateUtilityPoint(
        beta=beta,
        rate=rate,
        utility=utility,
        kernel=kernel,
        marginal=marginal,
        residual=residual,
        iterations=iterations,
        converged=converged,
        damping_events=damping_events,
        dead_columns=int(np.count_nonzero(~(q > 0.0) & admissible)),
    )


def solve_at_rate(
    problem: RateUtilityProblem,
    rate: float,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    rate_tol: float = 1e-9,
) -> RateUtilityPoint:
    """Find the curve point whose achieved information rate matches a target.

    Bisection on the multiplier, using that the achieved rate increases with
    it.  Targets at or below zero give the zero-rate endpoint (for masked
    problems, the smallest-rate fixed point); targets not reachable below
    ``BETA_CAP`` return the max-rate endpoint.
    """
    if rate < 0.0:
        raise ValueError("rate must be non-negative")
    if rate == 0.0 and problem.support_mask is None:
        return zero_rate_point(problem)

    lo, hi = 0.0, 1.0
    point_lo = solve_self_consistent(problem, lo, tol, max_iter)
    if point_lo.rate >= rate:
        return point_lo
    point = solve_self_consistent(problem, hi, tol, max_iter)
    while point.rate < rate:
        lo = hi
        hi *= 2.0
        if hi > BETA_CAP:
            return max_rate_point(problem)
        point = solve_self_consistent(problem, hi, tol, max_iter)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        point = solve_self_consistent(problem, mid, tol, max_iter)
        if abs(point.rate - rate) < rate_tol:
            return point
        if point.rate < rate:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return point


def rate_utility_curve(
    problem: RateUtilityProblem,
    beta_grid=None,
    rate_grid=None,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    strict: bool = False,
) -> list[RateUtilityPoint]:
    """Trace the rate-utility curve over a multiplier grid or a rate grid.

    Exactly one grid must be given, non-empty and ascending.  On a beta
    grid, beta = 0 of an unmasked problem stands for the curve's zero-rate
    endpoint (the best single action), not the trivial product fixed point;
    masked problems run the solver there since zero rate may be unattainable.
    With ``strict=False`` unconverged points are returned flagged rather
    than raised.
    """
    if (beta_grid is None) == (rate_grid is None):
        raise ValueError("exactly one of beta_grid or rate_grid is required")
    grid = np.asarray(beta_grid if beta_grid is not None else rate_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d sequence")
    if np.any(np.diff(grid) < 0.0):
        raise ValueError("grid must be sorted ascending")
    points = []
    for value in grid:
        if beta_grid is not None:
            if value == 0.0 and problem.support_mask is None:
                points.append(zero_rate_point(problem))
            else:
                points.append(solve_self_consistent(problem, float(value), tol, max_iter, strict=strict))
        else:
            points.append(solve_at_rate(problem, float(value), tol, max_iter))
    return points


def slope_check(point: RateUtilityPoint, neighbor: RateUtilityPoint) -> float:
    """Finite-difference slope of utility against rate between two points.

    For adjacent points of a fine grid this approximates the temperature
    1/beta at the midpoint.
    """
    dr = neighbor.rate - point.rate
    if dr == 0.0:
        raise ValueError("points have equal rates; slope undefined")
    return (neighbor.utility - point.utility) / dr


def expansion_path(
    problem: RateUtilityProblem, beta_grid, tol: float = 1e-12, max_iter: int = 10_000
) -> list[JointDistribution]:
    """Joints of the utility-maximizing solutions along increasing multipliers.

    At every path point the utility table and the mutual-information
    gradient project to proportional directions on the fixed-source tangent
    space (rowwise zero-sum), which is the supporting-hyperplane tangency
    that defines the path; on points with reduced output support the
    alignment holds within the active face (see ``tangency_residual``).
    """
    grid = np.asarray(beta_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(grid <= 0.0):
        raise ValueError("beta grid must be a non-empty sequence of positive reals")
    return [
        semidirect_product(problem.source, solve_self_consistent(problem, float(b), tol, max_iter).kernel)
        for b in grid
    ]


def contraction_path(
    problem: RateUtilityProblem, beta_grid, tol: float = 1e-12, max_iter: int = 10_000
) -> list[JointDistribution]:
    """Joints of the utility-minimizing dual, via the negated utility table."""
    return expansion_path(problem.negated(), beta_grid, tol, max_iter)


def _project_rowwise(matrix: np.ndarray) -> np.ndarray:
    """Project onto rowwise zero-sum directions (the fixed-source tangent space)."""
    return matrix - matrix.mean(axis=1, keepdims=True)


def tangency_residual(
    U: UtilityMatrix, pi: JointDistribution, orientation: int = 1, support_tol: float = 1e-9
) -> float:
    """Distance between the normalized projections of the utility table and of
    the mutual-information gradient at a path point.

    Optimal joints generically drop output columns (support reduction), so
    the alignment is evaluated on the face the point lives on: columns whose
    marginal mass is at most ``support_tol`` are treated as inactive and the
    surviving sub-table renormalized.  ``orientation=+1`` tests the
    expansion (maximization) alignment and ``-1`` the contraction one; near
    zero exactly when the joint sits on the corresponding path.
    """
    alive = pi.y_marginal.weights > support_tol
    if int(alive.sum()) < 2:
        raise ValueError("fewer than two active columns; tangency direction undefined")
    sub = pi.table[:, alive]
    sub_pi = JointDistribution(sub / sub.sum())
    u_proj = _project_rowwise(U.entries[:, alive])
    g_proj = _project_rowwise(mutual_information_gradient(sub_pi))
    u_norm = float(np.linalg.norm(u_proj))
    g_norm = float(np.linalg.norm(g_proj))
    if u_norm == 0.0 or g_norm == 0.0:
        raise ValueError("degenerate projection; tangency direction undefined")
    return float(np.linalg.norm(u_proj / u_norm - orientation * g_proj / g_norm))


def bregman_divergence_of_I(pi: JointDistribution, pi0: JointDistribution) -> float:
    """Bregman divergence generated by mutual information between two
    interior joints: I(pi) - I(pi0) - <grad I(pi0), pi - pi0>.

    Non-negative by convexity of mutual information on a fixed-source fibre.
    """
    if pi.table.shape != pi0.table.shape:
        raise ValueError("joint tables must have matching shapes")
    grad0 = mutual_information_gradient(pi0)
    if np.any(pi.table <= 0.0):
        raise ValueError("first argument must be interior")
    value = mutual_information(pi) - mutual_information(pi0)
    value -= float(np.sum(grad0 * (pi.table - pi0.table)))
    return value
