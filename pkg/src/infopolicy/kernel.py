"""Markov-kernel calculus on finite spaces.

Covers joint measures built from a source and a kernel, disintegration and
Bayes-reciprocal kernels, coarse-graining (renormalisation) of rows and
columns, mutual information and its gradient, and channel capacity.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .simplex import SUM_TOL, Distribution, _readonly


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True, eq=False)
class StochasticKernel:
    """Row-stochastic matrix: each input row is a distribution over outputs."""

    rows: np.ndarray

    def __post_init__(self):
        k = _readonly(self.rows)
        if k.ndim != 2 or k.size == 0:
            raise ValueError("kernel must be a non-empty 2-d matrix")
        if not np.all(np.isfinite(k)):
            raise ValueError("kernel entries must be finite")
        if np.any(k < 0.0):
            raise ValueError("kernel entries must be non-negative")
        sums = k.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > SUM_TOL)
        if bad.size:
            raise ValueError(f"row {int(bad[0])} sums to {sums[bad[0]]!r}, expected 1")
        object.__setattr__(self, "rows", k)

    @property
    def n_inputs(self) -> int:
        return self.rows.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.rows.shape[1]

    def row(self, i: int) -> Distribution:
        return Distribution(self.rows[i])

    @classmethod
    def identity(cls, n: int) -> StochasticKernel:
        return cls(np.eye(n))

    @classmethod
    def constant(cls, nu: Distribution, n_inputs: int) -> StochasticKernel:
        """Kernel sending every input to the same output distribution."""
        return cls(np.tile(nu.weights, (n_inputs, 1)))


@dataclass(frozen=True, eq=False)
class JointDistribution:
    """Probability table on a product space, with marginal accessors."""

    table: np.ndarray

    def __post_init__(self):
        t = _readonly(self.table)
        if t.ndim != 2 or t.size == 0:
            raise ValueError("joint table must be a non-empty 2-d matrix")
        if not np.all(np.isfinite(t)):
            raise ValueError("joint entries must be finite")
        if np.any(t < 0.0):
            raise ValueError("joint entries must be non-negative")
        total = float(t.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"joint entries sum to {total!r}, expected 1")
        object.__setattr__(self, "table", t)

    @cached_property
    def x_marginal(self) -> Distribution:
        return Distribution(self.table.sum(axis=1))

    @cached_property
    def y_marginal(self) -> Distribution:
        return Distribution(self.table.sum(axis=0))


@dataclass(frozen=True, eq=False)
class UtilityMatrix:
    """State-action utility table U(x, y) on the product of two index sets."""

    entries: np.ndarray

    def __post_init__(self):
        u = _readonly(self.entries)
        if u.ndim != 2 or u.size == 0:
            raise ValueError("utility matrix must be a non-empty 2-d matrix")
        if not np.all(np.isfinite(u)):
            raise ValueError("utility entries must be finite")
        object.__setattr__(self, "entries", u)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def negated(self) -> UtilityMatrix:
        return UtilityMatrix(-self.entries)


def _validate_index_map(f, name: str) -> np.ndarray:
    arr = np.asarray(f, dtype=int)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d index array")
    if np.any(arr < 0):
        raise ValueError(f"{name} indices must be non-negative")
    n_blocks = int(arr.max()) + 1
    present = np.zeros(n_blocks, dtype=bool)
    present[arr] = True
    if not present.all():
        missing = int(np.flatnonzero(~present)[0])
        raise ValueError(f"{name} is not surjective: block {missing} has empty preimage")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CoarseGraining:
    """Surjective relabellings of inputs (f) and outputs (g), as index arrays."""

    f: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "f", _validate_index_map(self.f, "f"))
        object.__setattr__(self, "g", _validate_index_map(self.g, "g"))

    @property
    def n_input_blocks(self) -> int:
        return int(self.f.max()) + 1

    @property
    def n_output_blocks(self) -> int:
        return int(self.g.max()) + 1

    def then(self, other: CoarseGraining) -> CoarseGraining:
        """Compose with a further coarse-graining applied to the blocks."""
        if len(other.f) != self.n_input_blocks or len(other.g) != self.n_output_blocks:
            raise ValueError("block counts do not match for composition")
        return CoarseGraining(other.f[self.f], other.g[self.g])


def semidirect_product(P: Distribution, K: StochasticKernel) -> JointDistribution:
    """Joint measure with entries p_i * K_ij; its x-marginal is P."""
    if len(P) != K.n_inputs:
        raise ValueError(f"dimension mismatch: |P|={len(P)} vs kernel rows {K.n_inputs}")
    return JointDistribution(P.weights[:, None] * K.rows)


def push_forward(K: StochasticKernel, P: Distribution) -> Distribution:
    """Output distribution sum_i p_i K_ij; the y-marginal of P joined with K."""
    if len(P) != K.n_inputs:
        raise ValueError(f"dimension mismatch: |P|={len(P)} vs kernel rows {K.n_inputs}")
    return Distribution(P.weights @ K.rows)


def disintegrate(pi: JointDistribution) -> tuple[Distribution, StochasticKernel]:
    """Factor a joint table into its x-marginal and a conditional kernel.

    Rows with zero marginal mass carry no information; they are filled with
    the y-marginal, the standard regular-conditional fallback, which keeps
    the kernel row-stochastic.
    """
    px = pi.x_marginal
    table = pi.table
    rows = np.empty_like(table)
    fallback = pi.y_marginal.weights
    for i in range(table.shape[0]):
        if px.weights[i] > 0.0:
            rows[i] = table[i] / px.weights[i]
        else:
            rows[i] = fallback
    return px, StochasticKernel(rows)


def reciprocal_kernel(mu: Distribution, K: StochasticKernel) -> StochasticKernel:
    """Bayes inverse of K relative to mu: rows are posteriors over inputs.

    Requires the pushed-forward output distribution to put mass on every
    column; a dead column has no posterior.
    """
    if len(mu) != K.n_inputs:
        raise ValueError(f"dimension mismatch: |mu|={len(mu)} vs kernel rows {K.n_inputs}")
    nu = mu.weights @ K.rows
    dead = np.flatnonzero(nu == 0.0)
    if dead.size:
        raise ValueError(f"output column {int(dead[0])} has zero mass under the push-forward")
    joint = mu.weights[:, None] * K.rows
    return StochasticKernel(joint.T / nu[:, None])


def _mi_of_table(table: np.ndarray) -> float:
    """sum t*ln(t/(t_x t_y)) with recomputed marginals; 0-entries contribute 0.

    Accepts unnormalized non-negative tables, which makes the function
    differentiable along arbitrary entry perturbations (used by the
    finite-difference checks of the gradient).
    """
    tx = table.sum(axis=1)
    ty = table.sum(axis=0)
    mask = table > 0.0
    prod = np.outer(tx, ty)
    return float(np.sum(table[mask] * np.log(table[mask] / prod[mask])))


def mutual_information(pi: JointDistribution) -> float:
    """Mutual information of a joint table: its KL divergence from the
    product of its own marginals.  Zero exactly on product measures."""
    return _mi_of_table(pi.table)


def mutual_information_gradient(pi: JointDistribution) -> np.ndarray:
    """Entrywise derivative of mutual information on the open probability cone.

    Equals ln(pi/(pi_x*pi_y)) - 1, treating all entries as free coordinates
    with marginals recomputed; validated against central finite differences
    of ``_mi_of_table``.
    """
    t = pi.table
    if np.any(t <= 0.0):
        raise ValueError("gradient requires an interior joint distribution")
    tx = t.sum(axis=1)
    ty = t.sum(axis=0)
    return np.log(t / np.outer(tx, ty)) - 1.0


def coarse_grain_distribution(P: Distribution, f, n_blocks: int | None = None) -> Distribution:
    """Push a distribution forward along an index map (block sums)."""
    f = np.asarray(f, dtype=int)
    if len(f) != len(P):
        raise ValueError("index map length must match the distribution")
    size = n_blocks if n_blocks is not None else int(f.max()) + 1
    return Distribution(np.bincount(f, weights=P.weights, minlength=size))


def coarse_grain_outputs(K: StochasticKernel, g, n_blocks: int | None = None) -> StochasticKernel:
    """Merge kernel columns along an output index map."""
    g = np.asarray(g, dtype=int)
    if len(g) != K.n_outputs:
        raise ValueError("output index map length must match kernel columns")
    size = n_blocks if n_blocks is not None else int(g.max()) + 1
    onehot = np.eye(size)[g]
    return StochasticKernel(K.rows @ onehot)


def conditional_kernel(K: StochasticKernel, P: Distribution, f) -> StochasticKernel:
    """P-weighted row aggregation of K along an input index map.

    Row mu of the result is the conditional output distribution given that
    the input fell in block mu; every block needs positive P-mass.
    """
    f = np.asarray(f, dtype=int)
    if len(f) != K.n_inputs or len(P) != K.n_inputs:
        raise ValueError("input index map and source must match kernel rows")
    size = int(f.max()) + 1
    block_mass = np.bincount(f, weights=P.weights, minlength=size)
    empty = np.flatnonzero(block_mass <= 0.0)
    if empty.size:
        raise ValueError(f"input block {int(empty[0])} has zero source mass")
    joint = P.weights[:, None] * K.rows
    rows = np.zeros((size, K.n_outputs))
    np.add.at(rows, f, joint)
    return StochasticKernel(rows / block_mass[:, None])


def coarse_grain_joint(pi: JointDistribution, f, g) -> JointDistribution:
    """Push a joint table forward along a product of index maps."""
    f = np.asarray(f, dtype=int)
    g = np.asarray(g, dtype=int)
    if len(f) != pi.table.shape[0] or len(g) != pi.table.shape[1]:
        raise ValueError("index maps must match the joint table shape")
    rows = np.eye(int(f.max()) + 1)[f]
    cols = np.eye(int(g.max()) + 1)[g]
    return JointDistribution(rows.T @ pi.table @ cols)


def coarse_grain_kernel(K: StochasticKernel, P: Distribution, cg: CoarseGraining) -> StochasticKernel:
    """Renormalised kernel between block spaces.

    Equal to the output coarse-graining of the P-conditional row aggregation;
    the joint table of the result against the aggregated source reproduces
    the aggregated original joint.
    """
    if len(cg.f) != K.n_inputs or len(cg.g) != K.n_outputs:
        raise ValueError("coarse-graining maps must match kernel dimensions")
    return coarse_grain_outputs(conditional_kernel(K, P, cg.f), cg.g, cg.n_output_blocks)


def data_processing_check(P: Distribution, K: StochasticKernel, g) -> tuple[float, float, bool]:
    """Mutual information before and after merging output symbols.

    Returns (I_before, I_after, flag) where the flag asserts that
    post-processing did not create information, up to a 1e-12 slack.
    """
    g = _validate_index_map(g, "g")
    i_before = mutual_information(semidirect_product(P, K))
    i_after = mutual_information(semidirect_product(P, coarse_grain_outputs(K, g)))
    return i_before, i_after, i_before >= i_after - 1e-12


def channel_capacity(
    K: StochasticKernel, tol: float, max_iter: int = 10_000
) -> tuple[float, Distribution]:
    """Capacity max_P I(P; K) by Blahut-Arimoto alternating maximization.

    Each sweep computes per-input exponents c_i = exp(KL(row_i, q)) for the
    current output distribution q; ln(sum p_i c_i) and ln(max c_i) bracket
    the capacity, and iteration stops once the bracket width drops below
    ``tol`` scaled by max(1, capacity).  Returns the certified lower bound
    and the input distribution achieving it.
    """
    if not tol > 0.0:
        raise ValueError("tol must be positive")
    k = K.rows
    m = K.n_inputs
    logp = np.full(m, -np.log(m))
    klogk = np.where(k > 0.0, k * np.log(np.where(k > 0.0, k, 1.0)), 0.0)
    for _ in range(max_iter):
        q = np.exp(logp) @ k
        logq = np.where(q > 0.0, np.log(np.where(q > 0.0, q, 1.0)), 0.0)
        # log c_i = sum_j k_ij ln(k_ij / q_j); k_ij > 0 forces q_j > 0 here
        logc = klogk.sum(axis=1) - k @ logq
        shifted = logp + logc
        peak = shifted.max()
        lower = peak + np.log(np.exp(shifted - peak).sum())
        upper = logc.max()
        if upper - lower < tol * max(1.0, abs(lower)):
            return float(lower), Distribution.normalized(np.exp(logp))
        logp = shifted - lower
    raise NonConvergenceError(
        f"capacity bracket still {upper - lower:.3e} wide after {max_iter} iterations",
        residual=float(upper - lower),
    )
