"""Ought sets, monoid-action utilities, and the bounded-disutility model of
rights restriction.

A policy matrix records which actions each state permits; it doubles as the
support constraint handed to the rate-utility solver.  The restriction
model maximizes net public utility against a bounded, strictly decreasing
disutility of divergence from the prior, over a face of the simplex; for
convex objectives the optimum sits at a vertex and can flip between
vertices discontinuously as the multiplier moves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .kernel import UtilityMatrix
from .simplex import Distribution, _readonly

DISUTILITY_KINDS = ("reciprocal", "exponential", "linear")

# Strictness slack for the net-benefit feasibility condition.
NET_BENEFIT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class StateSpace:
    """Finite states with a total action table and a potential over states.

    ``action_table[a, x]`` is the consequence state of taking action a in
    state x; the potential induces the change-in-utility table.
    """

    action_table: np.ndarray
    potential: np.ndarray

    def __post_init__(self):
        table = _readonly(self.action_table, dtype=int)
        pot = _readonly(self.potential)
        if table.ndim != 2 or table.size == 0:
            raise ValueError("action table must be a non-empty 2-d matrix")
        if pot.ndim != 1 or pot.size != table.shape[1]:
            raise ValueError("potential must be a 1-d sequence over the states")
        if not np.all(np.isfinite(pot)):
            raise ValueError("potential values must be finite")
        if np.any(table < 0) or np.any(table >= table.shape[1]):
            raise ValueError("action table entries must be valid state indices")
        object.__setattr__(self, "action_table", table)
        object.__setattr__(self, "potential", pot)

    @property
    def n_states(self) -> int:
        return self.action_table.shape[1]

    @property
    def n_actions(self) -> int:
        return self.action_table.shape[0]

    def consequence(self, action: int, state: int) -> int:
        return int(self.action_table[action, state])


def derive_utility_matrix(space: StateSpace) -> UtilityMatrix:
    """Change-in-potential table U(x, a) = u(a.x) - u(x).

    Actions sharing a consequence state share the entry.
    """
    after = space.potential[space.action_table]  # (n_actions, n_states)
    return UtilityMatrix((after - space.potential[None, :]).T)


@dataclass(frozen=True, eq=False)
class PolicyMatrix:
    """Boolean ought sets per state; rows must be nonempty unless the matrix
    explicitly allows partial rows (e.g. after a restriction)."""

    mask: np.ndarray
    allow_empty: bool = False

    def __post_init__(self):
        mask = _readonly(self.mask, dtype=bool)
        if mask.ndim != 2 or mask.size == 0:
            raise ValueError("policy mask must be a non-empty 2-d matrix")
        if not self.allow_empty and not mask.any(axis=1).all():
            bad = int(np.flatnonzero(~mask.any(axis=1))[0])
            raise ValueError(f"state {bad} has an empty ought set")
        object.__setattr__(self, "mask", mask)

    def ought_set(self, state: int) -> tuple[int, ...]:
        return tuple(int(a) for a in np.flatnonzero(self.mask[state]))


def select_restriction(policy: PolicyMatrix, predicate, require_nonempty: bool = False) -> PolicyMatrix:
    """Restrict the ought sets to the entries satisfying a predicate.

    The predicate is either a boolean matrix of the same shape or a callable
    of (state, action).  With ``require_nonempty`` an emptied row is an
    error; otherwise the result may carry empty rows.
    """
    if callable(predicate):
        n_states, n_actions = policy.mask.shape
        keep = np.array(
            [[bool(predicate(x, a)) for a in range(n_actions)] for x in range(n_states)]
        )
    else:
        keep = np.asarray(predicate, dtype=bool)
        if keep.shape != policy.mask.shape:
            raise ValueError("predicate matrix shape must match the policy mask")
    restricted = policy.mask & keep
    if require_nonempty and not restricted.any(axis=1).all():
        bad = int(np.flatnonzero(~restricted.any(axis=1))[0])
        raise ValueError(f"restriction empties the ought set of state {bad}")
    return PolicyMatrix(restricted, allow_empty=not require_nonempty)


def legality_check(space: StateSpace, legal_states, x: int, a: int, ought: PolicyMatrix | None = None) -> bool:
    """Whether action a in state x leads into the legal set without losing
    potential.  If an ought matrix is given the action must be admissible."""
    if not 0 <= x < space.n_states:
        raise ValueError(f"state {x} out of range")
    if not 0 <= a < space.n_actions:
        raise ValueError(f"action {a} out of range")
    if ought is not None and not ought.mask[x, a]:
        raise ValueError(f"action {a} is not admissible in state {x}")
    target = space.consequence(a, x)
    legal = set(int(s) for s in legal_states)
    return target in legal and space.potential[target] >= space.potential[x]


@dataclass(frozen=True)
class DisutilitySpec:
    """A strictly decreasing convex penalty of divergence from the prior.

    Kinds: ``reciprocal`` (1/d), ``exponential`` (exp(-d)), and ``linear``
    (d_max - d, clamped at zero).  The divergence d is KL to the prior.
    """

    kind: str
    d_max: float | None = None
    divergence: str = "kl"

    def __post_init__(self):
        if self.kind not in DISUTILITY_KINDS:
            raise ValueError(f"unknown disutility kind {self.kind!r}")
        if self.divergence != "kl":
            raise ValueError("only the KL divergence to the prior is supported")
        if self.kind == "linear":
            if self.d_max is None or not self.d_max > 0.0:
                raise ValueError("linear disutility requires a positive d_max")


def disutility(spec: DisutilitySpec, d: float) -> float:
    """Evaluate the penalty at divergence d >= 0.

    The reciprocal kind returns +inf at d = 0.
    """
    if d < 0.0:
        raise ValueError("divergence must be non-negative")
    if spec.kind == "reciprocal":
        return math.inf if d == 0.0 else 1.0 / d
    if spec.kind == "exponential":
        return math.exp(-d)
    return max(spec.d_max - d, 0.0)


@dataclass(frozen=True, eq=False)
class RestrictionScenario:
    """A restriction problem: interior prior over the full ought set, the
    face of restricted rights, their non-negative public utilities, and the
    multiplier.  A protected set, when given, must avoid the face."""

    prior: Distribution
    face: tuple[int, ...]
    utilities: np.ndarray
    beta: float
    protected: frozenset[int] | None = None

    def __post_init__(self):
        if not self.prior.is_interior:
            raise ValueError("prior must have full support")
        face = tuple(int(j) for j in self.face)
        if not face:
            raise ValueError("face must be nonempty")
        if len(set(face)) != len(face):
            raise ValueError("face indices must be distinct")
        if min(face) < 0 or max(face) >= len(self.prior):
            raise ValueError("face indices out of range")
        u = _readonly(self.utilities)
        if u.shape != (len(face),):
            raise ValueError("utilities must match the face length")
        if not np.all(np.isfinite(u)) or np.any(u < 0.0):
            raise ValueError("utilities must be finite and non-negative")
        if not self.beta > 0.0:
            raise ValueError("beta must be positive")
        if self.protected is not None:
            overlap = set(face) & set(self.protected)
            if overlap:
                raise ValueError(f"protected rights {sorted(overlap)} cannot be restricted")
        object.__setattr__(self, "face", face)
        object.__setattr__(self, "utilities", u)


@dataclass(frozen=True)
class NoSolution:
    """Marker value: the net-benefit condition fails for every candidate."""


@dataclass(frozen=True, eq=False)
class ProportionalityDiagnostics:
    """How the optimum was found and how the candidates scored."""

    method: str  # "vertex" or "grid"
    convex: bool
    vertex_values: np.ndarray  # objective at each face vertex, face order
    winner_face_position: int
    winner_vertex: int  # absolute index into the prior's outcome set
    objective: float
    feasible: bool
    d_min: float
    d_star: float


@dataclass(frozen=True, eq=False)
class ScanRecord:
    """One multiplier sample of a scan: winning vertex, objective, feasibility."""

    beta: float
    winner_vertex: int
    objective: float
    feasible: bool


def face_divergence(scenario: RestrictionScenario, p_face) -> float:
    """KL divergence from the prior of a face point (embedded with zeros)."""
    p = np.asarray(p_face, dtype=float)
    q = scenario.prior.weights[list(scenario.face)]
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def face_divergence_bounds(scenario: RestrictionScenario) -> tuple[float, float, float]:
    """(d_min, d_star, d_max) of the divergence restricted to the face.

    d_min is attained by the prior conditioned on the face, d_star by the
    farthest vertex, and d_max = -ln(min prior weight) is the simplex-wide
    maximum, whose minimizing index is required to lie off the face.
    """
    q = scenario.prior.weights
    i_min = int(np.argmin(q))
    if i_min in scenario.face:
        raise ValueError(
            f"outcome {i_min} carries the smallest prior weight but lies on the face; "
            "the bounded-divergence setup requires the face to avoid it"
        )
    d_min = float(-np.log(q[list(scenario.face)].sum()))
    d_star = float(max(-np.log(q[j]) for j in scenario.face))
    d_max = float(-np.log(q[i_min]))
    return d_min, d_star, d_max


def net_benefit(scenario: RestrictionScenario, spec: DisutilitySpec, p_face) -> float:
    """Objective E_p[U] - D(d(p, prior))/beta on a face point."""
    p = np.asarray(p_face, dtype=float)
    expected = float(p @ scenario.utilities)
    cost = disutility(spec, face_divergence(scenario, p))
    if math.isinf(scenario.beta):
        return expected if math.isfinite(cost) else -math.inf
    return expected - cost / scenario.beta


def _vertex_objectives(scenario: RestrictionScenario, spec: DisutilitySpec) -> np.ndarray:
    q = scenario.prior.weights
    values = np.empty(len(scenario.face))
    for pos, j in enumerate(scenario.face):
        cost = disutility(spec, float(-np.log(q[j])))
        if math.isinf(scenario.beta):
            values[pos] = scenario.utilities[pos] if math.isfinite(cost) else -math.inf
        else:
            values[pos] = scenario.utilities[pos] - cost / scenario.beta
    return values


def _simplex_grid(n_vertices: int, target_points: int = 200_000) -> np.ndarray:
    """Barycentric grid over a simplex, resolution adapted to dimension."""
    if n_vertices == 1:
        return np.ones((1, 1))
    steps = 1000
    while math.comb(steps + n_vertices - 1, n_vertices - 1) > target_points and steps > 8:
        steps //= 2
    ticks = np.arange(steps + 1)
    if n_vertices == 2:
        a = ticks[::-1] / steps
        return np.stack([a, 1.0 - a], axis=1)
    points = list(_compositions(steps, n_vertices))
    return np.asarray(points, dtype=float) / steps


def _compositions(total: int, parts: int):
    # descending head first so grid ties resolve toward low vertex indices
    if parts == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for rest in _compositions(total - head, parts - 1):
            yield (head, *rest)


def _convexity_probe(scenario: RestrictionScenario, spec: DisutilitySpec, n_pairs: int = 32) -> bool:
    """Midpoint test of convexity of the objective on the face (seeded)."""
    rng = np.random.default_rng(0)
    m = len(scenario.face)
    for _ in range(n_pairs):
        p1 = rng.dirichlet(np.ones(m))
        p2 = rng.dirichlet(np.ones(m))
        f1 = net_benefit(scenario, spec, p1)
        f2 = net_benefit(scenario, spec, p2)
        fm = net_benefit(scenario, spec, 0.5 * (p1 + p2))
        if fm > 0.5 * (f1 + f2) + 1e-9:
            return False
    return True


def proportionality_optimize(
    scenario: RestrictionScenario, spec: DisutilitySpec
) -> tuple[Distribution | NoSolution, ProportionalityDiagnostics]:
    """Maximize net public utility over the face and test the net-benefit bar.

    Convexity of the objective is probed numerically; when it holds the
    maximum lies at a vertex and vertex enumeration suffices (ties resolved
    to the lowest index), otherwise a dense barycentric grid is scanned.
    A maximizer with non-positive net benefit means the restriction is not
    justified at this multiplier, reported as ``NoSolution``.
    """
    q = scenario.prior.weights
    d_min = float(-np.log(q[list(scenario.face)].sum()))
    d_star = float(max(-np.log(q[j]) for j in scenario.face))
    if spec.kind == "linear":
        _, _, d_max = face_divergence_bounds(scenario)
        if not d_star < d_max:
            raise ValueError("face vertex reaches the global divergence bound; disutility not bounded below")

    vertex_values = _vertex_objectives(scenario, spec)
    convex = _convexity_probe(scenario, spec)
    if convex:
        method = "vertex"
        pos = int(np.argmax(vertex_values))
        best_face_point = np.zeros(len(scenario.face))
        best_face_point[pos] = 1.0
        objective = float(vertex_values[pos])
    else:
        method = "grid"
        grid = _simplex_grid(len(scenario.face))
        values = np.array([net_benefit(scenario, spec, p) for p in grid])
        idx = int(np.argmax(values))
        best_face_point = grid[idx]
        objective = float(values[idx])
        pos = int(np.argmax(best_face_point))

    winner_vertex = scenario.face[pos]
    feasible = objective > NET_BENEFIT_TOL
    embedded = np.zeros(len(scenario.prior))
    embedded[list(scenario.face)] = best_face_point
    diagnostics = ProportionalityDiagnostics(
        method=method,
        convex=convex,
        vertex_values=vertex_values,
        winner_face_position=pos,
        winner_vertex=winner_vertex,
        objective=objective,
        feasible=feasible,
        d_min=d_min,
        d_star=d_star,
    )
    result = Distribution(embedded) if feasible else NoSolution()
    return result, diagnostics


def critical_beta_scan(
    scenario: RestrictionScenario, spec: DisutilitySpec, beta_grid
) -> list[ScanRecord]:
    """Winner and feasibility per multiplier over a sorted positive grid.

    Adjacent records with different winners bracket a sign change of the
    difference of the two vertex objectives; refine with ``refine_switch``.
    """
    grid = np.asarray(beta_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("beta grid must be a non-empty 1-d sequence")
    if np.any(grid <= 0.0):
        raise ValueError("beta grid must be strictly positive")
    if np.any(np.diff(grid) < 0.0):
        raise ValueError("beta grid must be sorted ascending")
    records = []
    for beta in grid:
        _, diag = proportionality_optimize(replace(scenario, beta=float(beta)), spec)
        records.append(
            ScanRecord(
                beta=float(beta),
                winner_vertex=diag.winner_vertex,
                objective=diag.objective,
                feasible=diag.feasible,
            )
        )
    return records


def vertex_switches(records: list[ScanRecord]) -> list[tuple[float, float]]:
    """Multiplier brackets where the winning vertex changes between samples."""
    return [
        (records[i].beta, records[i + 1].beta)
        for i in range(len(records) - 1)
        if records[i].winner_vertex != records[i + 1].winner_vertex
    ]


def refine_switch(
    scenario: RestrictionScenario,
    spec: DisutilitySpec,
    beta_lo: float,
    beta_hi: float,
    tol: float = 1e-12,
) -> float:
    """Bisect a winner-change bracket down to the crossing multiplier."""

    def winner(beta: float) -> int:
        _, diag = proportionality_optimize(replace(scenario, beta=beta), spec)
        return diag.winner_vertex

    w_lo = winner(beta_lo)
    if winner(beta_hi) == w_lo:
        raise ValueError("bracket endpoints share the same winner")
    while beta_hi - beta_lo > tol * max(1.0, beta_hi):
        mid = 0.5 * (beta_lo + beta_hi)
        if winner(mid) == w_lo:
            beta_lo = mid
        else:
            beta_hi = mid
    return 0.5 * (beta_lo + beta_hi)


def feasibility_onset(scenario: RestrictionScenario, spec: DisutilitySpec) -> float:
    """Smallest multiplier at which some vertex clears the net-benefit bar.

    Solves objective = 0 per vertex (the penalty at a vertex does not depend
    on the multiplier) and takes the minimum; +inf when no vertex has
    positive utility.  Exact whenever the maximum is attained at a vertex.
    """
    q = scenario.prior.weights
    onset = math.inf
    for pos, j in enumerate(scenario.face):
        u = float(scenario.utilities[pos])
        if u <= 0.0:
            continue
        cost = disutility(spec, float(-np.log(q[j])))
        onset = min(onset, cost / u)
    return onset
