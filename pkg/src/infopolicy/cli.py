"""Scenario driver: validates JSON scenario files, runs parameter sweeps, and
emits curve/table data as CSV or JSON.

Scenario files are JSON objects with a version and a kind discriminator::

    {"schema": 1, "kind": "gibbs", "payload": {...}}

Kinds: gibbs, rate_utility, geodesic, coarse_grain, capacity, legal.
Grids are either explicit arrays or ``{"start", "stop", "count", "scale"}``
with scale ``linear`` or ``log``.  Output is deterministic: identical input
files produce identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import deontic, gibbs, kernel, rate_utility, simplex

SCHEMA_VERSION = 1
KINDS = ("gibbs", "rate_utility", "geodesic", "coarse_grain", "capacity", "legal")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_SOLVER = 2


@dataclass(frozen=True)
class Scenario:
    """A parsed scenario file: version, kind discriminator, raw payload."""

    schema: int
    kind: str
    payload: dict


@dataclass
class CurveOutput:
    """Named, equal-length output columns plus run metadata."""

    columns: dict
    metadata: dict

    def __post_init__(self):
        lengths = {name: len(col) for name, col in self.columns.items()}
        if len(set(lengths.values())) > 1:
            raise ValueError(f"columns have unequal lengths: {lengths}")


class ScenarioError(ValueError):
    """Scenario file failed validation; carries per-field messages."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# ----------------------------------------------------------------------
# validation helpers (each appends "path: message" strings to errors)
# ----------------------------------------------------------------------

def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _get_distribution(payload, key, errors, path, interior=False):
    value = payload.get(key)
    if not isinstance(value, list) or not value or not all(_is_num(v) for v in value):
        errors.append(f"{path}.{key}: expected a non-empty array of finite numbers")
        return None
    arr = np.asarray(value, dtype=float)
    if np.any(arr < 0.0):
        errors.append(f"{path}.{key}: weights must be non-negative")
        return None
    total = float(arr.sum())
    if abs(total - 1.0) > simplex.SUM_TOL:
        errors.append(f"{path}.{key}: weights sum to {total!r}, expected 1")
        return None
    if interior and np.any(arr <= simplex.SUPPORT_TOL):
        errors.append(f"{path}.{key}: weights must all be positive (interior point)")
        return None
    return simplex.Distribution(arr)


def _get_matrix(payload, key, errors, path, stochastic=False, n_rows=None):
    value = payload.get(key)
    ok = (
        isinstance(value, list)
        and value
        and all(isinstance(row, list) and row and all(_is_num(v) for v in row) for row in value)
        and len({len(row) for row in value}) == 1
    )
    if not ok:
        errors.append(f"{path}.{key}: expected a non-empty rectangular matrix of finite numbers")
        return None
    arr = np.asarray(value, dtype=float)
    if n_rows is not None and arr.shape[0] != n_rows:
        errors.append(f"{path}.{key}: expected {n_rows} rows, got {arr.shape[0]}")
        return None
    if stochastic:
        if np.any(arr < 0.0):
            errors.append(f"{path}.{key}: kernel entries must be non-negative")
            return None
        sums = arr.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > simplex.SUM_TOL)
        if bad.size:
            errors.append(f"{path}.{key}[{int(bad[0])}]: row sums to {sums[bad[0]]!r}, expected 1")
            return None
    return arr


def _get_grid(payload, key, errors, path, minimum=None, require_sorted=True):
    value = payload.get(key)
    if isinstance(value, list):
        if not value or not all(_is_num(v) for v in value):
            errors.append(f"{path}.{key}: expected numbers")
            return None
        arr = np.asarray(value, dtype=float)
    elif isinstance(value, dict):
        missing = [f for f in ("start", "stop", "count") if f not in value]
        if missing:
            errors.append(f"{path}.{key}: grid spec missing fields {missing}")
            return None
        start, stop, count = value["start"], value["stop"], value["count"]
        scale = value.get("scale", "linear")
        if not (_is_num(start) and _is_num(stop) and isinstance(count, int) and count >= 1):
            errors.append(f"{path}.{key}: start/stop must be numbers and count a positive integer")
            return None
        if scale not in ("linear", "log"):
            errors.append(f"{path}.{key}.scale: expected 'linear' or 'log', got {scale!r}")
            return None
        if scale == "log":
            if start <= 0.0 or stop <= 0.0:
                errors.append(f"{path}.{key}: log scale requires positive start and stop")
                return None
            arr = np.logspace(math.log10(start), math.log10(stop), count)
        else:
            arr = np.linspace(start, stop, count)
    else:
        errors.append(f"{path}.{key}: expected an array or a start/stop/count grid spec")
        return None
    if minimum is not None and np.any(arr < minimum):
        errors.append(f"{path}.{key}: values must be >= {minimum}")
        return None
    if require_sorted and np.any(np.diff(arr) < 0.0):
        errors.append(f"{path}.{key}: grid must be sorted ascending")
        return None
    return arr


def _get_index_map(payload, key, errors, path, length):
    value = payload.get(key)
    if not isinstance(value, list) or len(value) != length or not all(
        isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in value
    ):
        errors.append(f"{path}.{key}: expected {length} non-negative integer indices")
        return None
    arr = np.asarray(value, dtype=int)
    n_blocks = int(arr.max()) + 1
    present = np.zeros(n_blocks, dtype=bool)
    present[arr] = True
    if not present.all():
        missing = int(np.flatnonzero(~present)[0])
        errors.append(f"{path}.{key}: not surjective, block {missing} has empty preimage")
        return None
    return arr


# ----------------------------------------------------------------------
# per-kind validation
# ----------------------------------------------------------------------

def _validate_gibbs(payload, errors):
    prior = _get_distribution(payload, "prior", errors, "payload", interior=True)
    grid = _get_grid(payload, "beta_grid", errors, "payload")
    utilities = payload.get("utilities")
    if not isinstance(utilities, list) or not all(_is_num(v) for v in utilities):
        errors.append("payload.utilities: expected an array of finite numbers")
        utilities = None
    elif prior is not None and len(utilities) != len(prior):
        errors.append(f"payload.utilities: expected length {len(prior)}, got {len(utilities)}")
        utilities = None
    if grid is not None and np.any(grid < 0.0):
        errors.append("payload.beta_grid: beta must be >= 0 for the multiplier problem")
        grid = None
    return {"prior": prior, "utilities": None if utilities is None else np.asarray(utilities, float), "beta_grid": grid}


def _validate_rate_utility(payload, errors):
    source = _get_distribution(payload, "source", errors, "payload", interior=True)
    u = _get_matrix(payload, "utilities", errors, "payload", n_rows=None if source is None else len(source))
    has_beta = "beta_grid" in payload
    has_rate = "rate_grid" in payload
    grid = None
    if has_beta == has_rate:
        errors.append("payload: exactly one of beta_grid or rate_grid is required")
    else:
        key = "beta_grid" if has_beta else "rate_grid"
        grid = _get_grid(payload, key, errors, "payload", minimum=0.0)
    mask = None
    if "support_mask" in payload:
        raw = payload["support_mask"]
        ok = (
            isinstance(raw, list)
            and raw
            and all(isinstance(row, list) and all(isinstance(v, bool) for v in row) for row in raw)
            and len({len(row) for row in raw}) == 1
        )
        if not ok:
            errors.append("payload.support_mask: expected a rectangular matrix of booleans")
        else:
            mask = np.asarray(raw, dtype=bool)
            if u is not None and mask.shape != u.shape:
                errors.append("payload.support_mask: shape must match payload.utilities")
                mask = None
            elif not mask.any(axis=1).all():
                bad = int(np.flatnonzero(~mask.any(axis=1))[0])
                errors.append(f"payload.support_mask[{bad}]: row admits no action")
                mask = None
    tol = payload.get("tol", 1e-12)
    if not (_is_num(tol) and tol > 0.0):
        errors.append("payload.tol: expected a positive number")
        tol = None
    return {
        "source": source,
        "utilities": u,
        "grid": grid,
        "grid_is_beta": has_beta,
        "support_mask": mask,
        "tol": tol,
    }


def _validate_geodesic(payload, errors):
    prior = _get_distribution(payload, "prior", errors, "payload", interior=True)
    utilities = payload.get("utilities")
    if not isinstance(utilities, list) or not all(_is_num(v) for v in utilities):
        errors.append("payload.utilities: expected an array of finite numbers")
        utilities = None
    elif prior is not None and len(utilities) != len(prior):
        errors.append(f"payload.utilities: expected length {len(prior)}, got {len(utilities)}")
        utilities = None
    grid = _get_grid(payload, "t_grid", errors, "payload")
    return {"prior": prior, "utilities": None if utilities is None else np.asarray(utilities, float), "t_grid": grid}


def _validate_coarse_grain(payload, errors):
    P = _get_distribution(payload, "source", errors, "payload", interior=True)
    K = _get_matrix(payload, "kernel", errors, "payload", stochastic=True, n_rows=None if P is None else len(P))
    f = g = None
    if K is not None:
        f = _get_index_map(payload, "f", errors, "payload", K.shape[0])
        g = _get_index_map(payload, "g", errors, "payload", K.shape[1])
    return {"source": P, "kernel": K, "f": f, "g": g}


def _validate_capacity(payload, errors):
    K = _get_matrix(payload, "kernel", errors, "payload", stochastic=True)
    tol = payload.get("tol", 1e-10)
    if not (_is_num(tol) and tol > 0.0):
        errors.append("payload.tol: expected a positive number")
        tol = None
    return {"kernel": K, "tol": tol}


def _validate_legal(payload, errors):
    prior = _get_distribution(payload, "prior", errors, "payload", interior=True)
    face = payload.get("face")
    if not isinstance(face, list) or not face or not all(
        isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in face
    ):
        errors.append("payload.face: expected a non-empty array of non-negative integers")
        face = None
    elif prior is not None and (max(face) >= len(prior) or len(set(face)) != len(face)):
        errors.append("payload.face: indices must be distinct and within the prior's range")
        face = None
    utilities = payload.get("utilities")
    if not isinstance(utilities, list) or not all(_is_num(v) and v >= 0 for v in utilities):
        errors.append("payload.utilities: expected an array of non-negative finite numbers")
        utilities = None
    elif face is not None and len(utilities) != len(face):
        errors.append(f"payload.utilities: expected length {len(face)}, got {len(utilities)}")
        utilities = None
    spec_raw = payload.get("disutility")
    spec = None
    if not isinstance(spec_raw, dict) or spec_raw.get("kind") not in deontic.DISUTILITY_KINDS:
        errors.append(f"payload.disutility.kind: expected one of {list(deontic.DISUTILITY_KINDS)}")
    else:
        d_max = spec_raw.get("d_max")
        if spec_raw["kind"] == "linear" and not (_is_num(d_max) and d_max > 0.0):
            errors.append("payload.disutility.d_max: linear disutility requires a positive d_max")
        else:
            spec = deontic.DisutilitySpec(kind=spec_raw["kind"], d_max=d_max)
    grid = _get_grid(payload, "inv_beta_grid", errors, "payload", minimum=0.0)
    return {"prior": prior, "face": face, "utilities": utilities, "spec": spec, "inv_beta_grid": grid}


_VALIDATORS = {
    "gibbs": _validate_gibbs,
    "rate_utility": _validate_rate_utility,
    "geodesic": _validate_geodesic,
    "coarse_grain": _validate_coarse_grain,
    "capacity": _validate_capacity,
    "legal": _validate_legal,
}


def load_scenario(path) -> tuple[Scenario, dict]:
    """Parse and validate a scenario file; raises ScenarioError on problems."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ScenarioError([f"{path}: cannot read file ({exc})"]) from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: invalid JSON ({exc})"]) from exc
    errors: list[str] = []
    if not isinstance(raw, dict):
        raise ScenarioError([f"{path}: top level must be an object"])
    schema = raw.get("schema")
    if schema != SCHEMA_VERSION:
        errors.append(f"schema: expected {SCHEMA_VERSION}, got {schema!r}")
    kind = raw.get("kind")
    if kind not in KINDS:
        errors.append(f"kind: expected one of {list(KINDS)}, got {kind!r}")
        raise ScenarioError(errors)
    payload = raw.get("payload")
    if not isinstance(payload, dict):
        errors.append("payload: expected an object")
        raise ScenarioError(errors)
    parsed = _VALIDATORS[kind](payload, errors)
    if errors:
        raise ScenarioError(errors)
    return Scenario(schema=SCHEMA_VERSION, kind=kind, payload=raw["payload"]), parsed


def validate_scenario(path) -> list[str]:
    """Validation report for a scenario file: empty list means valid."""
    try:
        load_scenario(path)
    except ScenarioError as exc:
        return exc.errors
    return []


# ----------------------------------------------------------------------
# per-point workers (module level so a process pool can pickle them)
# ----------------------------------------------------------------------

def _gibbs_point(task):
    utilities, prior_w, beta = task
    problem = gibbs.GibbsProblem(utilities, simplex.Distribution(prior_w), beta)
    sol = gibbs.gibbs_policy(problem)
    return (
        beta,
        sol.log_partition,
        sol.free_energy,
        sol.expected_utility,
        sol.utility_variance,
        sol.kl_cost,
        tuple(float(v) for v in sol.policy.weights),
    )


def _rate_point(task):
    source_w, entries, mask, value, grid_is_beta, tol = task
    problem = rate_utility.RateUtilityProblem(
        simplex.Distribution(source_w), kernel.UtilityMatrix(entries), mask
    )
    if grid_is_beta:
        if value == 0.0 and mask is None:
            point = rate_utility.zero_rate_point(problem)
        else:
            point = rate_utility.solve_self_consistent(problem, value, tol=tol, strict=False)
    else:
        point = rate_utility.solve_at_rate(problem, value, tol=tol)
    return (point.beta, point.rate, point.utility, point.residual, point.converged)


def _geodesic_point(task):
    utilities, prior_w, t = task
    prior = simplex.Distribution(prior_w)
    point = gibbs.solution_geodesic(utilities, prior, [t])[0]
    return (t, simplex.kl_divergence(point, prior), tuple(float(v) for v in point.weights))


def _legal_point(task):
    prior_w, face, utilities, kind, d_max, inv_beta = task
    beta = math.inf if inv_beta == 0.0 else 1.0 / inv_beta
    scenario = deontic.RestrictionScenario(
        simplex.Distribution(prior_w), tuple(face), np.asarray(utilities, float), beta
    )
    spec = deontic.DisutilitySpec(kind=kind, d_max=d_max)
    _, diag = deontic.proportionality_optimize(scenario, spec)
    return (inv_beta, tuple(float(v) for v in diag.vertex_values), diag.winner_vertex, diag.feasible)


def _map_points(worker, tasks, jobs: int):
    tasks = list(tasks)
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks))


# ----------------------------------------------------------------------
# per-kind runners
# ----------------------------------------------------------------------

def _run_gibbs(parsed, jobs, metadata):
    prior = parsed["prior"]
    tasks = [(parsed["utilities"], prior.weights, float(b)) for b in parsed["beta_grid"]]
    rows = _map_points(_gibbs_point, tasks, jobs)
    columns = {
        "beta": [r[0] for r in rows],
        "lnZ": [r[1] for r in rows],
        "free_energy": [r[2] for r in rows],
        "expected_utility": [r[3] for r in rows],
        "variance": [r[4] for r in rows],
        "kl_cost": [r[5] for r in rows],
    }
    for i in range(len(prior)):
        columns[f"policy_{i}"] = [r[6][i] for r in rows]
    return columns


def _run_rate_utility(parsed, jobs, metadata):
    tol = parsed["tol"]
    tasks = [
        (
            parsed["source"].weights,
            parsed["utilities"],
            parsed["support_mask"],
            float(v),
            parsed["grid_is_beta"],
            tol,
        )
        for v in parsed["grid"]
    ]
    rows = _map_points(_rate_point, tasks, jobs)
    betas = [r[0] for r in rows]
    rates = [r[1] for r in rows]
    utils = [r[2] for r in rows]
    slopes: list[float | None] = []
    for i in range(len(rows)):
        if i + 1 < len(rows) and rates[i + 1] != rates[i]:
            slopes.append((utils[i + 1] - utils[i]) / (rates[i + 1] - rates[i]))
        else:
            slopes.append(None)
    metadata["residuals"] = [r[3] for r in rows]
    metadata["solver"] = {"tol": tol, "max_iter": 10_000, "damping": "halve-on-residual-increase"}
    unconverged = [i for i, r in enumerate(rows) if not r[4]]
    if unconverged:
        metadata["warnings"].append(f"unconverged points at grid indices {unconverged}")
    return {"beta": betas, "R": rates, "U_bar": utils, "slope_check": slopes}


def _run_geodesic(parsed, jobs, metadata):
    prior = parsed["prior"]
    tasks = [(parsed["utilities"], prior.weights, float(t)) for t in parsed["t_grid"]]
    rows = _map_points(_geodesic_point, tasks, jobs)
    columns = {"t": [r[0] for r in rows], "kl_to_prior": [r[1] for r in rows]}
    for i in range(len(prior)):
        columns[f"p_{i}"] = [r[2][i] for r in rows]
    return columns


def _run_coarse_grain(parsed, jobs, metadata):
    P = parsed["source"]
    K = kernel.StochasticKernel(parsed["kernel"])
    cg = kernel.CoarseGraining(parsed["f"], parsed["g"])
    coarse = kernel.coarse_grain_kernel(K, P, cg)
    i_before, i_after, ok = kernel.data_processing_check(P, K, parsed["g"])
    metadata["I_before"] = i_before
    metadata["I_after_output_merge"] = i_after
    metadata["data_processing_ok"] = ok
    columns = {"row": list(range(coarse.n_inputs))}
    for j in range(coarse.n_outputs):
        columns[f"k_{j}"] = [float(v) for v in coarse.rows[:, j]]
    return columns


def _run_capacity(parsed, jobs, metadata):
    K = kernel.StochasticKernel(parsed["kernel"])
    capacity, argmax = kernel.channel_capacity(K, tol=parsed["tol"])
    metadata["tol"] = parsed["tol"]
    columns = {"capacity": [capacity]}
    for i, v in enumerate(argmax.weights):
        columns[f"p_{i}"] = [float(v)]
    return columns


def _run_legal(parsed, jobs, metadata):
    spec_kind = parsed["spec"].kind
    d_max = parsed["spec"].d_max
    face = parsed["face"]
    tasks = [
        (parsed["prior"].weights, face, parsed["utilities"], spec_kind, d_max, float(t))
        for t in parsed["inv_beta_grid"]
    ]
    rows = _map_points(_legal_point, tasks, jobs)
    columns = {"inv_beta": [r[0] for r in rows]}
    for pos in range(len(face)):
        columns[f"F_vertex_{pos}"] = [r[1][pos] for r in rows]
    winners = [r[2] for r in rows]
    columns["winner"] = winners
    columns["feasible"] = [int(r[3]) for r in rows]
    columns["switch"] = [0] + [int(winners[i] != winners[i - 1]) for i in range(1, len(winners))]

    positive = [t for t in parsed["inv_beta_grid"] if t > 0.0]
    scenario = deontic.RestrictionScenario(
        parsed["prior"], tuple(face), np.asarray(parsed["utilities"], float), 1.0
    )
    spec = deontic.DisutilitySpec(kind=spec_kind, d_max=d_max)
    metadata["feasibility_onset_beta"] = deontic.feasibility_onset(scenario, spec)
    switches = []
    if positive:
        betas = sorted(1.0 / t for t in positive)
        records = deontic.critical_beta_scan(scenario, spec, betas)
        for lo, hi in deontic.vertex_switches(records):
            beta_star = deontic.refine_switch(scenario, spec, lo, hi)
            switches.append({"beta": beta_star, "inv_beta": 1.0 / beta_star})
    metadata["vertex_switches"] = switches
    return columns


_RUNNERS = {
    "gibbs": _run_gibbs,
    "rate_utility": _run_rate_utility,
    "geodesic": _run_geodesic,
    "coarse_grain": _run_coarse_grain,
    "capacity": _run_capacity,
    "legal": _run_legal,
}


# ----------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------

def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))  # shortest round-trip decimal


def _write_csv(output: CurveOutput, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")  # RFC 4180 quoting
    names = list(output.columns)
    writer.writerow(names)
    n = len(output.columns[names[0]]) if names else 0
    for i in range(n):
        writer.writerow([_format_cell(output.columns[name][i]) for name in names])


def _write_json(output: CurveOutput, stream) -> None:
    json.dump({"columns": output.columns, "metadata": output.metadata}, stream, indent=2)
    stream.write("\n")


def run_scenario(path, fmt: str = "csv", out=None, jobs: int = 1, tol=None, seed=None) -> int:
    """Execute a scenario file and write its output; returns an exit status.

    0 on success, 1 on validation failure, 2 on solver non-convergence.
    Diagnostics go to stderr with the offending field path.
    """
    try:
        scenario, parsed = load_scenario(path)
    except ScenarioError as exc:
        for message in exc.errors:
            print(f"error: {message}", file=sys.stderr)
        return EXIT_INVALID
    if tol is not None and "tol" in parsed:
        parsed["tol"] = tol
    metadata = {
        "schema": SCHEMA_VERSION,
        "kind": scenario.kind,
        "scenario": {"schema": SCHEMA_VERSION, "kind": scenario.kind, "payload": scenario.payload},
        "tie_break": "lowest-index",
        "seed": seed,
        "warnings": [],
    }
    if tol is not None:
        metadata["tol_override"] = tol
    try:
        columns = _RUNNERS[scenario.kind](parsed, jobs, metadata)
    except kernel.NonConvergenceError as exc:
        print(f"error: solver failed to converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    output = CurveOutput(columns=columns, metadata=metadata)

    buffer = io.StringIO()
    if fmt == "json":
        _write_json(output, buffer)
    else:
        _write_csv(output, buffer)
    text = buffer.getvalue()
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="infopolicy",
        description="Run or validate bounded-rationality scenario files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a scenario and emit curve data")
    run_p.add_argument("scenario", help="path to a scenario JSON file")
    run_p.add_argument("--format", choices=("csv", "json"), default="csv")
    run_p.add_argument("--out", default=None, help="output path (default: stdout)")
    run_p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes for sweep points")
    run_p.add_argument("--tol", type=float, default=None, help="override the solver tolerance")
    run_p.add_argument("--seed", type=int, default=None, help="seed recorded for randomized scenarios")

    val_p = sub.add_parser("validate", help="check a scenario file against its schema")
    val_p.add_argument("scenario", help="path to a scenario JSON file")

    args = parser.parse_args(argv)
    if args.command == "validate":
        report = validate_scenario(args.scenario)
        for message in report:
            print(f"error: {message}", file=sys.stderr)
        return EXIT_OK if not report else EXIT_INVALID
    return run_scenario(
        args.scenario, fmt=args.format, out=args.out, jobs=args.jobs, tol=args.tol, seed=args.seed
    )


if __name__ == "__main__":
    raise SystemExit(main())
