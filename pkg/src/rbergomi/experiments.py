"""Batch orchestration: parameter registry, studies and CSV emission.

Reproduces the benchmark protocol around the estimators: the four reference
parameter sets with their published Monte Carlo reference prices, weak-error
(bias) studies across step counts, and the three-step method comparison
(estimate the bias per grid, run the quadrature against the biased target,
balance MC/QMC sample counts to the bias) with runtime ratios.

All value-bearing CSV output is byte-deterministic for a fixed (config,
seed); wall-clock measurements go to separate ``*_timing.csv`` files so the
deterministic artifacts stay reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .asgq import asgq_price
from .estimators import (
    EstimateResult,
    balance_samples,
    mc_estimate,
    qmc_estimate,
)
from .paths import ModelParams

N_GRID = (2, 4, 8, 16)


@dataclass(frozen=True)
class ParameterSet:
    """One row of the reference table: model parameters plus the published
    Monte Carlo reference price (N = 500 steps, M = 8e6 samples) and its 95%
    statistical half width."""

    set_id: int
    params: ModelParams
    reference_price: float
    reference_stat_error: float
    hierarchy: str  # level-to-nodes hierarchy that works best for this set


PARAMETER_SETS = {
    1: ParameterSet(
        1,
        ModelParams(hurst=0.07, eta=1.9, rho=-0.9, xi0=0.235**2,
                    spot=1.0, strike=1.0, maturity=1.0),
        0.0791,
        5.6e-05,
        "linear",
    ),
    2: ParameterSet(
        2,
        ModelParams(hurst=0.02, eta=0.4, rho=-0.7, xi0=0.1,
                    spot=1.0, strike=1.0, maturity=1.0),
        0.1246,
        9.0e-05,
        "geometric",
    ),
    3: ParameterSet(
        3,
        ModelParams(hurst=0.02, eta=0.4, rho=-0.7, xi0=0.1,
                    spot=1.0, strike=0.8, maturity=1.0),
        0.2412,
        5.4e-05,
        "geometric",
    ),
    4: ParameterSet(
        4,
        ModelParams(hurst=0.02, eta=0.4, rho=-0.7, xi0=0.1,
                    spot=1.0, strike=1.2, maturity=1.0),
        0.0570,
        8.0e-05,
        "geometric",
    ),
}


@dataclass(frozen=True)
class RunRecord:
    """Full provenance of one estimator run."""

    method: str
    set_id: int | None
    n_steps: int
    richardson_depth: int
    bridge: bool
    tol: float | None
    n_samples: int | None
    point_count: int | None
    shift_count: int | None
    seed: int
    estimate: EstimateResult
    reference: float | None

    @property
    def relative_error(self):
        if self.reference is None:
            return None
        return abs(self.estimate.value - self.reference) / self.reference


@dataclass(frozen=True)
class WeakErrorRow:
    set_id: int
    scheme: str
    n_steps: int
    bias: float
    ci_half_width: float
    value: float

    @property
    def resolved(self) -> bool:
        """Whether the bias estimate is distinguishable from zero."""
        return self.bias > self.ci_half_width


@dataclass(frozen=True)
class WeakErrorStudy:
    rows: tuple
    slope: float
    richardson_depth: int


def _child_seed(seed: int, tag: int) -> int:
    """Stable derived seed for one stage of a batch run."""
    return int(np.random.SeedSequence([seed, tag]).generate_state(1, np.uint64)[0])


def run_price(
    set_id: int | None = None,
    params: ModelParams | None = None,
    method: str = "mc",
    n_steps: int = 8,
    richardson_depth: int = 0,
    use_bridge: bool | None = None,
    tol: float = 1e-2,
    n_samples: int = 10**4,
    point_count: int = 1 << 13,
    shift_count: int = 8,
    seed: int = 0,
    hierarchy: str | None = None,
) -> RunRecord:
    """Single-shot pricing entry point for any of the three methods."""
    if (set_id is None) == (params is None):
        raise ValueError("provide exactly one of set_id or explicit params")
    reference = None
    if set_id is not None:
        pset = PARAMETER_SETS[set_id]
        params = pset.params
        reference = pset.reference_price
        if hierarchy is None:
            hierarchy = pset.hierarchy
    if hierarchy is None:
        hierarchy = "geometric"
    if use_bridge is None:
        use_bridge = method in ("qmc", "asgq")
    if method == "mc":
        est = mc_estimate(
            params, n_steps, n_samples, seed=seed,
            use_bridge=use_bridge, richardson_depth=richardson_depth,
        )
        samples, pts, q = n_samples, None, None
        tol_out = None
    elif method == "qmc":
        est = qmc_estimate(
            params, n_steps, seed=seed, use_bridge=use_bridge,
            richardson_depth=richardson_depth,
            point_count=point_count, shift_count=shift_count,
        )
        samples, pts, q = point_count * shift_count, point_count, shift_count
        tol_out = None
    elif method == "asgq":
        est = asgq_price(
            params, n_steps, hierarchy=hierarchy, tol=tol,
            use_bridge=use_bridge, richardson_depth=richardson_depth,
        )
        samples, pts, q = None, None, None
        tol_out = tol
    else:
        raise ValueError(f"unknown method {method!r}")
    return RunRecord(
        method=method, set_id=set_id, n_steps=n_steps,
        richardson_depth=richardson_depth, bridge=use_bridge, tol=tol_out,
        n_samples=samples, point_count=pts, shift_count=q, seed=seed,
        estimate=est, reference=reference,
    )


def run_reference(
    set_id: int, n_steps: int = 500, n_samples: int = 8 * 10**6, seed: int = 0
) -> RunRecord:
    """Recompute a reference price at configurable scale (plain MC)."""
    pset = PARAMETER_SETS[set_id]
    est = mc_estimate(pset.params, n_steps, n_samples, seed=seed)
    return RunRecord(
        method="mc", set_id=set_id, n_steps=n_steps, richardson_depth=0,
        bridge=False, tol=None, n_samples=n_samples, point_count=None,
        shift_count=None, seed=seed, estimate=est,
        reference=pset.reference_price,
    )


def run_weak_error(
    set_id: int | None = None,
    scheme: str = "hybrid",
    n_list=(2, 4, 8, 16, 32),
    n_samples: int = 10**6,
    seed: int = 0,
    richardson_depth: int = 0,
    params: ModelParams | None = None,
    reference: float | None = None,
    reference_stat_error: float = 0.0,
) -> WeakErrorStudy:
    """Bias |C_ref - C^N| per step count, with a log-log slope fit.

    Explicit ``params`` plus ``reference`` may replace a registered set. The
    fit regresses log bias on log(dt) over the resolved points (bias larger
    than its combined 95% half width), weighted by inverse squared relative
    uncertainty; slope ~ 1 means first-order weak convergence.
    """
    if set_id is not None:
        pset = PARAMETER_SETS[set_id]
        params = pset.params
        reference = pset.reference_price
        reference_stat_error = pset.reference_stat_error
    elif params is None or reference is None:
        raise ValueError("need either set_id or explicit params plus reference")
    rows = []
    for i, n in enumerate(n_list):
        est = mc_estimate(
            params, n, n_samples, seed=_child_seed(seed, i),
            richardson_depth=richardson_depth, scheme=scheme,
        )
        bias = abs(est.value - reference)
        ci = math.hypot(est.stat_error, reference_stat_error)
        rows.append(
            WeakErrorRow(set_id if set_id is not None else 0, scheme, n, bias, ci, est.value)
        )
    slope = _fit_weak_slope(rows, params.maturity)
    return WeakErrorStudy(tuple(rows), slope, richardson_depth)


def _fit_weak_slope(rows, maturity) -> float:
    pts = [(r.n_steps, r.bias, r.ci_half_width) for r in rows if r.resolved]
    if len(pts) < 2:
        return float("nan")
    log_dt = np.array([math.log(maturity / n) for n, _, _ in pts])
    log_bias = np.array([math.log(b) for _, b, _ in pts])
    w = np.array([(b / c) ** 2 for _, b, c in pts])
    coeffs = np.polyfit(log_dt, log_bias, 1, w=np.sqrt(w))
    return float(coeffs[0])


@dataclass(frozen=True)
class ComparisonResult:
    set_id: int
    target_rel_error: float
    chosen_steps: dict
    bias_estimates: dict
    records: tuple
    wall_seconds: dict

    def time_ratio(self, method: str, baseline: str = "mc") -> float:
        return self.wall_seconds[method] / self.wall_seconds[baseline]


def run_compare(
    set_id: int,
    methods=("mc", "qmc", "asgq"),
    target_rel_error: float = 0.01,
    seed: int = 0,
    richardson=None,
    bias_samples: int = 10**6,
    n_grid=N_GRID,
    max_qmc_doublings: int = 10,
    asgq_tol: float | None = None,
) -> ComparisonResult:
    """Three-step comparison protocol at a common total error target.

    (i) estimate the bias per step count with a large MC run and pick the
    coarsest grid whose bias is at most half the target; (ii) run ASGQ on
    that grid; (iii) choose MC and QMC sample counts so their statistical
    error matches the bias estimate. Wall times of the final production runs
    are recorded for the ratios; each method runs its best configuration
    for the target (geometric hierarchy for the quadrature, bridge on for
    the hierarchical methods).

    ``asgq_tol`` defaults to five times the target: the frontier-sum margin
    that the tolerance bounds overestimates the realized quadrature error by
    roughly an order of magnitude, so this lands the realized error near
    half the target.
    """
    if not methods:
        raise ValueError("methods must be nonempty")
    pset = PARAMETER_SETS[set_id]
    ref = pset.reference_price
    target_abs = target_rel_error * ref
    if asgq_tol is None:
        asgq_tol = 5.0 * target_rel_error
    if richardson is None:
        richardson = {"mc": 1, "qmc": 1, "asgq": 2} if set_id == 1 else {}
    depth_of = {m: richardson.get(m, 0) for m in methods}

    # step (i): bias per (depth, N); depths shared across methods
    bias_tables: dict = {}
    chosen_steps: dict = {}
    bias_estimates: dict = {}
    for depth in sorted(set(depth_of.values())):
        table = {}
        for i, n in enumerate(n_grid):
            if n % (1 << depth):
                continue
            est = mc_estimate(
                pset.params, n, bias_samples,
                seed=_child_seed(seed, 100 + 10 * depth + i),
                richardson_depth=depth,
            )
            table[n] = (abs(est.value - ref), est.stat_error, est.value)
        bias_tables[depth] = table
    for method in methods:
        table = bias_tables[depth_of[method]]
        chosen = None
        for n in sorted(table):
            if table[n][0] <= target_abs / 2.0:
                chosen = n
                break
        if chosen is None:
            chosen = max(table)
        chosen_steps[method] = chosen
        bias_estimates[method] = table[chosen][0]

    records = []
    wall = {}
    for method in methods:
        n = chosen_steps[method]
        depth = depth_of[method]
        bias = bias_estimates[method]
        # statistical target per the balancing rule, clamped so an
        # unresolved (noise-level) bias estimate cannot blow up the budget
        stat_target = min(max(bias, target_abs / 4.0), target_abs / 2.0)
        if method == "asgq":
            record = run_price(
                set_id=set_id, method="asgq", n_steps=n,
                richardson_depth=depth, tol=asgq_tol,
                seed=_child_seed(seed, 200), hierarchy="geometric",
            )
        elif method == "mc":
            pilot = mc_estimate(
                pset.params, n, 10**4, seed=_child_seed(seed, 300),
                richardson_depth=depth,
            )
            pilot_var = (pilot.stat_error / 1.96) ** 2 * 10**4
            samples = balance_samples(stat_target, pilot_var, "mc")
            est = mc_estimate(
                pset.params, n, samples, seed=_child_seed(seed, 301),
                richardson_depth=depth,
            )
            record = RunRecord(
                method="mc", set_id=set_id, n_steps=n, richardson_depth=depth,
                bridge=False, tol=None, n_samples=samples, point_count=None,
                shift_count=None, seed=seed, estimate=est, reference=ref,
            )
        elif method == "qmc":
            def trial(points, _n=n, _depth=depth):
                est = qmc_estimate(
                    pset.params, _n, seed=_child_seed(seed, 400),
                    richardson_depth=_depth, point_count=points,
                )
                return est.stat_error

            total = balance_samples(
                stat_target, 0.0, "qmc", qmc_trial=trial,
                pilot_points=1 << 10, max_doublings=max_qmc_doublings,
            )
            points = total // 8
            est = qmc_estimate(
                pset.params, n, seed=_child_seed(seed, 401),
                richardson_depth=depth, point_count=points,
            )
            record = RunRecord(
                method="qmc", set_id=set_id, n_steps=n, richardson_depth=depth,
                bridge=True, tol=None, n_samples=total, point_count=points,
                shift_count=8, seed=seed, estimate=est, reference=ref,
            )
        else:
            raise ValueError(f"unknown method {method!r}")
        record = replace(record, estimate=replace(record.estimate, bias_est=bias))
        records.append(record)
        wall[method] = record.estimate.wall_seconds
    return ComparisonResult(
        set_id=set_id,
        target_rel_error=target_rel_error,
        chosen_steps=chosen_steps,
        bias_estimates=bias_estimates,
        records=tuple(records),
        wall_seconds=wall,
    )


# ---------------------------------------------------------------------------
# CSV / plot-data emission
# ---------------------------------------------------------------------------

_RECORD_COLUMNS = [
    "method", "set_id", "steps", "richardson", "bridge", "tol", "samples",
    "points", "shifts", "seed", "value", "stat_error", "bias_est", "work",
    "relative_error",
]

_WEAK_COLUMNS = ["set_id", "scheme", "N", "bias", "ci_half_width", "slope_fit"]


def _fmt(value) -> str:
    """Round-trippable, platform-stable cell formatting; None -> empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, header, rows) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"failed writing {path}: {exc}") from exc


def write_records_csv(path, records) -> None:
    """Deterministic per-run records (no wall-clock columns)."""
    if not records:
        raise ValueError("records must be nonempty")
    rows = [
        [
            r.method, r.set_id, r.n_steps, r.richardson_depth, r.bridge,
            r.tol, r.n_samples, r.point_count, r.shift_count, r.seed,
            r.estimate.value, r.estimate.stat_error, r.estimate.bias_est,
            r.estimate.work, r.relative_error,
        ]
        for r in records
    ]
    _write_rows(path, _RECORD_COLUMNS, rows)


def write_timing_csv(path, records) -> None:
    """Wall-clock seconds per record; intentionally not deterministic."""
    rows = [[r.method, r.set_id, r.n_steps, r.richardson_depth,
             r.estimate.wall_seconds] for r in records]
    _write_rows(path, ["method", "set_id", "steps", "richardson", "wall_seconds"], rows)


def write_weak_error_csv(path, study: WeakErrorStudy) -> None:
    rows = [
        [r.set_id, r.scheme, r.n_steps, r.bias, r.ci_half_width, study.slope]
        for r in study.rows
    ]
    _write_rows(path, _WEAK_COLUMNS, rows)


def write_weak_error_plot(path, study: WeakErrorStudy) -> None:
    """(x, y, y_lo, y_hi) series: bias vs step count with CI band."""
    rows = [
        [r.n_steps, r.bias, max(r.bias - r.ci_half_width, 0.0),
         r.bias + r.ci_half_width]
        for r in study.rows
    ]
    _write_rows(path, ["x", "y", "y_lo", "y_hi"], rows)


def write_compare_plot(path, comparison: ComparisonResult) -> None:
    """(x, y, y_lo, y_hi) series: relative error vs wall seconds per method."""
    ref = PARAMETER_SETS[comparison.set_id].reference_price
    rows = []
    for r in comparison.records:
        rel = r.relative_error
        half = r.estimate.stat_error / ref
        rows.append([r.estimate.wall_seconds, rel, max(rel - half, 0.0), rel + half])
    _write_rows(path, ["x", "y", "y_lo", "y_hi"], rows)


def write_compare_summary(path, comparison: ComparisonResult) -> None:
    rows = []
    for r in comparison.records:
        ratio = (
            comparison.time_ratio(r.method)
            if "mc" in comparison.wall_seconds
            else None
        )
        rows.append([
            comparison.set_id, r.method, comparison.chosen_steps[r.method],
            r.richardson_depth, comparison.bias_estimates[r.method],
            r.estimate.value, r.estimate.stat_error, r.relative_error,
            r.estimate.wall_seconds, ratio,
        ])
    _write_rows(
        path,
        ["set_id", "method", "steps", "richardson", "bias_est", "value",
         "stat_error", "relative_error", "wall_seconds", "time_ratio_vs_mc"],
        rows,
    )
