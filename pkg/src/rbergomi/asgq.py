"""Dimension-adaptive sparse-grid quadrature over Gaussian space.

The estimator telescopes tensor-product Gauss-Hermite quadrature into
first-difference surpluses indexed by multi-indices beta (one level per
coordinate, levels start at 1 with a single node). A greedy loop grows a
downward-closed index set by accepting, among the admissible neighbors of
the current set, the candidate with the best profit |error contribution| /
|work contribution|, until the explored margin falls below the tolerance or
the evaluation budget runs out.

Levels map to node counts through either a linear hierarchy m = 4(l-1)+1 or
a geometric one m = 2^(l-1)+1; both start at a single node so the root index
costs one integrand evaluation at the origin.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .estimators import EstimateResult, _level_steps
from .mathcore import gauss_hermite_rule
from .paths import ModelParams, SmoothedIntegrand
from .transforms import richardson_weights

_EVAL_CHUNK = 1 << 14


class BudgetExhaustedError(RuntimeError):
    """Raised when the greedy construction hits its work cap before the
    tolerance; carries the partial state for inspection."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


def level_to_nodes(kind: str, level: int) -> int:
    """Node count of a univariate level (m(1) = 1 for both hierarchies)."""
    if level < 1:
        raise ValueError("levels are 1-based")
    if kind == "linear":
        return 4 * (level - 1) + 1
    if kind == "geometric":
        return 2 ** (level - 1) + 1 if level > 1 else 1
    raise ValueError(f"unknown hierarchy kind {kind!r}")


@dataclass
class IndexSetState:
    """Outcome of the adaptive construction.

    ``accepted`` is downward closed; ``estimate`` equals the sum of accepted
    surpluses; ``frontier`` maps evaluated-but-unaccepted neighbors to their
    surpluses, and ``error_margin`` is the sum of their magnitudes.
    """

    accepted: list
    frontier: dict
    estimate: float
    error_margin: float
    work: int
    converged: bool
    surpluses: dict = field(default_factory=dict)


def is_downward_closed(index_set) -> bool:
    members = set(index_set)
    for beta in members:
        for i, level in enumerate(beta):
            if level > 1:
                lower = beta[:i] + (level - 1,) + beta[i + 1 :]
                if lower not in members:
                    return False
    return True


class _CountingIntegrand:
    def __init__(self, f):
        self.f = f
        self.evaluations = 0

    def __call__(self, pts):
        self.evaluations += pts.shape[0]
        return self.f(pts)


def _grid_arrays(levels, hierarchy):
    """Tensor grid points (P, d) and product weights (P,) for one index."""
    node_lists, weight_lists = [], []
    for level in levels:
        rule = gauss_hermite_rule(level_to_nodes(hierarchy, level))
        node_lists.append(rule.nodes)
        weight_lists.append(rule.weights)
    shape = tuple(len(x) for x in node_lists)
    total = int(np.prod(shape))
    d = len(shape)
    idx = np.arange(total)
    multi = np.unravel_index(idx, shape)
    pts = np.column_stack([node_lists[i][multi[i]] for i in range(d)])
    w = weight_lists[0][multi[0]].copy()
    for i in range(1, d):
        w *= weight_lists[i][multi[i]]
    return pts, w


def tensor_quadrature(f, levels, hierarchy: str) -> float:
    """Full tensor-product Gauss-Hermite quadrature at one multi-index.

    ``f`` maps a (points, d) array to values; the grid takes m(level_i)
    nodes in dimension i and is evaluated in chunks to bound memory.
    """
    pts, w = _grid_arrays(levels, hierarchy)
    parts = []
    for start in range(0, pts.shape[0], _EVAL_CHUNK):
        stop = start + _EVAL_CHUNK
        parts.append(float(np.dot(w[start:stop], f(pts[start:stop]))))
    return math.fsum(parts)


def _batched_tensor_values(f, betas, hierarchy, cache):
    """Evaluate several tensor grids through one stacked integrand call.

    Equivalent to calling :func:`tensor_quadrature` per index but with far
    less per-call overhead; results land in ``cache``.
    """
    missing = [b for b in betas if b not in cache]
    if not missing:
        return
    grids = [_grid_arrays(b, hierarchy) for b in missing]
    sizes = [g[0].shape[0] for g in grids]

    def flush(idx_list):
        values = f(np.concatenate([grids[i][0] for i in idx_list], axis=0))
        offset = 0
        for i in idx_list:
            w = grids[i][1]
            cache[missing[i]] = float(np.dot(w, values[offset : offset + len(w)]))
            offset += len(w)

    pending_idx, pending = [], 0
    for i, size in enumerate(sizes):
        if size > _EVAL_CHUNK:  # oversized grids go through the chunked path
            pts, w = grids[i]
            parts = []
            for start in range(0, size, _EVAL_CHUNK):
                stop = start + _EVAL_CHUNK
                parts.append(float(np.dot(w[start:stop], f(pts[start:stop]))))
            cache[missing[i]] = math.fsum(parts)
            continue
        pending_idx.append(i)
        pending += size
        if pending >= _EVAL_CHUNK:
            flush(pending_idx)
            pending_idx, pending = [], 0
    if pending_idx:
        flush(pending_idx)


def delta_operator(f, beta, hierarchy: str, cache: dict | None = None) -> float:
    """First-difference surplus at beta via inclusion-exclusion.

    Dimensions at level 1 take no difference (nothing below the one-node
    rule); the remaining corners alternate sign by the number of decremented
    coordinates. ``cache`` memoizes tensor values across calls.
    """
    if cache is None:
        cache = {}
    beta = tuple(int(b) for b in beta)
    if any(b < 1 for b in beta):
        raise ValueError("multi-index entries must be >= 1")
    active = [i for i, b in enumerate(beta) if b > 1]
    total = 0.0
    for mask in itertools.product((0, 1), repeat=len(active)):
        corner = list(beta)
        for bit, i in zip(mask, active):
            corner[i] -= bit
        corner = tuple(corner)
        if corner not in cache:
            cache[corner] = tensor_quadrature(f, corner, hierarchy)
        total += (-1) ** sum(mask) * cache[corner]
    return total


def _tensor_cost(beta, hierarchy):
    cost = 1
    for level in beta:
        cost *= level_to_nodes(hierarchy, level)
    return cost


def adaptive_construct(
    f,
    dims: int,
    hierarchy: str = "geometric",
    tol: float = 1e-2,
    max_work: int = 50_000_000,
    max_nodes_per_dim: int = 257,
    stop_rule: str = "sum",
) -> IndexSetState:
    """Greedy profit-thresholded construction of the index set.

    Starts from the all-ones index, repeatedly evaluates the surpluses of
    admissible neighbors (all backward neighbors accepted) and accepts the
    most profitable candidate. Stops once the frontier surpluses drop below
    ``tol`` relative to the running estimate -- summed magnitudes under the
    default ``stop_rule='sum'`` (the conservative remaining-error proxy),
    largest surplus under ``'max'`` -- with a machine-noise floor so
    zero-integral functions terminate. Exceeding the evaluation budget
    ``max_work`` is reported via ``converged=False``, never an exception
    here.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if stop_rule not in ("max", "sum"):
        raise ValueError("stop_rule must be 'max' or 'sum'")
    counter = _CountingIntegrand(f)
    cache: dict = {}
    surpluses: dict = {}
    ones = (1,) * dims

    def surplus(beta):
        if beta not in surpluses:
            surpluses[beta] = delta_operator(counter, beta, hierarchy, cache)
        return surpluses[beta]

    accepted = [ones]
    accepted_set = {ones}
    estimate = surplus(ones)
    frontier: dict = {}
    heap: list = []  # (-profit, beta); profits are static per candidate

    def admissible(beta):
        return all(
            beta[:i] + (beta[i] - 1,) + beta[i + 1 :] in accepted_set
            for i in range(dims)
            if beta[i] > 1
        )

    def extend_frontier(base):
        fresh = []
        for i in range(dims):
            if level_to_nodes(hierarchy, base[i] + 1) > max_nodes_per_dim:
                continue
            cand = base[:i] + (base[i] + 1,) + base[i + 1 :]
            if cand in accepted_set or cand in frontier:
                continue
            if admissible(cand):
                fresh.append(cand)
        # all corners below each candidate are cached; only the top grids
        # are new, so they can share one stacked integrand call
        _batched_tensor_values(counter, fresh, hierarchy, cache)
        added = 0.0
        for cand in fresh:
            value = surplus(cand)
            frontier[cand] = value
            heapq.heappush(heap, (-abs(value) / _tensor_cost(cand, hierarchy), cand))
            added += abs(value)
        return added

    margin_sum = extend_frontier(ones)
    converged = False
    iteration = 0
    while frontier:
        iteration += 1
        if iteration % 256 == 0:  # refresh the incremental sum against drift
            margin_sum = math.fsum(abs(v) for v in frontier.values())
        if stop_rule == "sum":
            margin = margin_sum
        else:
            margin = max(abs(v) for v in frontier.values())
        floor = 1e-13 * max(1.0, abs(estimate))
        if margin <= max(tol * abs(estimate), floor):
            converged = True
            break
        if counter.evaluations > max_work:
            break
        while True:
            _, best = heapq.heappop(heap)
            if best in frontier:
                break
        value = frontier.pop(best)
        margin_sum -= abs(value)
        accepted.append(best)
        accepted_set.add(best)
        estimate += value
        margin_sum += extend_frontier(best)
    else:
        converged = True  # frontier exhausted (node cap boxed everything in)

    return IndexSetState(
        accepted=accepted,
        frontier=dict(frontier),
        estimate=estimate,
        error_margin=math.fsum(abs(v) for v in frontier.values()),
        work=counter.evaluations,
        converged=converged,
        surpluses=surpluses,
    )


def asgq_price(
    params: ModelParams,
    n_steps: int,
    hierarchy: str = "geometric",
    tol: float = 1e-2,
    use_bridge: bool = True,
    richardson_depth: int = 0,
    max_work: int = 50_000_000,
    stop_rule: str = "sum",
) -> EstimateResult:
    """Adaptive sparse-grid price of the smoothed call.

    Wires the conditional payoff through the (optionally bridged) hybrid
    scheme as the integrand on R^{2N}; with Richardson extrapolation each
    grid level gets its own construction and the level margins combine with
    the absolute extrapolation weights. Raises
    :class:`BudgetExhaustedError` if any level stops on the work cap.
    """
    t0 = time.perf_counter()
    steps = _level_steps(n_steps, richardson_depth)
    weights = richardson_weights(richardson_depth, len(steps))
    # split the budget so the weighted margin combination still meets tol
    level_tol = tol / float(np.abs(weights).sum())
    values, margins, work = [], [], 0
    for n_level, w in zip(steps, weights):
        integrand = SmoothedIntegrand(params, n_level, use_bridge=use_bridge)
        state = adaptive_construct(
            integrand, integrand.dimension, hierarchy, level_tol, max_work,
            stop_rule=stop_rule,
        )
        work += state.work
        if not state.converged:
            raise BudgetExhaustedError(
                f"ASGQ work cap {max_work} hit at {n_level} steps "
                f"(margin {state.error_margin:.3e}, tol {tol:g})",
                state=state,
            )
        values.append(state.estimate)
        margins.append(state.error_margin)
    value = float(weights @ np.asarray(values))
    margin = float(np.abs(weights) @ np.asarray(margins))
    return EstimateResult(
        value=value,
        stat_error=margin,
        bias_est=None,
        work=work,
        wall_seconds=time.perf_counter() - t0,
    )
