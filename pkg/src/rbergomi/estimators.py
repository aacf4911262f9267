"""Monte Carlo and randomized lattice-QMC estimators of the smoothed price.

Both estimators integrate the same conditionally smoothed payoff map over
2N-dimensional Gaussian space. The MC branch draws iid normals from a
counter-based generator (Philox) in fixed-size blocks, so a (seed, config)
pair reproduces results bit for bit regardless of platform threading. The
QMC branch pushes randomly shifted rank-1 lattice points through the inverse
normal CDF; its error estimate comes from the spread across shift
replicates. Richardson extrapolation runs each grid level with independent
randomness and combines the level means linearly.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .lattice import LatticeRule, default_generating_vector, lattice_points
from .paths import ExactSmoothedIntegrand, ModelParams, SmoothedIntegrand
from .transforms import richardson_weights

_BLOCK = 1 << 16
_MIN_U = 1e-16  # keeps ndtri finite if a shifted point rounds onto 0


@dataclass(frozen=True)
class EstimateResult:
    """A price estimate with its error and work bookkeeping.

    stat_error is a 95% half width (1.96 sigma-hat / sqrt(replicates)) for
    the sampling methods and the frontier error margin for the quadrature
    method; bias_est is filled only when a weak-error study supplies it.
    """

    value: float
    stat_error: float
    bias_est: float | None
    work: int
    wall_seconds: float

    def __post_init__(self):
        if self.stat_error < 0.0 or self.work <= 0:
            raise ValueError("stat_error must be >= 0 and work positive")


def _level_steps(n_steps: int, richardson_depth: int) -> list[int]:
    """Grid sizes coarse to fine; ``n_steps`` is the finest grid."""
    if richardson_depth < 0:
        raise ValueError("richardson_depth must be >= 0")
    if n_steps % (1 << richardson_depth):
        raise ValueError("n_steps must be divisible by 2**richardson_depth")
    return [n_steps >> (richardson_depth - j) for j in range(richardson_depth)] + [
        n_steps
    ]


def _make_integrand(params, n_steps, use_bridge, scheme):
    if scheme == "hybrid":
        return SmoothedIntegrand(params, n_steps, use_bridge=use_bridge)
    if scheme == "exact":
        if use_bridge:
            raise ValueError("the bridge reordering applies to the hybrid scheme only")
        return ExactSmoothedIntegrand(params, n_steps)
    raise ValueError(f"unknown scheme {scheme!r}")


def _mc_level_mean(integrand, n_samples, seed_seq, block_size=_BLOCK):
    """Sample mean and variance of the payoff over n_samples iid inputs."""
    rng = np.random.Generator(np.random.Philox(seed_seq))
    dim = integrand.dimension
    sums, sumsq = [], []
    remaining = n_samples
    while remaining > 0:
        b = min(block_size, remaining)
        z = rng.standard_normal((b, dim))
        y = integrand(z)
        sums.append(float(np.sum(y)))
        sumsq.append(float(np.sum(y * y)))
        remaining -= b
    total = math.fsum(sums)
    total_sq = math.fsum(sumsq)
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0) * n_samples / (n_samples - 1)
    return mean, var


def mc_estimate(
    params: ModelParams,
    n_steps: int,
    n_samples: int,
    seed: int = 0,
    use_bridge: bool = False,
    richardson_depth: int = 0,
    scheme: str = "hybrid",
    block_size: int = _BLOCK,
) -> EstimateResult:
    """Plain Monte Carlo estimate of the smoothed call price.

    With richardson_depth > 0, grids n_steps / 2^depth .. n_steps are
    estimated with independent samples (n_samples each) and combined by the
    extrapolation recursion; the reported 95% statistical error propagates
    the level variances through the combination weights.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    t0 = time.perf_counter()
    steps = _level_steps(n_steps, richardson_depth)
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(steps))
    means, variances = [], []
    for n_level, child in zip(steps, children):
        integrand = _make_integrand(params, n_level, use_bridge, scheme)
        mean, var = _mc_level_mean(integrand, n_samples, child, block_size)
        means.append(mean)
        variances.append(var)
    weights = richardson_weights(richardson_depth, len(steps))
    value = float(weights @ means)
    var_value = float(np.sum(weights**2 * np.asarray(variances)) / n_samples)
    return EstimateResult(
        value=value,
        stat_error=1.96 * math.sqrt(var_value),
        bias_est=None,
        work=n_samples * len(steps),
        wall_seconds=time.perf_counter() - t0,
    )


def plain_mc_oracle(
    params: ModelParams,
    n_steps: int,
    n_samples: int,
    seed: int = 0,
    block_size: int = _BLOCK,
) -> EstimateResult:
    """Two-factor non-smoothed MC estimator: simulate W_perp, price (S_T-K)^+.

    Unbiased for the same discretized price as :func:`mc_estimate` but with
    larger variance; kept as an independent validation oracle for the
    conditional smoothing.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    t0 = time.perf_counter()
    integrand = SmoothedIntegrand(params, n_steps)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    sums, sumsq = [], []
    remaining = n_samples
    while remaining > 0:
        b = min(block_size, remaining)
        z = rng.standard_normal((b, 2 * n_steps))
        z_perp = rng.standard_normal((b, n_steps))
        y = integrand.plain_two_factor(z, z_perp)
        sums.append(float(np.sum(y)))
        sumsq.append(float(np.sum(y * y)))
        remaining -= b
    mean = math.fsum(sums) / n_samples
    var = max(math.fsum(sumsq) / n_samples - mean * mean, 0.0)
    var *= n_samples / (n_samples - 1)
    return EstimateResult(
        value=mean,
        stat_error=1.96 * math.sqrt(var / n_samples),
        bias_est=None,
        work=n_samples,
        wall_seconds=time.perf_counter() - t0,
    )


def _qmc_level_means(integrand, rule, block_size=_BLOCK):
    """Per-shift lattice means of the payoff for one grid level."""
    shift_means = []
    for i in range(rule.shift_count):
        acc = []
        for block in lattice_points(rule, i, block_size):
            u = np.maximum(block, _MIN_U)
            y = integrand(ndtri(u))
            acc.append(float(np.sum(y)))
        shift_means.append(math.fsum(acc) / rule.point_count)
    return np.asarray(shift_means)


def qmc_estimate(
    params: ModelParams,
    n_steps: int,
    rule: LatticeRule | None = None,
    seed: int = 0,
    use_bridge: bool = True,
    richardson_depth: int = 0,
    point_count: int = 1 << 13,
    shift_count: int = 8,
    block_size: int = _BLOCK,
) -> EstimateResult:
    """Randomized lattice-QMC estimate of the smoothed call price.

    Each of the q random shifts yields one lattice-rule mean; the estimate
    averages them and the 95% error is 1.96 * std / sqrt(q). A supplied
    ``rule`` must have dimension 2 * n_steps (the finest grid); Richardson
    levels below it get rules of reduced dimension with fresh shifts drawn
    from ``seed``. Total samples per level: q * n.
    """
    t0 = time.perf_counter()
    steps = _level_steps(n_steps, richardson_depth)
    if rule is not None and rule.dimension != 2 * n_steps:
        raise ValueError("rule dimension must equal 2 * n_steps")
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(steps))
    means, err_vars = [], []
    n_pts = rule.point_count if rule is not None else point_count
    q = rule.shift_count if rule is not None else shift_count
    for j, (n_level, child) in enumerate(zip(steps, children)):
        if rule is not None and j == len(steps) - 1:
            level_rule = rule
        else:
            z = default_generating_vector()[: 2 * n_level] % n_pts
            shifts = np.random.Generator(np.random.Philox(child)).random(
                (q, 2 * n_level)
            )
            level_rule = LatticeRule(2 * n_level, n_pts, z, q, shifts)
        integrand = SmoothedIntegrand(params, n_level, use_bridge=use_bridge)
        shift_means = _qmc_level_means(integrand, level_rule, block_size)
        means.append(float(shift_means.mean()))
        err_vars.append(float(shift_means.var(ddof=1) / q))
    weights = richardson_weights(richardson_depth, len(steps))
    value = float(weights @ means)
    var_value = float(np.sum(weights**2 * np.asarray(err_vars)))
    return EstimateResult(
        value=value,
        stat_error=1.96 * math.sqrt(var_value),
        bias_est=None,
        work=q * n_pts * len(steps),
        wall_seconds=time.perf_counter() - t0,
    )


def balance_samples(
    target_bias: float,
    pilot_variance: float,
    estimator_kind: str,
    qmc_trial=None,
    pilot_points: int = 1 << 10,
    shift_count: int = 8,
    max_doublings: int = 14,
) -> int:
    """Sample count that balances the statistical error against the bias.

    MC: closed form M = ceil((1.96 sigma-hat / target)^2). QMC: doubles the
    lattice size, starting from ``pilot_points``, until the replicate error
    reported by ``qmc_trial(n)`` drops to the target; returns the total
    sample count q * n.
    """
    if target_bias <= 0.0:
        raise ValueError("target_bias must be positive")
    if estimator_kind == "mc":
        return int(math.ceil((1.96 * math.sqrt(pilot_variance) / target_bias) ** 2))
    if estimator_kind == "qmc":
        if qmc_trial is None:
            raise ValueError("qmc balancing needs a trial callable n -> error")
        n = pilot_points
        for _ in range(max_doublings):
            if qmc_trial(n) <= target_bias:
                break
            n *= 2
        return shift_count * n
    raise ValueError(f"unknown estimator kind {estimator_kind!r}")
