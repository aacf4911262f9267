"""Rough Bergomi path construction and the conditionally smoothed payoff.

The model prices a European call on

    dS_t = sqrt(v_t) S_t dZ_t,
    v_t  = xi0 * exp(eta * W^H_t - eta^2/2 * t^{2H}),

where W^H is a Riemann-Liouville fractional Brownian motion with kernel
sqrt(2H) (t-s)^{H-1/2} and Z = rho W^1 + sqrt(1-rho^2) W_perp. Conditioning
on the path of W^1 collapses the payoff to a Black-Scholes call evaluated at
an effective spot and residual variance, which is the smooth integrand all
estimators in this package integrate.

Two joint samplers for (W^1, W^H) on the grid t_i = i T / N are provided:

* hybrid: treats the kernel exactly over the most recent step and as a step
  function elsewhere, evaluated as a discrete convolution (fast);
* exact: Cholesky of the full 2N x 2N covariance matrix (slow, unbiased in
  distribution; used as a cross-check and for weak-error studies).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

from .mathcore import (
    LowerTriangularFactor,
    _call_from_log_spot,
    black_scholes_call,
    cholesky_factor,
    discrete_convolution,
)


@dataclass(frozen=True)
class ModelParams:
    """Rough Bergomi parameter tuple.

    hurst in (0, 1/2), vol-of-vol eta >= 0, spot/vol correlation rho in
    (-1, 0], flat forward variance xi0 > 0, plus contract data (spot, strike,
    maturity in years).
    """

    hurst: float
    eta: float
    rho: float
    xi0: float
    spot: float
    strike: float
    maturity: float

    def __post_init__(self):
        if not 0.0 < self.hurst < 0.5:
            raise ValueError("hurst must lie in (0, 1/2)")
        if self.eta < 0.0:
            raise ValueError("eta must be nonnegative")
        if not -1.0 < self.rho <= 0.0:
            raise ValueError("rho must lie in (-1, 0]")
        if self.xi0 <= 0.0:
            raise ValueError("xi0 must be positive")
        if self.spot <= 0.0 or self.strike <= 0.0 or self.maturity <= 0.0:
            raise ValueError("spot, strike and maturity must be positive")


@dataclass(frozen=True)
class GaussianInput:
    """Pair of length-N Gaussian vectors driving one path.

    ``w1`` drives the Brownian increments, ``w2`` the kernel-weighted
    integral over the most recent step. Entries are iid standard normal
    before :func:`colorize_hybrid_input` and correlated per step after it.
    """

    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float)
        if w1.ndim != 1 or w1.shape != w2.shape or w1.size < 1:
            raise ValueError("w1 and w2 must be 1-d arrays of equal length >= 1")
        if not (np.all(np.isfinite(w1)) and np.all(np.isfinite(w2))):
            raise ValueError("Gaussian input must be finite")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    def __len__(self):
        return self.w1.size


@dataclass(frozen=True)
class ConditionalPayoffArgs:
    """Arguments fed to Black-Scholes after conditioning on W^1."""

    effective_spot: float
    strike: float
    residual_variance: float


def kernel_eval(hurst, lag):
    """Riemann-Liouville kernel sqrt(2H) * lag^{H - 1/2} for lag > 0."""
    if not 0.0 < hurst < 0.5:
        raise ValueError("hurst must lie in (0, 1/2)")
    lag = np.asarray(lag, dtype=float)
    if np.any(lag <= 0.0):
        raise ValueError("kernel diverges at lag <= 0")
    out = np.sqrt(2.0 * hurst) * lag ** (hurst - 0.5)
    return float(out) if out.ndim == 0 else out


def hybrid_weights(hurst, step_count) -> np.ndarray:
    """Optimal kernel-evaluation points b_k, k = 2..N, of the hybrid scheme.

    b_k = ((k^{H+1/2} - (k-1)^{H+1/2}) / (H+1/2))^{1/(H-1/2)} lies in
    (k-1, k); the step-function part of the scheme evaluates the kernel at
    lag b_k * dt instead of at the grid point.
    """
    if step_count < 2:
        raise ValueError("step_count must be >= 2")
    if not 0.0 < hurst < 0.5:
        raise ValueError("hurst must lie in (0, 1/2)")
    k = np.arange(2, step_count + 1, dtype=float)
    a = hurst + 0.5
    return ((k**a - (k - 1.0) ** a) / a) ** (1.0 / (hurst - 0.5))


def hybrid_step_covariance(hurst, step) -> np.ndarray:
    """Covariance of (dW^1, W^2) over one step of length ``step``.

    W^2 = int_{t-dt}^{t} (t-s)^{H-1/2} dW^1_s, so closed-form power
    integrals give Var(dW^1) = dt, Var(W^2) = dt^{2H}/(2H) and
    Cov = dt^{H+1/2}/(H+1/2).
    """
    if step <= 0.0:
        raise ValueError("step must be positive")
    dt = float(step)
    h = float(hurst)
    cov = np.array(
        [
            [dt, dt ** (h + 0.5) / (h + 0.5)],
            [dt ** (h + 0.5) / (h + 0.5), dt ** (2.0 * h) / (2.0 * h)],
        ]
    )
    return cov


def _step_cholesky(hurst, step):
    """Lower 2x2 Cholesky factor of hybrid_step_covariance, in closed form."""
    dt = float(step)
    h = float(hurst)
    l11 = np.sqrt(dt)
    l21 = dt**h / (h + 0.5)
    l22 = dt**h * np.sqrt(1.0 / (2.0 * h) - 1.0 / (h + 0.5) ** 2)
    return l11, l21, l22


def colorize_hybrid_input(hurst, step, raw: GaussianInput) -> GaussianInput:
    """Map iid normals to the correlated per-step pairs (dW^1_i, W^2_i).

    Applies the 2x2 Cholesky factor of :func:`hybrid_step_covariance` to
    every step; linear and bijective.
    """
    l11, l21, l22 = _step_cholesky(hurst, step)
    dw1 = l11 * raw.w1
    w2 = l21 * raw.w1 + l22 * raw.w2
    return GaussianInput(dw1, w2)


def simulate_fbm_hybrid(params: ModelParams, correlated: GaussianInput) -> np.ndarray:
    """Hybrid-scheme fBm approximation at grid points i T/N, i = 1..N.

    ``correlated`` must hold the per-step pairs produced by
    :func:`colorize_hybrid_input`: w1 = Brownian increments, w2 = exact
    kernel integrals over the latest step. The step-function part is a
    discrete convolution of the increments with the kernel evaluated at the
    optimal points b_k.
    """
    n = len(correlated)
    dt = params.maturity / n
    conv = np.zeros(n)
    if n >= 2:
        kernel = np.zeros(n)
        kernel[1:] = kernel_eval(params.hurst, hybrid_weights(params.hurst, n) * dt)
        conv = discrete_convolution(kernel, correlated.w1)[:n]
        # kernel already carries sqrt(2H); w2 does not
        conv /= np.sqrt(2.0 * params.hurst)
    return np.sqrt(2.0 * params.hurst) * (correlated.w2 + conv)


def correlation_function_C(hurst, x):
    """Normalized fBm correlation C(x) = 2H int_0^1 (1-s)^{-g} (x-s)^{-g} ds.

    g = 1/2 - H. The substitution u = (1-s)^{1-g} removes the endpoint
    singularity at s = 1 before adaptive (Gauss-Kronrod) quadrature;
    absolute accuracy 1e-9 or better. C(1) = 1 and C decreases in x.
    """
    if not 0.0 < hurst < 0.5:
        raise ValueError("hurst must lie in (0, 1/2)")
    if x < 1.0:
        raise ValueError("x must be >= 1")
    g = 0.5 - hurst
    if x == 1.0:
        return 1.0
    p = 1.0 / (1.0 - g)

    def integrand(u):
        return (x - 1.0 + u**p) ** (-g)

    val, _ = quad(integrand, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12, limit=200)
    return 2.0 * hurst * p * val


def exact_covariance_matrix(params: ModelParams, step_count: int) -> np.ndarray:
    """Covariance of the 2N-vector (W^1_{t_1..t_N}, W^H_{t_1..t_N}).

    Blocks: Cov(W^1_s, W^1_t) = min(s,t); Cov(W^H_u, W^H_v) =
    u^{2H} C(v/u) for u <= v; Cov(W^H_t, W^1_s) =
    sqrt(2H)/(H+1/2) (t^{H+1/2} - (t - min(s,t))^{H+1/2}).
    """
    if step_count < 1:
        raise ValueError("step_count must be >= 1")
    n = step_count
    h = params.hurst
    t = params.maturity * np.arange(1, n + 1) / n
    cov = np.empty((2 * n, 2 * n))
    tmin = np.minimum.outer(t, t)
    cov[:n, :n] = tmin
    fbm = np.empty((n, n))
    for i in range(n):
        fbm[i, i] = t[i] ** (2.0 * h)
        for j in range(i + 1, n):
            fbm[i, j] = fbm[j, i] = t[i] ** (2.0 * h) * correlation_function_C(
                h, t[j] / t[i]
            )
    cov[n:, n:] = fbm
    # cross block: rows = W^H_t, cols = W^1_s
    tt = t[:, None]
    ss = t[None, :]
    cross = (
        np.sqrt(2.0 * h)
        / (h + 0.5)
        * (tt ** (h + 0.5) - (tt - np.minimum(tt, ss)) ** (h + 0.5))
    )
    cov[n:, :n] = cross
    cov[:n, n:] = cross.T
    return cov


def simulate_fbm_exact(factor: LowerTriangularFactor, raw: np.ndarray):
    """Draw one exact sample of (W^1 path, W^H path) from 2N iid normals."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (factor.dimension,):
        raise ValueError("raw input length must match factor dimension")
    x = factor.entries @ raw
    n = factor.dimension // 2
    return x[:n], x[n:]


def variance_path(params: ModelParams, fbm: np.ndarray) -> np.ndarray:
    """Variance process v_{t_i} = xi0 exp(eta W^H_{t_i} - eta^2/2 t_i^{2H})."""
    fbm = np.asarray(fbm, dtype=float)
    n = fbm.shape[-1]
    t = params.maturity * np.arange(1, n + 1) / n
    with np.errstate(over="ignore"):
        v = params.xi0 * np.exp(
            params.eta * fbm - 0.5 * params.eta**2 * t ** (2.0 * params.hurst)
        )
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("variance path overflowed to non-finite values")
    return v


def conditional_payoff_args(
    params: ModelParams, w1_path, v_path
) -> ConditionalPayoffArgs:
    """Black-Scholes arguments after conditioning on the W^1 path.

    Both integrals use the left-endpoint rule with v_0 = xi0 (adapted, no
    look-ahead): int sqrt(v) dW^1 ~ sum sqrt(v_{i-1}) dW^1_i and
    int v dt ~ sum v_{i-1} dt.
    """
    w1_path = np.asarray(w1_path, dtype=float)
    v_path = np.asarray(v_path, dtype=float)
    if w1_path.shape != v_path.shape or w1_path.ndim != 1:
        raise ValueError("w1 and v paths must be 1-d arrays of equal length")
    n = w1_path.size
    dt = params.maturity / n
    dw1 = np.diff(w1_path, prepend=0.0)
    v_left = np.concatenate(([params.xi0], v_path[:-1]))
    int_sqrt_v_dw = float(np.sum(np.sqrt(v_left) * dw1))
    int_v_dt = float(np.sum(v_left) * dt)
    eff_spot = params.spot * np.exp(
        params.rho * int_sqrt_v_dw - 0.5 * params.rho**2 * int_v_dt
    )
    return ConditionalPayoffArgs(
        effective_spot=eff_spot,
        strike=params.strike,
        residual_variance=(1.0 - params.rho**2) * int_v_dt,
    )


def conditional_payoff(params: ModelParams, w1_path, v_path) -> float:
    """Smoothed payoff: Black-Scholes call at the conditional arguments."""
    args = conditional_payoff_args(params, w1_path, v_path)
    return black_scholes_call(
        args.effective_spot, args.strike, args.residual_variance
    )


class SmoothedIntegrand:
    """Vectorized map from 2N-dimensional standard Gaussians to smoothed payoffs.

    This is the integrand shared by all estimators: column block [0, N) feeds
    the Brownian increments (optionally through the Brownian bridge
    reordering), block [N, 2N) the kernel integrals of the hybrid scheme.
    Construction precomputes everything that depends only on (params, N).
    """

    def __init__(self, params: ModelParams, n_steps: int, use_bridge: bool = False):
        if n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        self.params = params
        self.n_steps = int(n_steps)
        self.use_bridge = bool(use_bridge)
        self.dt = params.maturity / n_steps
        self.sqrt_dt = np.sqrt(self.dt)
        _, self._l21, self._l22 = _step_cholesky(params.hurst, self.dt)
        self._sqrt_2h = np.sqrt(2.0 * params.hurst)
        kernel = np.zeros(n_steps)
        if n_steps >= 2:
            kernel[1:] = kernel_eval(
                params.hurst, hybrid_weights(params.hurst, n_steps) * self.dt
            )
        self._kernel = kernel / self._sqrt_2h
        t = params.maturity * np.arange(1, n_steps + 1) / n_steps
        self._drift = 0.5 * params.eta**2 * t ** (2.0 * params.hurst)
        if self.use_bridge:
            from .transforms import bridge_increment_matrix

            self._bridge = bridge_increment_matrix(n_steps, params.maturity)
        else:
            self._bridge = None
        self._log_spot0 = np.log(params.spot)

    @property
    def dimension(self) -> int:
        return 2 * self.n_steps

    def increments(self, z1: np.ndarray) -> np.ndarray:
        """Brownian increments (variance dt per step) from iid normals."""
        if self._bridge is not None:
            return z1 @ self._bridge.T
        return self.sqrt_dt * z1

    def payoff_from_increments(self, dw1: np.ndarray, z2: np.ndarray) -> np.ndarray:
        """Smoothed payoff for batches of increments and kernel drivers."""
        p = self.params
        w2 = (self._l21 / self.sqrt_dt) * dw1 + self._l22 * z2
        if self.n_steps >= 2:
            conv = _convolve_batch(self._kernel, dw1)[:, : self.n_steps]
        else:
            conv = 0.0
        wbar = self._sqrt_2h * (w2 + conv)
        v = p.xi0 * np.exp(p.eta * wbar - self._drift)
        v_left = np.concatenate(
            (np.full((v.shape[0], 1), p.xi0), v[:, :-1]), axis=1
        )
        int_sqrt_v_dw = np.einsum("ij,ij->i", np.sqrt(v_left), dw1)
        int_v_dt = v_left.sum(axis=1) * self.dt
        log_spot = self._log_spot0 + p.rho * int_sqrt_v_dw - 0.5 * p.rho**2 * int_v_dt
        total_var = (1.0 - p.rho**2) * int_v_dt
        return _call_from_log_spot(log_spot, p.strike, total_var)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        """Evaluate on a (batch, 2N) array of iid standard normals."""
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.dimension:
            raise ValueError(
                f"expected {self.dimension} Gaussian coordinates, got {z.shape[1]}"
            )
        n = self.n_steps
        dw1 = self.increments(z[:, :n])
        return self.payoff_from_increments(dw1, z[:, n:])

    def plain_two_factor(self, z: np.ndarray, z_perp: np.ndarray) -> np.ndarray:
        """Non-smoothed two-factor payoff (S_T - K)^+ on the same grid.

        Simulates the orthogonal Brownian factor explicitly; unbiased for the
        same discretized price as the smoothed map but with larger variance.
        Used as a validation oracle.
        """
        z = np.atleast_2d(np.asarray(z, dtype=float))
        z_perp = np.atleast_2d(np.asarray(z_perp, dtype=float))
        p = self.params
        n = self.n_steps
        dw1 = self.increments(z[:, :n])
        w2 = (self._l21 / self.sqrt_dt) * dw1 + self._l22 * z[:, n:]
        if n >= 2:
            conv = _convolve_batch(self._kernel, dw1)[:, :n]
        else:
            conv = 0.0
        wbar = self._sqrt_2h * (w2 + conv)
        v = p.xi0 * np.exp(p.eta * wbar - self._drift)
        v_left = np.concatenate((np.full((v.shape[0], 1), p.xi0), v[:, :-1]), axis=1)
        dz = p.rho * dw1 + np.sqrt(1.0 - p.rho**2) * self.sqrt_dt * z_perp
        log_st = (
            self._log_spot0
            + np.einsum("ij,ij->i", np.sqrt(v_left), dz)
            - 0.5 * v_left.sum(axis=1) * self.dt
        )
        return np.maximum(np.exp(log_st) - p.strike, 0.0)


class ExactSmoothedIntegrand:
    """Smoothed payoff driven by the exact (Cholesky) joint sampler.

    Maps (batch, 2N) iid normals through the Cholesky factor of the full
    covariance matrix of (W^1, W^H) at the grid points. No bridge variant:
    the covariance factor already fixes the coordinate ordering.
    """

    def __init__(self, params: ModelParams, n_steps: int):
        self.params = params
        self.n_steps = int(n_steps)
        self.dt = params.maturity / n_steps
        self._factor = _cached_factor(params, n_steps)
        t = params.maturity * np.arange(1, n_steps + 1) / n_steps
        self._drift = 0.5 * params.eta**2 * t ** (2.0 * params.hurst)
        self._log_spot0 = np.log(params.spot)

    @property
    def dimension(self) -> int:
        return 2 * self.n_steps

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=float))
        if z.shape[1] != self.dimension:
            raise ValueError(
                f"expected {self.dimension} Gaussian coordinates, got {z.shape[1]}"
            )
        p = self.params
        n = self.n_steps
        x = z @ self._factor.entries.T
        w1 = x[:, :n]
        wtilde = x[:, n:]
        dw1 = np.diff(w1, axis=1, prepend=0.0)
        v = p.xi0 * np.exp(p.eta * wtilde - self._drift)
        v_left = np.concatenate((np.full((v.shape[0], 1), p.xi0), v[:, :-1]), axis=1)
        int_sqrt_v_dw = np.einsum("ij,ij->i", np.sqrt(v_left), dw1)
        int_v_dt = v_left.sum(axis=1) * self.dt
        log_spot = self._log_spot0 + p.rho * int_sqrt_v_dw - 0.5 * p.rho**2 * int_v_dt
        total_var = (1.0 - p.rho**2) * int_v_dt
        return _call_from_log_spot(log_spot, p.strike, total_var)


def _convolve_batch(kernel, rows):
    """Row-wise linear convolution; direct for tiny kernels, FFT otherwise."""
    from .mathcore import convolve_rows

    n = kernel.size
    if n + rows.shape[1] - 1 < 32:
        out = np.zeros((rows.shape[0], n + rows.shape[1] - 1))
        for j in range(n):
            if kernel[j] != 0.0:
                out[:, j : j + rows.shape[1]] += kernel[j] * rows
        return out
    return convolve_rows(kernel, rows)


@lru_cache(maxsize=64)
def _cached_factor(params: ModelParams, n_steps: int) -> LowerTriangularFactor:
    return cholesky_factor(exact_covariance_matrix(params, n_steps))
