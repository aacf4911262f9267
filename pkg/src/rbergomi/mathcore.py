"""Shared numerical primitives.

Normal-distribution helpers, probabilists' Gauss-Hermite rules, Cholesky
factorization and FFT-based linear convolution, plus the zero-rate
Black-Scholes call formula parameterized by total variance. Everything here
is pure and reentrant; heavy lifting is delegated to numpy/scipy.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr, ndtri


class NotPositiveDefiniteError(ValueError):
    """Raised when a matrix handed to the Cholesky routine is numerically
    not positive definite (pivot below ``PIVOT_FLOOR``)."""


PIVOT_FLOOR = 1e-14

# below this output length the direct O(n^2) sum beats the FFT round trip
_DIRECT_CONV_CUTOFF = 32


@dataclass(frozen=True)
class QuadratureRule1D:
    """Nodes and weights of a univariate rule normalized against the
    standard normal density (weights sum to 1)."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if len(self.nodes) != len(self.weights):
            raise ValueError("nodes and weights must have equal length")
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)


@dataclass(frozen=True)
class LowerTriangularFactor:
    """Lower-triangular Cholesky factor L with L @ L.T equal to the input."""

    dimension: int
    entries: np.ndarray

    def __post_init__(self):
        if self.entries.shape != (self.dimension, self.dimension):
            raise ValueError("factor entries must be square of the stated dimension")
        self.entries.setflags(write=False)


def normal_cdf(x):
    """Standard normal CDF, vectorized."""
    return ndtr(x)


def inverse_normal_cdf(u):
    """Standard normal quantile for u in the open interval (0, 1).

    Rejects the endpoints rather than returning +-inf so downstream code
    never propagates infinities.
    """
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0.0) or np.any(u_arr >= 1.0):
        raise ValueError("inverse_normal_cdf requires 0 < u < 1")
    out = ndtri(u_arr)
    return float(out) if np.isscalar(u) or u_arr.ndim == 0 else out


def black_scholes_call(s0, k, total_variance):
    """Zero-rate Black-Scholes call price.

    Parameters
    ----------
    s0 : float or ndarray
        Spot price, strictly positive.
    k : float or ndarray
        Strike, nonnegative.
    total_variance : float or ndarray
        Total variance of the log price over the option life (sigma^2 * T,
        not an annualized volatility), nonnegative.
    """
    s0_arr = np.asarray(s0, dtype=float)
    k_arr = np.asarray(k, dtype=float)
    v_arr = np.asarray(total_variance, dtype=float)
    if np.any(s0_arr <= 0.0):
        raise ValueError("spot must be positive")
    if np.any(k_arr < 0.0):
        raise ValueError("strike must be nonnegative")
    if np.any(v_arr < 0.0):
        raise ValueError("total variance must be nonnegative")
    out = _call_from_log_spot(np.log(s0_arr), k_arr, v_arr)
    scalar = all(np.isscalar(a) or np.asarray(a).ndim == 0 for a in (s0, k, total_variance))
    return float(out) if scalar else out


def _call_from_log_spot(log_spot, strike, total_variance):
    """Call value from log spot; saturates cleanly for extreme arguments.

    Handles total_variance == 0 (intrinsic value) and strike == 0 (forward)
    without forming 0/0, which matters when quadrature nodes push the
    integrand into the far tails.
    """
    log_spot = np.asarray(log_spot, dtype=float)
    strike = np.asarray(strike, dtype=float)
    v = np.asarray(total_variance, dtype=float)
    spot = np.exp(log_spot)
    sqrt_v = np.sqrt(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_moneyness = log_spot - np.log(np.where(strike > 0.0, strike, 1.0))
        d1 = (log_moneyness + 0.5 * v) / sqrt_v
        d2 = d1 - sqrt_v
    price = spot * ndtr(d1) - strike * ndtr(d2)
    intrinsic = np.maximum(spot - strike, 0.0)
    price = np.where(v > 0.0, price, intrinsic)
    price = np.where(strike > 0.0, price, spot)
    return price


@lru_cache(maxsize=None)
def gauss_hermite_rule(node_count: int) -> QuadratureRule1D:
    """Probabilists' Gauss-Hermite rule with ``node_count`` points.

    Integrates polynomials of degree <= 2*node_count - 1 exactly against the
    standard normal density; weights sum to 1. Nodes come from numpy's
    symmetric tridiagonal eigen-solve (Golub-Welsch).
    """
    if node_count < 1:
        raise ValueError("node_count must be >= 1")
    if node_count == 1:
        return QuadratureRule1D(np.zeros(1), np.ones(1))
    nodes, weights = np.polynomial.hermite_e.hermegauss(node_count)
    weights = weights / np.sqrt(2.0 * np.pi)
    if not (np.all(np.isfinite(nodes)) and np.all(np.isfinite(weights))):
        # the recurrence-based weight evaluation overflows somewhere past 257
        raise ValueError(f"Hermite rule of size {node_count} is not representable")
    # enforce exact symmetry about 0 (eigensolve is symmetric only to rounding)
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    return QuadratureRule1D(nodes, weights)


def cholesky_factor(matrix) -> LowerTriangularFactor:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        If the matrix is numerically not PD (a pivot falls below
        ``PIVOT_FLOOR``) or not symmetric to 1e-12.
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise ValueError("matrix must be symmetric to 1e-12")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"Cholesky failed: {exc}") from exc
    if np.min(np.diag(lower)) < PIVOT_FLOOR:
        raise NotPositiveDefiniteError(
            f"Cholesky pivot below {PIVOT_FLOOR:g}; matrix numerically singular"
        )
    return LowerTriangularFactor(a.shape[0], lower)


def discrete_convolution(a, b) -> np.ndarray:
    """Full linear convolution of two 1-d sequences.

    Uses direct summation for short outputs and a zero-padded FFT (length =
    next power of two >= len(a)+len(b)-1) otherwise; both paths agree to
    1e-10 in relative max norm.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 1 or b.ndim != 1 or a.size == 0 or b.size == 0:
        raise ValueError("inputs must be non-empty 1-d sequences")
    out_len = a.size + b.size - 1
    if out_len < _DIRECT_CONV_CUTOFF:
        return np.convolve(a, b)
    return convolve_rows(a, b[None, :])[0]


def convolve_rows(kernel, rows) -> np.ndarray:
    """Linear convolution of one kernel with each row of a 2-d array via FFT.

    Returns shape (n_rows, len(kernel) + rows.shape[1] - 1). Batched form of
    ``discrete_convolution`` used by the path simulators.
    """
    kernel = np.asarray(kernel, dtype=float)
    rows = np.asarray(rows, dtype=float)
    out_len = kernel.size + rows.shape[1] - 1
    n_fft = 1 << (out_len - 1).bit_length()
    kernel_hat = np.fft.rfft(kernel, n_fft)
    rows_hat = np.fft.rfft(rows, n_fft, axis=1)
    out = np.fft.irfft(rows_hat * kernel_hat, n_fft, axis=1)
    return out[:, :out_len]
