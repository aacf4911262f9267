"""Hierarchical input reorderings: Brownian bridge and Richardson extrapolation.

The bridge construction fills in a Brownian path from coarse to fine: the
first Gaussian coordinate fixes the terminal value, later coordinates refine
dyadic midpoints level by level. This leaves the path's law unchanged (the
map is orthogonal after scaling) but concentrates variance in the leading
coordinates, which is what sparse grids and lattice rules exploit.

Richardson extrapolation combines price estimates at nested step sizes to
annihilate leading-order bias terms, assuming a first-order weak-error
expansion in the step size.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@dataclass(frozen=True)
class BridgeSchedule:
    """Midpoint-refinement order for a power-of-two grid.

    ``level_order[j]`` is the (1-based) grid point determined by Gaussian
    coordinate j; the first coordinate always maps to the terminal point.
    """

    grid_size: int
    level_order: np.ndarray

    def __post_init__(self):
        self.level_order.setflags(write=False)


@dataclass(frozen=True)
class RichardsonTableau:
    """Estimates I(J, 0) at step sizes dt_0 * 2^{-J}, coarse first."""

    levels: tuple
    depth: int

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if len(self.levels) < self.depth + 1:
            raise ValueError("need at least depth + 1 level estimates")


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def bridge_schedule(n_steps: int) -> BridgeSchedule:
    """Coordinate-to-grid-point assignment of the bridge construction.

    Terminal point first, then dyadic midpoints coarsest level first, ties
    broken left to right.
    """
    if not _is_power_of_two(n_steps):
        raise ValueError("grid size must be a power of two")
    order = [n_steps]
    span = n_steps
    while span >= 2:
        order.extend(range(span // 2, n_steps, span))
        span //= 2
    return BridgeSchedule(n_steps, np.asarray(order, dtype=int))


@lru_cache(maxsize=32)
def _unit_bridge_matrix(n_steps: int) -> np.ndarray:
    """Matrix A with increments = z @ A.T for horizon T = 1.

    Row i holds the coefficients of the iid input z on the i-th increment.
    Built by running the midpoint recursion on coefficient rows: the bridged
    value at the midpoint of (t_l, t_r) is (B_l + B_r)/2 + sqrt(span/4) z.
    """
    if not _is_power_of_two(n_steps):
        raise ValueError("grid size must be a power of two")
    n = n_steps
    # coeff[i] = row of z-coefficients for B at grid point i+1 (time (i+1)/n)
    coeff = np.zeros((n, n))
    coeff[n - 1, 0] = 1.0  # B_T = sqrt(T) z_1, here T = 1
    next_z = 1
    span = n
    while span >= 2:
        half = span // 2
        for left in range(0, n, span):
            mid = left + half
            right = left + span
            left_row = coeff[left - 1] if left > 0 else 0.0
            row = 0.5 * (left_row + coeff[right - 1])
            row = np.array(row, dtype=float, copy=True)
            row[next_z] += np.sqrt(span / n / 4.0)
            coeff[mid - 1] = row
            next_z += 1
        span = half
    increments = np.diff(coeff, axis=0, prepend=np.zeros((1, n)))
    increments.setflags(write=False)
    return increments


def bridge_increment_matrix(n_steps: int, horizon: float) -> np.ndarray:
    """Linear map from iid normals to Brownian increments over ``horizon``."""
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    return np.sqrt(horizon) * _unit_bridge_matrix(n_steps)


def bridge_transform(schedule: BridgeSchedule, z, horizon: float) -> np.ndarray:
    """Brownian increments from iid normals in bridge order.

    Accepts a single length-N vector or a (batch, N) array; the output has
    exactly the law of standard Brownian increments on the uniform grid and
    the terminal value sqrt(horizon) * z_1.
    """
    z = np.asarray(z, dtype=float)
    n = schedule.grid_size
    if z.shape[-1] != n:
        raise ValueError("input length must equal the grid size")
    a = bridge_increment_matrix(n, horizon)
    return z @ a.T


def richardson_weights(depth: int, n_levels: int) -> np.ndarray:
    """Coefficients of I(J_max, depth) on the raw level estimates.

    Useful for propagating per-level statistical errors through the linear
    combination; weights sum to 1.
    """
    out = np.zeros(n_levels)
    for j in range(n_levels):
        unit = np.zeros(n_levels)
        unit[j] = 1.0
        out[j] = richardson_combine(RichardsonTableau(tuple(unit), depth))
    return out


def richardson_combine(tableau: RichardsonTableau) -> float:
    """Apply the extrapolation recursion and return I(J_max, depth).

    I(J, K) = (2^K I(J, K-1) - I(J-1, K-1)) / (2^K - 1); a depth-K
    combination annihilates bias terms c_1 dt + ... + c_K dt^K exactly.
    """
    current = [float(v) for v in tableau.levels]
    for k in range(1, tableau.depth + 1):
        factor = 2.0**k
        current = [
            (factor * current[j] - current[j - 1]) / (factor - 1.0)
            for j in range(1, len(current))
        ]
    return current[-1]
