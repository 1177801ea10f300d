"""Initial-condition profiles used by experiments and tests."""

from __future__ import annotations

import numpy as np

from .spectral import Field, Grid, derivative

__all__ = ["soliton", "gaussian_bump", "random_band_limited"]


def soliton(grid: Grid, c: float = 1.0, x0: float = 0.0) -> Field:
    """Traveling-wave solution 3c sech^2(sqrt(c)(x - x0)/2) of
    u_t + u u_x + u_xxx = 0 (it translates with speed c), wrapped
    periodically."""
    if c <= 0:
        raise ValueError("soliton speed must be positive")
    shifted = (grid.x - x0 + grid.length / 2) % grid.length - grid.length / 2
    return Field.from_physical(grid, 3 * c / np.cosh(np.sqrt(c) * shifted / 2) ** 2)


def gaussian_bump(grid: Grid, amplitude: float = 1.0, width: float = 5.0,
                  x0: float = 0.0) -> Field:
    shifted = (grid.x - x0 + grid.length / 2) % grid.length - grid.length / 2
    return Field.from_physical(grid, amplitude * np.exp(-(shifted / width) ** 2))


def random_band_limited(grid: Grid, rng: np.random.Generator, cutoff: int = 16,
                        h1_norm: float = 1.0, zero_mean: bool = False) -> Field:
    """Random real field supported on modes |k| <= cutoff, rescaled to the
    requested H1 norm."""
    k = grid.wavenumber_index
    coeffs = np.zeros(grid.modes, dtype=complex)
    half = grid.modes // 2
    a = rng.standard_normal(grid.modes)
    z = (a[0:half - 1] + 1j * a[half - 1:2 * half - 2]) / np.sqrt(2)
    coeffs[1:half] = z
    coeffs[half + 1:] = np.conj(coeffs[half - 1:0:-1])
    coeffs[0] = 0.0 if zero_mean else a[-2]
    coeffs[np.abs(k) > cutoff] = 0.0
    u = Field.from_spectral(grid, coeffs)
    h1 = np.sqrt(u.l2_norm() ** 2 + derivative(u, 1).l2_norm() ** 2)
    if h1 == 0:
        return u
    return u * (h1_norm / h1)
