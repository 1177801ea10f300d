"""Noise operator, forcing construction, and exact increment sampling.

The covariance operator is realized as a Fourier-diagonal spectral profile:
mode k carries a real amplitude amp_k >= 0 with amp_{-k} = amp_k, so every
sampled field is real.  The law of the additive noise depends only on the
covariance, and a diagonal profile admits exact sampling of both the plain
increment and the damped-Airy stochastic convolution over a step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spectral import Field, Grid

__all__ = [
    "NoiseOperator",
    "ForcingSpec",
    "hs_norm",
    "hs_norm_dx",
    "sample_increment",
    "sample_stochastic_convolution_step",
    "build_forcing",
    "ou_step_std",
]


class NoiseOperator:
    """Fourier-diagonal Hilbert-Schmidt operator given by mode amplitudes."""

    __slots__ = ("grid", "amplitudes")

    def __init__(self, grid: Grid, amplitudes):
        amplitudes = np.asarray(amplitudes, dtype=float)
        if amplitudes.shape != (grid.modes,):
            raise ValueError(f"expected {grid.modes} amplitudes, got {amplitudes.shape}")
        if np.any(amplitudes < 0):
            raise ValueError("amplitudes must be nonnegative")
        # symmetry amp_{-k} = amp_k keeps sampled fields real
        idx = np.arange(grid.modes)
        mirrored = amplitudes[(-idx) % grid.modes]
        if not np.allclose(amplitudes, mirrored, rtol=1e-12, atol=0):
            raise ValueError("amplitudes must be symmetric under k -> -k")
        amplitudes = amplitudes.copy()
        amplitudes.flags.writeable = False
        self.grid = grid
        self.amplitudes = amplitudes

    @classmethod
    def zero(cls, grid: Grid) -> "NoiseOperator":
        return cls(grid, np.zeros(grid.modes))

    @classmethod
    def from_sobolev_decay(cls, grid: Grid, hs_amplitude: float, decay: float = 4.0,
                           cutoff: int | None = None) -> "NoiseOperator":
        """Profile amp_k = A (1+xi_k^2)^(-decay/2), A set so ||Phi||_HS(L2,L2)
        equals hs_amplitude; optional hard cutoff in mode index."""
        if hs_amplitude < 0:
            raise ValueError("hs_amplitude must be nonnegative")
        amp = (1.0 + grid.xi**2) ** (-decay / 2)
        if cutoff is not None:
            amp = np.where(np.abs(grid.wavenumber_index) <= cutoff, amp, 0.0)
        norm = np.sqrt(np.sum(amp**2))
        if hs_amplitude > 0 and norm == 0:
            raise ValueError("cutoff removed every mode")
        if norm > 0:
            amp *= hs_amplitude / norm
        return cls(grid, amp)

    @classmethod
    def single_mode(cls, grid: Grid, k: int, amplitude: float) -> "NoiseOperator":
        """Amplitude on modes +-k only (conjugate pair)."""
        amp = np.where(np.abs(grid.wavenumber_index) == abs(k), amplitude, 0.0)
        return cls(grid, amp)

    def is_zero(self) -> bool:
        return not np.any(self.amplitudes)


def hs_norm(phi: NoiseOperator, sobolev_order: float = 0.0) -> float:
    """HS(L2, H^m) norm: sqrt(sum_k (1+xi_k^2)^m amp_k^2)."""
    if sobolev_order < 0:
        raise ValueError("sobolev order must be nonnegative")
    w = (1.0 + phi.grid.xi**2) ** sobolev_order
    return float(np.sqrt(np.sum(w * phi.amplitudes**2)))


def hs_norm_dx(phi: NoiseOperator) -> float:
    """||dx Phi||_HS(L2,L2) = sqrt(sum_k xi_k^2 amp_k^2)."""
    return float(np.sqrt(np.sum(phi.grid.xi**2 * phi.amplitudes**2)))


def _draw_hermitian_unit(grid: Grid, rng: np.random.Generator, batch: int | None = None):
    """Standard complex Gaussian per mode with Hermitian symmetry.

    Paired modes +-k get an isotropic complex unit Gaussian (and its
    conjugate); the self-conjugate modes k=0 and k=N/2 get real unit
    Gaussians.  E|z_k|^2 = 1 for every k.  The draw order is fixed so the
    stream consumption is reproducible.
    """
    n = grid.modes
    shape = (n,) if batch is None else (batch, n)
    draws = rng.standard_normal(shape)
    half = n // 2
    z = np.zeros(shape, dtype=complex)
    a = draws[..., 0:half - 1]
    b = draws[..., half - 1:2 * half - 2]
    z[..., 1:half] = (a + 1j * b) / np.sqrt(2)
    z[..., half + 1:] = np.conj(z[..., half - 1:0:-1])
    z[..., 0] = draws[..., 2 * half - 2]
    z[..., half] = draws[..., 2 * half - 1]
    return z


def ou_step_std(phi: NoiseOperator, dt: float, lam: float) -> np.ndarray:
    """Per-mode standard deviation of the exact stochastic-convolution step.

    Variance amp_k^2 (1 - exp(-2*lambda*dt)) / (2*lambda), with the
    lambda -> 0 limit amp_k^2 * dt taken analytically.
    """
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0:
        return phi.amplitudes * np.sqrt(dt)
    return phi.amplitudes * np.sqrt(-np.expm1(-2.0 * lam * dt) / (2.0 * lam))


def sample_increment(phi: NoiseOperator, dt: float, rng: np.random.Generator) -> Field:
    """One plain noise increment Phi*dW over a step of length dt."""
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    z = _draw_hermitian_unit(phi.grid, rng)
    return Field.from_spectral(phi.grid, phi.amplitudes * np.sqrt(dt) * z)


def sample_stochastic_convolution_step(phi: NoiseOperator, dt: float, lam: float,
                                       rng: np.random.Generator) -> Field:
    """Exact per-mode Ornstein-Uhlenbeck increment of the mild form."""
    std = ou_step_std(phi, dt, lam)
    z = _draw_hermitian_unit(phi.grid, rng)
    return Field.from_spectral(phi.grid, std * z)


def sample_increment_batch(phi: NoiseOperator, dt: float, rng: np.random.Generator,
                           n: int, lam: float | None = None) -> np.ndarray:
    """(n, N) spectral increments from one stream; plain increments when lam
    is None, exact convolution steps otherwise.  For Monte Carlo law checks."""
    std = (phi.amplitudes * np.sqrt(dt) if lam is None
           else ou_step_std(phi, dt, lam))
    return std * _draw_hermitian_unit(phi.grid, rng, batch=n)


def sample_spectral_batch(phi: NoiseOperator, std: np.ndarray,
                          rngs: list[np.random.Generator]) -> np.ndarray:
    """Stack of independent spectral increments, one per trajectory stream."""
    out = np.empty((len(rngs), phi.grid.modes), dtype=complex)
    for i, rng in enumerate(rngs):
        out[i] = std * _draw_hermitian_unit(phi.grid, rng)
    return out


@dataclass(frozen=True)
class ForcingSpec:
    """Deterministic forcing profile; realized as a Field on a grid."""

    shape: str = "zero"  # zero | gaussian-bump | band-limited-random
    amplitude: float = 0.0
    width: float = 5.0
    cutoff: int = 8
    seed: int = 0


def build_forcing(spec: ForcingSpec, grid: Grid) -> Field:
    """Realize a forcing spec; the result has finite discrete H^3 norm."""
    if spec.shape == "zero":
        return Field.zero(grid)
    if spec.shape == "gaussian-bump":
        return Field.from_physical(
            grid, spec.amplitude * np.exp(-(grid.x / spec.width) ** 2))
    if spec.shape == "band-limited-random":
        rng = np.random.Generator(np.random.Philox(key=spec.seed))
        z = _draw_hermitian_unit(grid, rng)
        keep = np.abs(grid.wavenumber_index) <= spec.cutoff
        coeffs = np.where(keep, z, 0.0)
        f = Field.from_spectral(grid, coeffs)
        norm = f.l2_norm()
        if norm == 0:
            return f
        return f * (spec.amplitude / norm)
    raise ValueError(f"unsupported forcing shape {spec.shape!r}")
