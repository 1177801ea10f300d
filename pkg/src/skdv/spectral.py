"""Periodic spatial discretization, FFT transforms, exact linear flow.

Spectral coefficients are taken with respect to the L2-orthonormal complex
exponentials on the torus, so Parseval reads ||u||_{L2}^2 = sum_k |u_hat_k|^2
with no extra factors.  All operators on this layer are diagonal in that
basis except the nonlinear term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "apply_linear_semigroup",
    "derivative",
    "nonlinear_term",
]


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [-L/2, L/2) with N collocation points."""

    length: float
    modes: int
    x: np.ndarray = field(init=False, repr=False, compare=False)
    xi: np.ndarray = field(init=False, repr=False, compare=False)
    xi_odd: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"grid length must be positive, got {self.length}")
        if self.modes < 8 or self.modes % 2 != 0:
            raise ValueError(f"mode count must be an even integer >= 8, got {self.modes}")
        dx = self.length / self.modes
        x = -self.length / 2 + dx * np.arange(self.modes)
        xi = 2 * np.pi * np.fft.fftfreq(self.modes, d=dx)
        # frequency used by odd-order operators: the self-conjugate Nyquist
        # mode is zeroed there, otherwise a real field would acquire an
        # imaginary component under differentiation or the Airy phase
        xi_odd = xi.copy()
        xi_odd[self.modes // 2] = 0.0
        x.flags.writeable = False
        xi.flags.writeable = False
        xi_odd.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "xi_odd", xi_odd)

    @property
    def dx(self) -> float:
        return self.length / self.modes

    @property
    def wavenumber_index(self) -> np.ndarray:
        """Signed integer mode index k, fft ordered (xi_k = 2*pi*k/L)."""
        return np.rint(self.xi * self.length / (2 * np.pi)).astype(int)

    def to_spectral(self, values: np.ndarray) -> np.ndarray:
        return np.fft.fft(values, axis=-1) * (np.sqrt(self.length) / self.modes)

    def to_physical(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifft(coeffs * (self.modes / np.sqrt(self.length)), axis=-1).real

    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask: keep |k| < N/3, zero the top third of modes."""
        return (np.abs(self.wavenumber_index) < self.modes / 3).astype(float)


class Field:
    """Real field on a periodic grid with physical and spectral views.

    One representation is authoritative per instance; the other is derived
    lazily and cached.  Instances are immutable: the backing arrays are
    marked read-only and all operations return new fields.
    """

    __slots__ = ("grid", "_phys", "_spec")

    def __init__(self, grid: Grid, *, physical=None, spectral=None):
        if (physical is None) == (spectral is None):
            raise ValueError("exactly one of physical/spectral must be given")
        self.grid = grid
        if physical is not None:
            physical = np.asarray(physical, dtype=float)
            if physical.shape != (grid.modes,):
                raise ValueError(f"expected {grid.modes} samples, got {physical.shape}")
            physical = physical.copy()
            physical.flags.writeable = False
        else:
            spectral = np.asarray(spectral, dtype=complex)
            if spectral.shape != (grid.modes,):
                raise ValueError(f"expected {grid.modes} coefficients, got {spectral.shape}")
            spectral = spectral.copy()
            spectral.flags.writeable = False
        self._phys = physical
        self._spec = spectral

    @classmethod
    def from_physical(cls, grid: Grid, values) -> "Field":
        return cls(grid, physical=values)

    @classmethod
    def from_spectral(cls, grid: Grid, coeffs) -> "Field":
        return cls(grid, spectral=coeffs)

    @classmethod
    def zero(cls, grid: Grid) -> "Field":
        return cls(grid, spectral=np.zeros(grid.modes, dtype=complex))

    @property
    def values(self) -> np.ndarray:
        if self._phys is None:
            phys = self.grid.to_physical(self._spec)
            phys.flags.writeable = False
            self._phys = phys
        return self._phys

    @property
    def spectral(self) -> np.ndarray:
        if self._spec is None:
            spec = self.grid.to_spectral(self._phys)
            spec.flags.writeable = False
            self._spec = spec
        return self._spec

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.spectral) ** 2)))

    def __add__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field.from_spectral(self.grid, self.spectral + other.spectral)

    def __sub__(self, other: "Field") -> "Field":
        _check_same_grid(self, other)
        return Field.from_spectral(self.grid, self.spectral - other.spectral)

    def __mul__(self, scalar: float) -> "Field":
        return Field.from_spectral(self.grid, self.spectral * scalar)

    __rmul__ = __mul__


def _check_same_grid(a: Field, b: Field):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def semigroup_multiplier(grid: Grid, t: float, lam: float) -> np.ndarray:
    """Per-mode factor exp((i*xi^3 - lambda)*t) of the damped Airy flow.

    d/dt u_hat_k = (i*xi_k^3 - lambda) u_hat_k, since the transform of
    u_xxx is (i*xi)^3 u_hat = -i*xi^3 u_hat and the equation is
    du + (u_xxx + lambda*u) dt = 0.
    """
    return np.exp((1j * grid.xi_odd**3 - lam) * t)


def apply_linear_semigroup(u: Field, t: float, lam: float) -> Field:
    """Exact solution operator of du + (u_xxx + lambda*u) dt = 0."""
    if t < 0:
        raise ValueError(f"semigroup time must be nonnegative, got {t}")
    return Field.from_spectral(u.grid, semigroup_multiplier(u.grid, t, lam) * u.spectral)


def derivative(u: Field, order: int = 1) -> Field:
    """Spectral spatial derivative of order 1, 2 or 3."""
    if order not in (1, 2, 3):
        raise ValueError(f"unsupported derivative order {order}")
    xi = u.grid.xi if order % 2 == 0 else u.grid.xi_odd
    return Field.from_spectral(u.grid, (1j * xi) ** order * u.spectral)


def nonlinear_term(u: Field, dealias: bool = True) -> Field:
    """Pointwise u * u_x with optional 2/3-rule dealiasing.

    The derivative is taken spectrally, the product in physical space.  With
    dealiasing on, the top third of modes is zeroed before the product and
    the product itself is truncated, so band-limited inputs alias-free.
    """
    grid = u.grid
    spec = nonlinear_term_spectral(u.spectral, grid, dealias)
    return Field.from_spectral(grid, spec)


def nonlinear_term_spectral(spec: np.ndarray, grid: Grid, dealias: bool = True) -> np.ndarray:
    """Spectral-in, spectral-out u*u_x; supports leading batch axes."""
    if dealias:
        spec = spec * grid.dealias_mask()
    u = grid.to_physical(spec)
    ux = grid.to_physical(1j * grid.xi_odd * spec)
    out = grid.to_spectral(u * ux)
    if dealias:
        out = out * grid.dealias_mask()
    return out
