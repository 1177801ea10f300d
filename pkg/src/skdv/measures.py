"""Time-averaged empirical measures, tightness and stationarity diagnostics,
and the shared-noise coupling probe.

The empirical measure is realized by uniform-stride snapshot sampling of
trajectories started at zero, across independent replicas.  Tightness is
probed spectrally (tail mass of Fourier coefficients); on a torus this
cannot witness spatial mass escape, which is a documented limitation of
the periodic surrogate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .functionals import FunctionalSample
from .integrator import SimParams, Stepper, make_rng
from .spectral import Field

__all__ = [
    "EmpiricalMeasure",
    "FellerProbeResult",
    "kb_average",
    "stationary_segment",
    "tail_mass",
    "energy_identity_residual",
    "increment_moment",
    "measure_distance",
    "feller_probe",
]


@dataclass
class EmpiricalMeasure:
    """Snapshot cloud approximating a time-averaged transition measure."""

    grid: object
    horizon: float
    stride: float
    snapshots: np.ndarray          # (S, N) complex spectral coefficients
    times: np.ndarray              # (S,)
    replica: np.ndarray            # (S,) replica index per snapshot
    seed: int
    params_hash: str

    @property
    def size(self) -> int:
        return self.snapshots.shape[0]

    def functional_table(self, f: Field, phi, lam: float) -> list[FunctionalSample]:
        rows = []
        for t, spec in zip(self.times, self.snapshots):
            u = Field.from_spectral(self.grid, spec)
            rows.append(FunctionalSample.from_field(float(t), u, f, phi, lam))
        return rows

    def restricted(self, horizon: float) -> "EmpiricalMeasure":
        """Sub-measure using only snapshots with t <= horizon."""
        keep = self.times <= horizon + 1e-12
        return EmpiricalMeasure(grid=self.grid, horizon=horizon, stride=self.stride,
                                snapshots=self.snapshots[keep], times=self.times[keep],
                                replica=self.replica[keep], seed=self.seed,
                                params_hash=self.params_hash)


def kb_average(params: SimParams, horizon: float, stride: float,
               replicas: int = 10, include_t0: bool = False) -> EmpiricalMeasure:
    """Uniform-stride snapshot average of trajectories from u0 = 0.

    Snapshots at t = stride, 2*stride, ..., horizon over `replicas`
    independent streams, weighted uniformly.
    """
    if stride > horizon:
        raise ValueError("snapshot stride exceeds the averaging horizon")
    run_params = SimParams(grid=params.grid, lam=params.lam, dt=params.dt,
                           t_end=horizon, forcing=params.forcing, noise=params.noise,
                           dealias=params.dealias, nonlinear=params.nonlinear,
                           seed=params.seed, blowup_ceiling=params.blowup_ceiling)
    stepper = Stepper(run_params)
    grid = params.grid
    n_steps = int(round(horizon / params.dt))
    stride_steps = max(1, int(round(stride / params.dt)))
    spec = np.zeros((replicas, grid.modes), dtype=complex)
    rngs = ([make_rng(params.seed, i) for i in range(replicas)]
            if stepper.noise_on else None)
    snaps, times = [], []
    if include_t0:
        snaps.append(spec.copy())
        times.append(0.0)
    for i in range(1, n_steps + 1):
        spec = stepper.step_spectral(spec, rngs)
        if i % stride_steps == 0:
            snaps.append(spec.copy())
            times.append(i * params.dt)
    # time-major stacking: snapshot s*replicas + r is (time s, replica r)
    snapshots = np.stack(snaps).reshape(-1, grid.modes)
    snap_times = np.repeat(times, replicas)
    replica_ids = np.tile(np.arange(replicas), len(times))
    return EmpiricalMeasure(grid=grid, horizon=horizon, stride=stride,
                            snapshots=snapshots, times=snap_times,
                            replica=replica_ids, seed=params.seed,
                            params_hash=run_params.params_hash())


def stationary_segment(params: SimParams, M: int, burn_in: float, span: float,
                       sample_dt: float, u0: Field | None = None):
    """Record full spectral snapshots over a quasi-stationary segment.

    Runs M trajectories for burn_in + span time units and keeps snapshots
    every sample_dt after burn-in.  Returns (times, specs, ufs) with specs of
    shape (M, T, N) and the forcing pairing track alongside.
    """
    total = burn_in + span
    run_params = SimParams(grid=params.grid, lam=params.lam, dt=params.dt,
                           t_end=total, forcing=params.forcing, noise=params.noise,
                           dealias=params.dealias, nonlinear=params.nonlinear,
                           seed=params.seed, blowup_ceiling=params.blowup_ceiling)
    stepper = Stepper(run_params)
    grid = params.grid
    spec = (np.tile(u0.spectral, (M, 1)) if u0 is not None
            else np.zeros((M, grid.modes), dtype=complex))
    rngs = [make_rng(params.seed, i) for i in range(M)] if stepper.noise_on else None
    n_steps = int(round(total / params.dt))
    burn_steps = int(round(burn_in / params.dt))
    stride = max(1, int(round(sample_dt / params.dt)))
    f_vals = stepper.forcing.values
    times, snaps, ufs = [], [], []
    for i in range(1, n_steps + 1):
        spec = stepper.step_spectral(spec, rngs)
        if i >= burn_steps and (i - burn_steps) % stride == 0:
            times.append(i * params.dt)
            snaps.append(spec.copy())
            ufs.append(np.sum(grid.to_physical(spec) * f_vals, axis=-1) * grid.dx)
    specs = np.stack(snaps, axis=1)          # (M, T, N)
    uf = np.stack(ufs, axis=1)               # (M, T)
    return np.asarray(times), specs, uf


def tail_mass(mu: EmpiricalMeasure, n_cutoff: int) -> float:
    """Measure-average of sum_{|k| >= n_cutoff} |u_hat_k|^2."""
    grid = mu.grid
    if n_cutoff >= grid.modes:
        raise ValueError("cutoff exceeds the number of grid modes")
    k = grid.wavenumber_index
    tail = np.abs(k) >= n_cutoff
    return float(np.mean(np.sum(np.abs(mu.snapshots[:, tail]) ** 2, axis=1)))


def energy_identity_residual(times, l2_sq, uf, hs_sq: float, lam: float,
                             T: float):
    """Residual of the stationary expected-energy identity over a window:

        E[||z_T||^2] - exp(-2*lam*T) E[||z_0||^2]
            = int_0^T exp(-2*lam*(T-s)) (E[(z_s,f)] + ||Phi||_HS^2) ds

    `l2_sq` and `uf` are (M, T) per-trajectory tracks over a
    (quasi-)stationary segment; returns (residual, standard error).
    """
    times = np.asarray(times, dtype=float)
    span = times[-1] - times[0]
    if T > span + 1e-12:
        raise ValueError("window exceeds the recorded segment")
    n_win = int(round(T / (times[1] - times[0])))
    s = times[:n_win + 1] - times[0]
    weight = np.exp(-2 * lam * (T - s))
    # average the windowed residual over all admissible window starts
    resids = []
    for start in range(len(times) - n_win):
        sl = slice(start, start + n_win + 1)
        rhs = np.trapezoid(weight * (uf[:, sl] + hs_sq), s, axis=1)
        lhs = l2_sq[:, start + n_win] - np.exp(-2 * lam * T) * l2_sq[:, start]
        resids.append(lhs - rhs)
    per_traj = np.mean(resids, axis=0)
    mean = float(per_traj.mean())
    se = float(per_traj.std(ddof=1) / np.sqrt(len(per_traj)))
    return mean, se


def increment_moment(times, specs: np.ndarray, lag: float):
    """Stationary-segment estimate of E||u_{t+d} - u_t||_{L2}^2.

    `specs` is (M, T, N) spectral snapshots at uniform sample times.
    """
    times = np.asarray(times, dtype=float)
    if lag < 0 or lag > times[-1] - times[0] + 1e-12:
        raise ValueError("lag outside the recorded span")
    dt_s = times[1] - times[0]
    shift = int(round(lag / dt_s))
    if abs(shift * dt_s - lag) > 1e-9 * max(1.0, abs(lag)):
        raise ValueError("lag is not a multiple of the sample spacing")
    if shift == 0:
        return 0.0, 0.0
    diffs = specs[:, shift:, :] - specs[:, :-shift, :]
    sq = np.sum(np.abs(diffs) ** 2, axis=-1)     # (M, T-shift)
    per_traj = sq.mean(axis=1)
    return (float(per_traj.mean()),
            float(per_traj.std(ddof=1) / np.sqrt(len(per_traj))))


def _observable_cloud(mu: EmpiricalMeasure) -> np.ndarray:
    """(S, 4) joint observables: ||u||_L2, ||u||_H1, I(u), int u^3."""
    grid = mu.grid
    spec = mu.snapshots
    l2 = np.sqrt(np.sum(np.abs(spec) ** 2, axis=1))
    h1 = np.sqrt(np.sum((1 + grid.xi**2) * np.abs(spec) ** 2, axis=1))
    u = grid.to_physical(spec)
    cubic = np.sum(u**3, axis=1) * grid.dx
    dxsq = np.sum(grid.xi**2 * np.abs(spec) ** 2, axis=1)
    inv = dxsq - cubic / 3.0
    return np.column_stack([l2, h1, inv, cubic])


def measure_distance(a: EmpiricalMeasure, b: EmpiricalMeasure,
                     max_samples: int = 4000) -> float:
    """Energy distance between the snapshot clouds on the joint observable
    vector; symmetric, zero iff the clouds agree as point sets."""
    if a.grid != b.grid:
        raise ValueError("measures live on different grids")
    if a.size == 0 or b.size == 0:
        raise ValueError("empty empirical measure")
    xa = _observable_cloud(a)
    xb = _observable_cloud(b)
    # deterministic thinning keeps the pairwise cost bounded
    if len(xa) > max_samples:
        xa = xa[:: int(np.ceil(len(xa) / max_samples))]
    if len(xb) > max_samples:
        xb = xb[:: int(np.ceil(len(xb) / max_samples))]
    cross = cdist(xa, xb).mean()
    within_a = pdist(xa).mean() if len(xa) > 1 else 0.0
    within_b = pdist(xb).mean() if len(xb) > 1 else 0.0
    return float(2 * cross - within_a - within_b)


@dataclass
class FellerProbeResult:
    initial_gap: float
    times: np.ndarray              # (T,)
    divergence: np.ndarray         # (R, T) running sup of ||u - v||_H1
    gap_series: np.ndarray         # (R, T) instantaneous ||u_t - v_t||_H1
    growth_rate: float             # fitted exponent of the median divergence
    contained_fraction: float      # replicas with divergence <= G * initial gap

    @property
    def fitted_amplification(self) -> float:
        return float(np.exp(self.growth_rate * (self.times[-1] - self.times[0])))


def feller_probe(u0: Field, v0: Field, params: SimParams, t_end: float,
                 replicas: int = 50, observe_every: int = 10) -> FellerProbeResult:
    """Evolve coupled pairs from u0 and v0 under the SAME noise path per
    replica and record the running sup of the H1 distance."""
    if u0.grid != v0.grid:
        raise ValueError("initial conditions live on different grids")
    grid = params.grid
    run_params = SimParams(grid=grid, lam=params.lam, dt=params.dt, t_end=t_end,
                           forcing=params.forcing, noise=params.noise,
                           dealias=params.dealias, nonlinear=params.nonlinear,
                           seed=params.seed, blowup_ceiling=params.blowup_ceiling)
    stepper = Stepper(run_params)
    det_stepper = Stepper(SimParams(grid=grid, lam=params.lam, dt=params.dt,
                                    t_end=t_end, forcing=params.forcing,
                                    dealias=params.dealias, nonlinear=params.nonlinear,
                                    seed=params.seed,
                                    blowup_ceiling=params.blowup_ceiling))
    weight_h1 = 1.0 + grid.xi**2
    spec_u = np.tile(u0.spectral, (replicas, 1))
    spec_v = np.tile(v0.spectral, (replicas, 1))
    rngs = ([make_rng(params.seed, i) for i in range(replicas)]
            if stepper.noise_on else None)
    gap0 = float(np.sqrt(np.sum(weight_h1 * np.abs(u0.spectral - v0.spectral) ** 2)))
    n_steps = int(round(t_end / params.dt))
    running = np.full(replicas, gap0)
    times = [0.0]
    series = [running.copy()]
    gaps = [np.full(replicas, gap0)]
    from .noise import _draw_hermitian_unit
    for i in range(1, n_steps + 1):
        spec_u = det_stepper.step_spectral(spec_u)
        spec_v = det_stepper.step_spectral(spec_v)
        if rngs is not None:
            # lockstep: one shared convolution increment per replica per step
            incs = np.empty((replicas, grid.modes), dtype=complex)
            for r, rng in enumerate(rngs):
                incs[r] = stepper.ou_std * _draw_hermitian_unit(grid, rng)
            spec_u = spec_u + incs
            spec_v = spec_v + incs
        gap = np.sqrt(np.sum(weight_h1 * np.abs(spec_u - spec_v) ** 2, axis=-1))
        running = np.maximum(running, gap)
        if i % observe_every == 0 or i == n_steps:
            times.append(i * params.dt)
            series.append(running.copy())
            gaps.append(gap.copy())
    times = np.asarray(times)
    divergence = np.stack(series, axis=1)     # (R, T)
    gap_series = np.stack(gaps, axis=1)       # (R, T)
    median = np.median(divergence, axis=0)
    if gap0 > 0 and len(times) > 1 and np.all(median > 0):
        rate = float(np.polyfit(times, np.log(median), 1)[0])
    else:
        rate = 0.0
    amp = np.exp(rate * (times[-1] - times[0]))
    contained = (float(np.mean(divergence[:, -1] <= amp * gap0 * (1 + 1e-9)))
                 if gap0 > 0 else 1.0)
    return FellerProbeResult(initial_gap=gap0, times=times, divergence=divergence,
                             gap_series=gap_series, growth_rate=rate,
                             contained_fraction=contained)
