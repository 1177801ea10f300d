"""Experiment orchestration CLI.

Subcommands:
  skdv run <config>                 execute the configured suite
  skdv resume <checkpoint> <config> continue a checkpointed trajectory

Every suite writes CSV tables, PNG figures, and a summary.json with one
pass/fail entry per check into the output directory.  Exit status: 0 all
checks passed, 1 a check failed, 2 invalid configuration, 3 instability.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, ExperimentConfig, parse_config
from .ensemble import (energy_balance_residual, h1_bound_check,
                       moment_bound_check, run_ensemble)
from .functionals import FunctionalSample, fit_sandwich_constant
from .integrator import (InstabilityError, SimParams, integrate,
                         read_checkpoint, write_checkpoint, make_rng)
from .measures import (feller_probe, increment_moment, kb_average,
                       measure_distance, stationary_segment, tail_mass)
from .noise import build_forcing, hs_norm
from .profiles import random_band_limited, soliton
from .reporting import line_figure, loglog_figure, write_csv, write_summary
from .spectral import Field, apply_linear_semigroup

EXIT_OK, EXIT_CHECK_FAIL, EXIT_CONFIG, EXIT_INSTABILITY = 0, 1, 2, 3


class OutputLock:
    """Single CLI instance per output directory (artifact-race guard)."""

    def __init__(self, out_dir: Path):
        self.path = out_dir / ".skdv.lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output directory is locked by {self.path}; "
                              "remove the stale lock if no run is active")
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)


def _check(name, passed, **details):
    return {"name": name, "passed": bool(passed), **details}


def _l2_rel(a: np.ndarray, b: np.ndarray, dx: float) -> float:
    return float(np.sqrt(np.sum((a - b) ** 2) * dx)
                 / max(np.sqrt(np.sum(b**2) * dx), 1e-300))


# ---------------------------------------------------------------- suites


def suite_conservation(config: ExperimentConfig, out: Path, threads: int):
    """Deterministic soliton run: conservation drifts, translate error, and
    second-order dt refinement."""
    grid = config.grid()
    c = config.initial_speed
    x0 = config.initial_center_space
    u0 = soliton(grid, c, x0)
    T = config.t_end_time
    dts = [4 * config.dt_time, 2 * config.dt_time, config.dt_time]
    rows, shape_errors = [], []
    from .functionals import invariant_I
    i0 = invariant_I(u0)
    l0 = u0.l2_norm()
    exact = soliton(grid, c, x0 + c * T)
    for dt in dts:
        params = SimParams(grid=grid, lam=0.0, dt=dt, t_end=T,
                           dealias=config.dealias, seed=config.seed)
        rec = integrate(params, u0=u0, observe_every=10**9)
        uT = rec.final.u
        shape = _l2_rel(uT.values, exact.values, grid.dx)
        l2_drift = abs(uT.l2_norm() - l0) / l0
        i_drift = abs(invariant_I(uT) - i0) / abs(i0)
        rows.append((dt, shape, l2_drift, i_drift))
        shape_errors.append(shape)
    write_csv(out / "conservation.csv",
              ("dt", "shape_error_rel", "l2_drift_rel", "invariant_drift_rel"), rows)
    loglog_figure(out / "conservation_convergence.png", dts,
                  {"translate error": shape_errors}, "dt", "relative L2 error",
                  "soliton convergence", reference_slope=2.0)
    line_figure(out / "conservation_profile.png", grid.x,
                {"computed": rec.final.u.values, "exact translate": exact.values},
                "x", "u", f"soliton at T={T:g}")
    ratios = [shape_errors[i] / shape_errors[i + 1] for i in range(len(dts) - 1)]
    checks = [
        _check("soliton_shape_error", shape_errors[-1] < 1e-6,
               value=shape_errors[-1], tolerance=1e-6),
        _check("l2_conservation", rows[-1][2] < 1e-8, value=rows[-1][2],
               tolerance=1e-8),
        _check("invariant_conservation", rows[-1][3] < 1e-6, value=rows[-1][3],
               tolerance=1e-6),
        _check("strang_second_order", all(2.5 < r < 6.5 for r in ratios),
               refinement_ratios=ratios, expected=4.0),
    ]
    return checks


def suite_linear_exact(config: ExperimentConfig, out: Path, threads: int):
    """Nonlinearity off: the integrator must match the closed-form per-mode
    solution of the damped Airy equation."""
    grid = config.grid()
    rng = make_rng(config.seed, 997)
    u0 = random_band_limited(grid, rng, cutoff=grid.modes // 4, h1_norm=1.0)
    params = SimParams(grid=grid, lam=config.lambda_per_time, dt=config.dt_time,
                       t_end=config.t_end_time, nonlinear=False,
                       dealias=config.dealias, seed=config.seed)
    rec = integrate(params, u0=u0, observe_every=10**9)
    exact = apply_linear_semigroup(u0, rec.final.t, params.lam)
    err = _l2_rel(rec.final.u.values, exact.values, grid.dx)
    n_steps = int(round(config.t_end_time / config.dt_time))
    write_csv(out / "linear_exact.csv", ("steps", "relative_l2_error"),
              [(n_steps, err)])
    line_figure(out / "linear_exact_profile.png", grid.x,
                {"integrated": rec.final.u.values, "closed form": exact.values},
                "x", "u", f"linear flow after {n_steps} steps")
    return [_check("linear_exactness", err < 1e-10, value=err, tolerance=1e-10,
                   steps=n_steps)]


def _jackknife_se(values):
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < 2:
        return 0.0
    return float(np.sqrt((n - 1) / n * np.sum((values - values.mean()) ** 2)))


def suite_moments(config: ExperimentConfig, out: Path, threads: int):
    """Ensemble moment estimation with the energy balance and uniform-bound
    checks, dt-refinement adjudicated."""
    params = config.sim_params()
    u0 = config.initial_field()
    observe_every = max(1, int(round(config.observe_stride_time / params.dt)))
    series = run_ensemble(params, config.trajectories, u0=u0,
                          observe_every=observe_every, threads=threads)
    half_params = SimParams(grid=params.grid, lam=params.lam, dt=params.dt / 2,
                            t_end=params.t_end, forcing=params.forcing,
                            noise=params.noise, dealias=params.dealias,
                            nonlinear=params.nonlinear, seed=params.seed + 1,
                            blowup_ceiling=params.blowup_ceiling)
    series_half = run_ensemble(half_params, config.trajectories, u0=u0,
                               observe_every=2 * observe_every, threads=threads)

    t, resid, se = energy_balance_residual(series, params)
    t2, resid2, se2 = energy_balance_residual(series_half, half_params)
    bias = np.abs(resid - np.interp(t, t2, resid2))
    ok_dt = np.all(np.abs(resid) <= 4 * se + bias)
    ok_half = np.all(np.abs(resid2) <= 4 * se2)
    balance_check = _check("energy_balance", bool(ok_dt or ok_half),
                           max_abs_residual=float(np.max(np.abs(resid))),
                           max_tolerance=float(np.max(4 * se + bias)))

    checks = [balance_check]
    for k in (1, 2, 3):
        rep = moment_bound_check(series, params, k=k)
        checks.append(_check(rep.name, rep.passed, **rep.details))

    rng = make_rng(config.seed, 10_001)
    fields = [random_band_limited(params.grid, rng, cutoff=32,
                                  h1_norm=float(rng.uniform(0.1, 10.0)))
              for _ in range(1000)]
    sandwich_C = 1.2 * fit_sandwich_constant(fields)
    rep = h1_bound_check(series, params, sandwich_C)
    checks.append(_check(rep.name, rep.passed, sandwich_C=sandwich_C,
                         **rep.details))

    mean4, se4 = series.mean_se("l2_sq", power=2.0)
    mean2, se2m = series.mean_se("l2_sq")
    jensen_ok = np.all(mean4 >= mean2**2 - 4 * (se4 + 2 * mean2 * se2m))
    checks.append(_check("jensen_consistency", bool(jensen_ok)))

    header = ["t"]
    columns = [series.times]
    for name in series.raw:
        mean, se_track = series.mean_se(name)
        header += [f"{name}_mean", f"{name}_se"]
        columns += [mean, se_track]
    write_csv(out / "moments.csv", header, list(zip(*columns)))
    write_csv(out / "energy_balance_residual.csv",
              ("t", "residual_mean", "residual_se", "dt_bias"),
              list(zip(t, resid, se, bias)))

    phi = params.noise.build(params.grid)
    f_norm_sq = build_forcing(params.forcing, params.grid).l2_norm() ** 2
    lam = params.lam
    envelope = (np.exp(-lam * series.times) * mean2[0]
                + (hs_norm(phi) ** 2 + f_norm_sq / lam)
                * (1 - np.exp(-lam * series.times)) / lam) if lam > 0 else None
    curves = {"E||u||^2": mean2}
    if envelope is not None:
        curves["relaxation envelope"] = envelope
    line_figure(out / "moments_l2.png", series.times, curves, "t",
                "second moment", "L2 moment relaxation")
    line_figure(out / "energy_balance_residual.png", t,
                {"residual": resid, "+4SE+bias": 4 * se + bias,
                 "-4SE-bias": -(4 * se + bias)},
                "t", "residual", "energy balance residual")
    return checks


def suite_kb(config: ExperimentConfig, out: Path, threads: int):
    """Krylov-Bogoliubov averaging: tail mass, increment moments, and the
    convergence proxy on time-averaged measures."""
    params = config.sim_params()
    horizon = config.kb_horizon_time
    mu = kb_average(params, horizon, config.kb_stride_time, config.kb_replicas)

    cutoffs = [n for n in (1, 2, 4, 8, 16, 32, 64) if n < params.grid.modes // 2]
    tails = [tail_mass(mu, n) for n in cutoffs]
    write_csv(out / "tail_mass.csv", ("mode_cutoff", "tail_mass"),
              list(zip(cutoffs, tails)))
    loglog_figure(out / "tail_mass.png", cutoffs, {"tail mass": tails},
                  "mode cutoff", "tail second moment", "spectral tightness")
    monotone = all(tails[i + 1] <= tails[i] + 1e-15 for i in range(len(tails) - 1))
    checks = [_check("tail_mass_monotone", monotone, cutoffs=cutoffs, values=tails)]

    ns = [horizon / 8, horizon / 4, horizon / 2]
    dists, ses = [], []
    for n in ns:
        d = measure_distance(mu.restricted(n), mu.restricted(2 * n))
        jack = []
        for r in range(config.kb_replicas):
            keep = mu.replica != r
            sub = type(mu)(grid=mu.grid, horizon=mu.horizon, stride=mu.stride,
                           snapshots=mu.snapshots[keep], times=mu.times[keep],
                           replica=mu.replica[keep], seed=mu.seed,
                           params_hash=mu.params_hash)
            jack.append(measure_distance(sub.restricted(n), sub.restricted(2 * n)))
        dists.append(d)
        ses.append(_jackknife_se(jack))
    write_csv(out / "measure_distance.csv",
              ("horizon_n", "distance_mu_n_mu_2n", "jackknife_se"),
              list(zip(ns, dists, ses)))
    nonincreasing = all(dists[i + 1] <= dists[i] + 3 * (ses[i] + ses[i + 1])
                        for i in range(len(ns) - 1))
    checks.append(_check("kb_distance_nonincreasing", nonincreasing,
                         horizons=ns, distances=dists, standard_errors=ses))

    seg_times, specs, uf = stationary_segment(
        params, M=max(8, config.kb_replicas), burn_in=min(20.0, horizon / 4),
        span=max(10.0, 8 * params.dt), sample_dt=params.dt)
    lags = [4 * params.dt, 2 * params.dt, params.dt]
    incs = [increment_moment(seg_times, specs, d) for d in lags]
    write_csv(out / "increment_moment.csv", ("lag", "estimate", "se"),
              [(d, v, s) for d, (v, s) in zip(lags, incs)])
    decreasing = all(incs[i + 1][0] <= incs[i][0] + 3 * (incs[i][1] + incs[i + 1][1])
                     for i in range(len(lags) - 1))
    checks.append(_check("increment_moment_decreasing", decreasing,
                         lags=lags, estimates=[v for v, _ in incs]))
    line_figure(out / "increment_moment.png", lags,
                {"E||u(t+d)-u(t)||^2": [v for v, _ in incs]}, "lag d",
                "increment moment", "small-lag increments")
    return checks


def suite_feller(config: ExperimentConfig, out: Path, threads: int):
    """Shared-noise coupling: exact linear contraction and gap-halving
    response of the nonlinear flow."""
    params = config.sim_params()
    grid = params.grid
    rng = make_rng(config.seed, 31_337)
    direction = random_band_limited(grid, rng, cutoff=16, h1_norm=1.0)
    base = random_band_limited(grid, rng, cutoff=16, h1_norm=0.5)
    gap = config.feller_gap_h1
    horizon = config.feller_horizon_time

    # zero gap: identical paths under shared noise
    res_zero = feller_probe(base, base, params, horizon, replicas=4)
    checks = [_check("feller_zero_gap", float(np.max(res_zero.divergence)) == 0.0,
                     max_divergence=float(np.max(res_zero.divergence)))]

    # linear contraction is exact
    lin_params = SimParams(grid=grid, lam=params.lam, dt=params.dt,
                           t_end=horizon, forcing=params.forcing,
                           noise=params.noise, dealias=params.dealias,
                           nonlinear=False, seed=params.seed)
    res_lin = feller_probe(base, base + gap * direction, lin_params, horizon,
                           replicas=4, observe_every=max(1, int(round(
                               horizon / params.dt / 20))))
    expected = res_lin.initial_gap * np.exp(-params.lam * res_lin.times)
    lin_err = float(np.max(np.abs(res_lin.gap_series - expected)
                           / res_lin.initial_gap))
    checks.append(_check("feller_linear_contraction", lin_err < 1e-10,
                         value=lin_err, tolerance=1e-10))

    res_full = feller_probe(base, base + gap * direction, params, horizon,
                            replicas=config.feller_replicas)
    res_half = feller_probe(base, base + (gap / 2) * direction, params, horizon,
                            replicas=config.feller_replicas)
    med_full = float(np.median(res_full.divergence[:, -1]))
    med_half = float(np.median(res_half.divergence[:, -1]))
    ratio = med_full / med_half if med_half > 0 else np.inf
    checks.append(_check("feller_gap_halving", abs(ratio - 2.0) <= 0.4,
                         ratio=ratio, tolerance="2.0 +- 0.4 (20%)",
                         replicas=config.feller_replicas))
    write_csv(out / "feller_divergence.csv",
              ("t", "median_gap_full", "median_gap_half"),
              list(zip(res_full.times, np.median(res_full.divergence, axis=0),
                       np.median(res_half.divergence, axis=0))))
    line_figure(out / "feller_divergence.png", res_full.times,
                {"median sup gap (gap0)": np.median(res_full.divergence, axis=0),
                 "median sup gap (gap0/2)": np.median(res_half.divergence, axis=0)},
                "t", "H1 divergence", "shared-noise coupling", yscale="log")
    return checks


def suite_custom(config: ExperimentConfig, out: Path, threads: int):
    """Single-trajectory run recording the functional series."""
    params = config.sim_params()
    u0 = config.initial_field()
    phi = params.noise.build(params.grid)
    f = build_forcing(params.forcing, params.grid)
    observe_every = max(1, int(round(config.observe_stride_time / params.dt)))
    rows = []

    def observer(t, u):
        rows.append(FunctionalSample.from_field(t, u, f, phi, params.lam))
        return 0.0

    checkpoint_path = out / "checkpoint.skdv" if params.checkpoint_every else None
    rec = integrate(params, {"sample": observer}, u0=u0,
                    observe_every=observe_every, checkpoint_path=checkpoint_path)
    write_csv(out / "series.csv", FunctionalSample.CSV_COLUMNS,
              [r.as_row() for r in rows])
    if len(rows) > 1:
        ts = [r.t for r in rows]
        line_figure(out / "series.png", ts,
                    {"||u||^2": [r.l2_sq for r in rows],
                     "||u||_H1^2": [r.h1_sq for r in rows],
                     "I(u)": [r.I for r in rows]},
                    "t", "functional", "trajectory functionals")
    write_checkpoint(out / "final.skdv", rec.final, params)
    return [_check("custom_run", True, samples=len(rows),
                   final_t=float(rec.final.t))]


SUITES = {
    "conservation": suite_conservation,
    "linear-exact": suite_linear_exact,
    "moment-suite": suite_moments,
    "kb-suite": suite_kb,
    "feller-suite": suite_feller,
    "custom": suite_custom,
}


def _finish(config: ExperimentConfig, out: Path, checks, seed):
    summary = {
        "kind": config.kind,
        "config_hash": config.config_hash(),
        "master_seed": seed,
        "checks": checks,
        "all_passed": all(c["passed"] for c in checks),
    }
    write_summary(out / "summary.json", summary)
    (out / "config.resolved").write_text(config.canonical_text())
    for check in checks:
        status = "PASS" if check["passed"] else "FAIL"
        click.echo(f"[{status}] {check['name']}")
    return EXIT_OK if summary["all_passed"] else EXIT_CHECK_FAIL


@click.group()
def main():
    """Stochastic damped KdV experiment runner."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="skdv-out",
              show_default=True)
def run(config_path, seed, threads, out):
    """Execute the experiment suite named in CONFIG_PATH."""
    try:
        config = parse_config(config_path)
        if seed is not None:
            config = config.with_overrides(seed=seed)
            config.validate()
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    out_dir = Path(out)
    try:
        with OutputLock(out_dir):
            checks = SUITES[config.kind](config, out_dir, threads)
            sys.exit(_finish(config, out_dir, checks, config.seed))
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except InstabilityError as exc:
        click.echo(f"instability: {exc}", err=True)
        sys.exit(EXIT_INSTABILITY)


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--threads", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="skdv-out",
              show_default=True)
def resume(checkpoint, config_path, threads, out):
    """Continue a checkpointed trajectory to the configured horizon."""
    try:
        config = parse_config(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    params = config.sim_params()
    out_dir = Path(out)
    try:
        with OutputLock(out_dir):
            state = read_checkpoint(checkpoint, params)
            rec = integrate(params, state=state,
                            observers={"l2_sq": lambda t, u: u.l2_norm() ** 2},
                            observe_every=max(1, int(round(
                                config.observe_stride_time / params.dt))))
            write_checkpoint(out_dir / "final.skdv", rec.final, params)
            write_csv(out_dir / "resumed_series.csv", ("t", "l2_sq"),
                      list(zip(rec.times, rec.observations["l2_sq"])))
            checks = [_check("resume", True, resumed_from=float(state.t),
                             final_t=float(rec.final.t))]
            sys.exit(_finish(config, out_dir, checks, config.seed))
    except ValueError as exc:
        click.echo(f"resume error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except InstabilityError as exc:
        click.echo(f"instability: {exc}", err=True)
        sys.exit(EXIT_INSTABILITY)


if __name__ == "__main__":
    main()
