import numpy as np
import pytest

from skdv import (Field, Grid, NoiseSpec, SimParams, TrajectoryState,
                  InstabilityError, apply_linear_semigroup, integrate, step,
                  make_rng, write_checkpoint, read_checkpoint, hs_norm)
from skdv.integrator import Stepper
from skdv.noise import ForcingSpec
from skdv.profiles import soliton, random_band_limited


def linear_params(grid, lam=0.5, dt=0.05, t_end=1.0, **kw):
    return SimParams(grid=grid, lam=lam, dt=dt, t_end=t_end,
                     nonlinear=False, **kw)


class TestDeterministic:
    def test_zero_is_fixed_point(self, grid):
        p = SimParams(grid=grid, lam=0.3, dt=0.01, t_end=0.5)
        rec = integrate(p, u0=Field.zero(grid))
        assert rec.final.u.l2_norm() == 0.0

    def test_linear_matches_semigroup(self, grid):
        rng = make_rng(3, 0)
        u0 = random_band_limited(grid, rng, h1_norm=2.0)
        p = linear_params(grid, lam=0.4, dt=0.05, t_end=2.0)
        rec = integrate(p, u0=u0)
        exact = apply_linear_semigroup(u0, 2.0, 0.4)
        assert np.max(np.abs(rec.final.u.spectral - exact.spectral)) < 1e-10

    def test_damping_exact(self, grid, rng):
        u0 = random_band_limited(grid, rng, h1_norm=1.0)
        p = linear_params(grid, lam=1.3, dt=0.1, t_end=1.0)
        rec = integrate(p, u0=u0)
        assert rec.final.u.l2_norm() == pytest.approx(
            np.exp(-1.3) * u0.l2_norm(), rel=1e-12)

    @pytest.mark.slow
    def test_soliton_translation(self, grid_fine):
        c, T = 1.0, 1.0
        p = SimParams(grid=grid_fine, lam=0.0, dt=1e-3, t_end=T)
        rec = integrate(p, u0=soliton(grid_fine, c=c))
        expected = soliton(grid_fine, c=c, x0=c * T)
        err = np.max(np.abs(rec.final.u.values - expected.values))
        assert err < 1e-6

    def test_determinism_bit_exact(self, grid):
        rng = make_rng(8, 0)
        u0 = random_band_limited(grid, rng, h1_norm=1.5)
        p = SimParams(grid=grid, lam=0.2, dt=0.02, t_end=0.4)
        a = integrate(p, u0=u0).final.u.spectral
        b = integrate(p, u0=u0).final.u.spectral
        assert np.array_equal(a, b)

    def test_blowup_guard(self, grid):
        # a huge state under the inviscid nonlinearity trips the ceiling
        p = SimParams(grid=grid, lam=0.0, dt=0.5, t_end=5.0,
                      blowup_ceiling=10.0)
        u0 = soliton(grid, c=4.0)
        with pytest.raises(InstabilityError):
            integrate(p, u0=u0)

    def test_single_step_matches_integrate(self, grid, rng):
        u0 = random_band_limited(grid, rng, h1_norm=1.0)
        p = SimParams(grid=grid, lam=0.1, dt=0.05, t_end=0.05)
        s1 = step(TrajectoryState(t=0.0, u=u0, rng=None), p)
        rec = integrate(p, u0=u0)
        assert np.array_equal(s1.u.spectral, rec.final.u.spectral)

    def test_forcing_steady_state(self, grid):
        # linear dynamics with constant-in-time forcing relax toward the
        # steady profile solving (dx^3 + lam) u = f; by t=25 the transient
        # (e^{-25}) is negligible and only the O(dt^2) splitting bias remains
        f = ForcingSpec(shape="gaussian-bump", amplitude=0.1, width=5.0)
        errs = []
        for dt in (0.05, 0.025):
            p = linear_params(grid, lam=1.0, dt=dt, t_end=25.0, forcing=f)
            rec = integrate(p, u0=Field.zero(grid))
            stepper = Stepper(p)
            steady = stepper.f_spec / (p.lam - 1j * grid.xi_odd**3)
            errs.append(np.max(np.abs(rec.final.u.spectral - steady)))
        assert errs[0] < 1e-4
        assert 2.5 < errs[0] / errs[1] < 6.5


class TestConvergence:
    @pytest.mark.slow
    def test_strang_second_order(self, grid_fine):
        u0 = soliton(grid_fine, c=1.0)
        errs = []
        for dt in (4e-3, 2e-3, 1e-3):
            p = SimParams(grid=grid_fine, lam=0.0, dt=dt, t_end=1.0)
            rec = integrate(p, u0=u0)
            expected = soliton(grid_fine, c=1.0, x0=1.0)
            errs.append(np.max(np.abs(rec.final.u.values - expected.values)))
        r1 = errs[0] / errs[1]
        r2 = errs[1] / errs[2]
        assert 2.5 < r1 < 6.5
        assert 2.5 < r2 < 6.5


class TestStochastic:
    def test_rng_required_when_noisy(self, grid):
        p = SimParams(grid=grid, lam=0.5, dt=0.05, t_end=0.1,
                      noise=NoiseSpec(hs_amplitude=0.1))
        stepper = Stepper(p)
        with pytest.raises(ValueError):
            stepper.step_spectral(Field.zero(grid).spectral, None)

    def test_seed_reproducibility(self, grid):
        p = SimParams(grid=grid, lam=0.5, dt=0.05, t_end=1.0, seed=42,
                      noise=NoiseSpec(hs_amplitude=0.1))
        a = integrate(p).final.u.spectral
        b = integrate(p).final.u.spectral
        assert np.array_equal(a, b)
        p2 = SimParams(grid=grid, lam=0.5, dt=0.05, t_end=1.0, seed=43,
                       noise=NoiseSpec(hs_amplitude=0.1))
        assert not np.array_equal(a, integrate(p2).final.u.spectral)

    def test_increments_real(self, grid):
        p = SimParams(grid=grid, lam=0.5, dt=0.05, t_end=0.5, seed=1,
                      noise=NoiseSpec(hs_amplitude=0.1))
        u = integrate(p).final.u
        back = grid.to_spectral(u.values)
        assert np.max(np.abs(back - u.spectral)) < 1e-12

    @pytest.mark.slow
    def test_linear_ou_relaxation(self, grid):
        # linear dynamics from zero: E||u_t||^2 = ||Phi||^2 (1-e^{-2 lam t})/(2 lam)
        lam, amp, T = 0.5, 0.2, 2.0
        M = 400
        p = SimParams(grid=grid, lam=lam, dt=0.1, t_end=T, nonlinear=False,
                      noise=NoiseSpec(hs_amplitude=amp))
        stepper = Stepper(p)
        vals = np.empty(M)
        for m in range(M):
            rngs = [make_rng(77, m)]
            spec = np.zeros(grid.modes, dtype=complex)
            for _ in range(int(round(T / p.dt))):
                spec = stepper.step_spectral(spec, rngs)
            vals[m] = np.sum(np.abs(spec) ** 2)
        target = amp**2 * (1 - np.exp(-2 * lam * T)) / (2 * lam)
        se = np.std(vals, ddof=1) / np.sqrt(M)
        assert abs(np.mean(vals) - target) <= 4 * se


class TestCheckpoint:
    def params(self, grid, **kw):
        base = dict(grid=grid, lam=0.5, dt=0.05, t_end=1.0, seed=9,
                    noise=NoiseSpec(hs_amplitude=0.1))
        base.update(kw)
        return SimParams(**base)

    def test_round_trip(self, grid, tmp_path, rng):
        p = self.params(grid)
        state = TrajectoryState(t=0.35, u=random_band_limited(grid, rng),
                                rng=make_rng(9, 0), step_index=7)
        path = tmp_path / "snap.skdv"
        write_checkpoint(path, state, p)
        back = read_checkpoint(path, p)
        assert back.t == state.t
        assert back.step_index == state.step_index
        assert np.array_equal(back.u.spectral, state.u.spectral)
        restored = back.rng.bit_generator.state
        original = state.rng.bit_generator.state
        assert np.array_equal(restored["state"]["counter"],
                              original["state"]["counter"])
        assert np.array_equal(restored["state"]["key"], original["state"]["key"])
        assert restored["buffer_pos"] == original["buffer_pos"]

    def test_split_equals_unbroken_deterministic(self, grid, tmp_path, rng):
        u0 = random_band_limited(grid, rng, h1_norm=1.0)
        p = SimParams(grid=grid, lam=0.2, dt=0.05, t_end=1.0)
        whole = integrate(p, u0=u0).final.u.spectral
        p_half = SimParams(grid=grid, lam=0.2, dt=0.05, t_end=0.5)
        mid = integrate(p_half, u0=u0).final
        path = tmp_path / "mid.skdv"
        write_checkpoint(path, mid, p)
        resumed = read_checkpoint(path, p)
        split = integrate(p, state=resumed).final.u.spectral
        assert np.array_equal(whole, split)

    def test_split_equals_unbroken_stochastic(self, grid, tmp_path):
        p = self.params(grid)
        whole = integrate(p).final.u.spectral
        p_half = self.params(grid, t_end=0.5)
        mid = integrate(p_half).final
        path = tmp_path / "mid.skdv"
        write_checkpoint(path, mid, p)
        split = integrate(p, state=read_checkpoint(path, p)).final.u.spectral
        assert np.array_equal(whole, split)

    def test_rejects_wrong_magic(self, grid, tmp_path):
        path = tmp_path / "junk.skdv"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(ValueError):
            read_checkpoint(path, self.params(grid))

    def test_rejects_grid_mismatch(self, grid, grid_2pi, tmp_path, rng):
        p = self.params(grid)
        state = TrajectoryState(t=0.0, u=Field.zero(grid), rng=None)
        path = tmp_path / "snap.skdv"
        write_checkpoint(path, state, p)
        other = SimParams(grid=grid_2pi, lam=0.5, dt=0.05, t_end=1.0)
        with pytest.raises(ValueError):
            read_checkpoint(path, other)

    def test_rejects_params_mismatch(self, grid, tmp_path):
        p = self.params(grid)
        state = TrajectoryState(t=0.0, u=Field.zero(grid), rng=None)
        path = tmp_path / "snap.skdv"
        write_checkpoint(path, state, p)
        changed = self.params(grid, lam=0.7)
        with pytest.raises(ValueError):
            read_checkpoint(path, changed)

    def test_extending_horizon_allowed(self, grid, tmp_path):
        # t_end is not part of the fingerprint: a resumed run may go longer
        p = self.params(grid, t_end=0.5)
        final = integrate(p).final
        path = tmp_path / "snap.skdv"
        write_checkpoint(path, final, p)
        longer = self.params(grid, t_end=1.0)
        resumed = integrate(longer, state=read_checkpoint(path, longer)).final
        assert resumed.t == pytest.approx(1.0)

    def test_periodic_checkpointing(self, grid, tmp_path):
        path = tmp_path / "auto.skdv"
        p = self.params(grid, checkpoint_every=5)
        integrate(p, checkpoint_path=path)
        snap = read_checkpoint(path, p)
        assert snap.t == pytest.approx(1.0)


def test_params_validation(grid):
    with pytest.raises(ValueError):
        SimParams(grid=grid, lam=-0.1, dt=0.1, t_end=1.0)
    with pytest.raises(ValueError):
        SimParams(grid=grid, lam=0.1, dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        SimParams(grid=grid, lam=0.1, dt=0.1, t_end=-1.0)
