import numpy as np
import pytest

from skdv import (Field, NoiseSpec, SimParams, kb_average, tail_mass,
                  energy_identity_residual, increment_moment, measure_distance,
                  feller_probe, hs_norm, make_rng)
from skdv.measures import EmpiricalMeasure, stationary_segment
from skdv.profiles import soliton, random_band_limited


def stochastic_params(grid, seed=0, **kw):
    base = dict(grid=grid, lam=0.5, dt=0.05, t_end=1.0, seed=seed,
                noise=NoiseSpec(hs_amplitude=0.1))
    base.update(kw)
    return SimParams(**base)


def point_mass(grid, u, n=6):
    spec = np.tile(u.spectral, (n, 1))
    return EmpiricalMeasure(grid=grid, horizon=1.0, stride=0.2, snapshots=spec,
                            times=np.linspace(0.2, 1.0, n),
                            replica=np.zeros(n, dtype=int), seed=0,
                            params_hash="x")


class TestKbAverage:
    def test_shapes_and_ordering(self, grid):
        p = stochastic_params(grid, seed=2)
        mu = kb_average(p, horizon=1.0, stride=0.25, replicas=3)
        assert mu.size == 4 * 3
        # time-major: the first `replicas` snapshots share the first time
        assert np.all(mu.times[:3] == 0.25)
        assert list(mu.replica[:3]) == [0, 1, 2]

    def test_deterministic_point_mass(self, grid):
        # noise off from u0 = 0: every snapshot is the zero field
        p = SimParams(grid=grid, lam=0.5, dt=0.05, t_end=1.0)
        mu = kb_average(p, horizon=0.5, stride=0.25, replicas=2)
        assert np.all(mu.snapshots == 0)

    def test_stride_exceeds_horizon(self, grid):
        with pytest.raises(ValueError):
            kb_average(stochastic_params(grid), horizon=0.5, stride=1.0)

    def test_restriction_is_prefix(self, grid):
        p = stochastic_params(grid, seed=3)
        mu = kb_average(p, horizon=1.0, stride=0.25, replicas=2)
        sub = mu.restricted(0.5)
        assert sub.size == 4
        assert np.array_equal(sub.snapshots, mu.snapshots[:4])

    def test_replica_prefix_stability(self, grid):
        p = stochastic_params(grid, seed=4)
        small = kb_average(p, horizon=0.5, stride=0.25, replicas=2)
        large = kb_average(p, horizon=0.5, stride=0.25, replicas=5)
        keep = large.replica < 2
        assert np.array_equal(small.snapshots, large.snapshots[keep])


class TestTailMass:
    def test_zero_measure(self, grid):
        mu = point_mass(grid, Field.zero(grid))
        assert tail_mass(mu, 4) == 0.0

    def test_full_mass_at_zero_cutoff(self, grid, rng):
        u = random_band_limited(grid, rng, h1_norm=2.0)
        mu = point_mass(grid, u)
        assert tail_mass(mu, 0) == pytest.approx(u.l2_norm() ** 2, rel=1e-12)

    def test_monotone_in_cutoff(self, grid, rng):
        u = random_band_limited(grid, rng, h1_norm=2.0, cutoff=40)
        mu = point_mass(grid, u)
        masses = [tail_mass(mu, n) for n in (0, 4, 16, 41)]
        assert all(b <= a for a, b in zip(masses, masses[1:]))
        assert masses[-1] == 0.0

    def test_cutoff_bound(self, grid):
        with pytest.raises(ValueError):
            tail_mass(point_mass(grid, Field.zero(grid)), grid.modes)


class TestStationarySegment:
    def test_shapes(self, grid):
        p = stochastic_params(grid, seed=5)
        times, specs, uf = stationary_segment(p, M=3, burn_in=0.5, span=0.5,
                                              sample_dt=0.25)
        assert specs.shape[0] == 3
        assert specs.shape[2] == grid.modes
        assert uf.shape == specs.shape[:2]
        assert np.all(np.diff(times) > 0)


class TestEnergyIdentity:
    def test_linear_stationary_oracle(self, grid):
        # exact OU samples: draw each mode from its stationary law and
        # propagate exactly; the identity holds in expectation
        lam, amp = 0.5, 0.2
        p = stochastic_params(grid, seed=6, lam=lam, nonlinear=False, dt=0.1,
                              noise=NoiseSpec(hs_amplitude=amp))
        times, specs, uf = stationary_segment(p, M=200, burn_in=20.0, span=4.0,
                                              sample_dt=0.5)
        l2 = np.sum(np.abs(specs) ** 2, axis=-1)
        phi = p.noise.build(grid)
        resid, se = energy_identity_residual(times, l2, uf,
                                             hs_norm(phi) ** 2, lam, T=2.0)
        assert abs(resid) <= 4 * se + 1e-4

    def test_window_validation(self, grid):
        times = np.array([0.0, 0.5, 1.0])
        l2 = np.zeros((2, 3))
        with pytest.raises(ValueError):
            energy_identity_residual(times, l2, l2, 0.0, 0.5, T=2.0)

    def test_zero_dynamics(self, grid):
        # no noise, no forcing, state identically zero: residual is exactly 0
        times = np.linspace(0.0, 2.0, 9)
        l2 = np.zeros((3, 9))
        resid, se = energy_identity_residual(times, l2, l2, 0.0, 0.5, T=1.0)
        assert resid == 0.0


class TestIncrementMoment:
    def test_zero_lag(self, grid):
        times = np.linspace(0, 1, 5)
        specs = np.zeros((2, 5, grid.modes), dtype=complex)
        assert increment_moment(times, specs, 0.0) == (0.0, 0.0)

    def test_lag_validation(self, grid):
        times = np.linspace(0, 1, 5)
        specs = np.zeros((2, 5, grid.modes), dtype=complex)
        with pytest.raises(ValueError):
            increment_moment(times, specs, 2.0)

    def test_ou_autocovariance_oracle(self, grid):
        # linear dynamics: E||u_{t+d} - u_t||^2
        #   = 2 sum_k v_k (1 - e^{-lam d} cos(xi_k^3 d)), v_k = amp_k^2/(2 lam)
        lam, amp, d = 0.5, 0.2, 0.5
        p = stochastic_params(grid, seed=7, lam=lam, nonlinear=False, dt=0.05,
                              noise=NoiseSpec(hs_amplitude=amp))
        times, specs, _ = stationary_segment(p, M=100, burn_in=25.0, span=5.0,
                                             sample_dt=0.25)
        est, se = increment_moment(times, specs, d)
        phi = p.noise.build(grid)
        v = phi.amplitudes**2 / (2 * lam)
        target = float(2 * np.sum(v * (1 - np.exp(-lam * d)
                                       * np.cos(grid.xi_odd**3 * d))))
        assert abs(est - target) <= 4 * se

    def test_decreasing_with_lag_at_small_lags(self, grid):
        p = stochastic_params(grid, seed=8, dt=0.05)
        times, specs, _ = stationary_segment(p, M=20, burn_in=5.0, span=3.0,
                                             sample_dt=0.05)
        m_small, _ = increment_moment(times, specs, 0.05)
        m_large, _ = increment_moment(times, specs, 0.5)
        assert 0 < m_small < m_large


class TestMeasureDistance:
    def test_identical_clouds(self, grid, rng):
        u = random_band_limited(grid, rng, h1_norm=1.0)
        mu = point_mass(grid, u)
        assert measure_distance(mu, mu) == pytest.approx(0.0, abs=1e-10)

    def test_symmetry_and_positivity(self, grid):
        rng = make_rng(9, 0)
        a = point_mass(grid, random_band_limited(grid, rng, h1_norm=1.0))
        b = point_mass(grid, random_band_limited(grid, rng, h1_norm=2.0))
        d_ab = measure_distance(a, b)
        d_ba = measure_distance(b, a)
        assert d_ab == pytest.approx(d_ba, rel=1e-12)
        assert d_ab > 0

    def test_empty_measure(self, grid):
        mu = point_mass(grid, Field.zero(grid))
        empty = mu.restricted(0.0)
        with pytest.raises(ValueError):
            measure_distance(mu, empty)


class TestFellerProbe:
    def test_zero_gap_stays_zero(self, grid):
        p = stochastic_params(grid, seed=10)
        u0 = soliton(grid, c=0.5)
        res = feller_probe(u0, u0, p, t_end=0.5, replicas=3)
        assert res.initial_gap == 0.0
        assert np.all(res.divergence == 0.0)

    def test_linear_exact_contraction(self, grid, rng):
        # linear pair dynamics under shared noise: the gap is deterministic,
        # gap_t = e^{-lam t} gap_0 in every Sobolev norm
        lam = 0.7
        p = stochastic_params(grid, seed=11, lam=lam, nonlinear=False)
        u0 = random_band_limited(grid, rng, h1_norm=1.0)
        v0 = random_band_limited(grid, rng, h1_norm=1.5)
        res = feller_probe(u0, v0, p, t_end=1.0, replicas=2, observe_every=5)
        expected = res.initial_gap * np.exp(-lam * res.times)
        assert np.max(np.abs(res.gap_series - expected[None, :])) < 1e-10 * res.initial_gap

    def test_gap_halving(self, grid, rng):
        # nonlinear but small data: halving the initial gap roughly halves
        # the final divergence
        p = stochastic_params(grid, seed=12, dt=0.02)
        base = soliton(grid, c=0.3)
        pert = random_band_limited(grid, rng, h1_norm=0.05, zero_mean=True)
        full = feller_probe(base, base + pert, p, t_end=0.5, replicas=4)
        half = feller_probe(base, base + pert * 0.5, p, t_end=0.5, replicas=4)
        ratio = np.median(full.divergence[:, -1]) / np.median(half.divergence[:, -1])
        assert 1.6 < ratio < 2.4

    def test_grid_mismatch(self, grid, grid_2pi):
        p = stochastic_params(grid)
        with pytest.raises(ValueError):
            feller_probe(Field.zero(grid), Field.zero(grid_2pi), p, 0.5)
