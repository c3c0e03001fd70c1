import math

import numpy as np
import pytest
from scipy import stats

from rsdec.convex import Box, WholeSpace
from rsdec.errors import (DimensionMismatch, DriftNaN,
                          InitialStateOutsideDomain, SingularG)
from rsdec.linalg import InnerProduct
from rsdec.sim import (RsdeSystem, SimConfig, default_delta_couple, simulate,
                       simulate_coupled, simulate_coupled_ensemble,
                       simulate_ensemble, trajectory_to_csv)


def free_system(dim=1):
    return RsdeSystem(dim=dim, drift=lambda x: 0.0 * np.asarray(x, float),
                      diffusion=np.eye(dim), domain=WholeSpace(dim),
                      vectorized=True)


def ou_system(dim=1):
    return RsdeSystem(dim=dim, drift=lambda x: -np.asarray(x, float),
                      diffusion=np.eye(dim), domain=WholeSpace(dim),
                      vectorized=True)


class TestConfigValidation:
    def test_bad_step(self):
        with pytest.raises(ValueError):
            SimConfig(step=0.0, horizon=1.0, seed=1)

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            SimConfig(step=0.1, horizon=-1.0, seed=1)

    def test_singular_diffusion(self):
        with pytest.raises(SingularG):
            RsdeSystem(dim=2, drift=lambda x: x, diffusion=np.zeros((2, 2)),
                       domain=WholeSpace(2))

    def test_wrong_diffusion_shape(self):
        with pytest.raises(DimensionMismatch):
            RsdeSystem(dim=2, drift=lambda x: x, diffusion=np.eye(3),
                       domain=WholeSpace(2))


class TestSimulate:
    def test_single_unconstrained_step_is_exact(self):
        # replay the identical noise stream: the step must be x0 + dw
        system = free_system()
        cfg = SimConfig(step=0.25, horizon=0.25, seed=123)
        traj = simulate(system, np.array([1.0]), cfg, traj_index=5)
        rng = np.random.Generator(np.random.Philox(key=[123, 5]))
        dw = math.sqrt(0.25) * rng.standard_normal(1)
        assert traj.states[-1] == pytest.approx(1.0 + dw[0], abs=0.0)

    def test_determinism(self):
        system = ou_system(2)
        cfg = SimConfig(step=0.01, horizon=1.0, seed=9)
        a = simulate(system, np.zeros(2), cfg)
        b = simulate(system, np.zeros(2), cfg)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.times, b.times)

    def test_seed_changes_path(self):
        system = ou_system()
        a = simulate(system, np.zeros(1), SimConfig(step=0.01, horizon=1.0, seed=1))
        b = simulate(system, np.zeros(1), SimConfig(step=0.01, horizon=1.0, seed=2))
        assert not np.array_equal(a.states, b.states)

    def test_domain_invariance(self):
        dom = Box(lower=[-0.5], upper=[0.5])
        system = RsdeSystem(dim=1, drift=lambda x: 0.0 * x, diffusion=np.eye(1),
                            domain=dom, vectorized=True)
        traj = simulate(system, np.zeros(1), SimConfig(step=0.01, horizon=2.0, seed=3))
        assert np.all(dom.contains_many(traj.states, 1e-9))

    def test_initial_outside_domain(self):
        dom = Box(lower=[0.0], upper=[1.0])
        system = RsdeSystem(dim=1, drift=lambda x: 0.0 * x, diffusion=np.eye(1),
                            domain=dom)
        with pytest.raises(InitialStateOutsideDomain):
            simulate(system, np.array([2.0]), SimConfig(step=0.1, horizon=1.0, seed=1))

    def test_explosion_guard(self):
        system = RsdeSystem(dim=1, drift=lambda x: 5.0 * np.asarray(x, float),
                            diffusion=np.eye(1), domain=WholeSpace(1),
                            vectorized=True)
        with pytest.raises(DriftNaN):
            simulate(system, np.array([1.0]), SimConfig(step=0.01, horizon=8.0, seed=1))

    def test_nan_drift(self):
        system = RsdeSystem(dim=1, drift=lambda x: np.array([float("nan")]),
                            diffusion=np.eye(1), domain=WholeSpace(1))
        with pytest.raises(DriftNaN):
            simulate(system, np.zeros(1), SimConfig(step=0.1, horizon=1.0, seed=1))

    def test_record_stride(self):
        system = free_system()
        cfg = SimConfig(step=0.1, horizon=1.0, seed=4, record_stride=4)
        traj = simulate(system, np.zeros(1), cfg)
        # t = 0, 0.4, 0.8 plus the forced final point at 1.0
        assert np.allclose(traj.times, [0.0, 0.4, 0.8, 1.0])

    def test_zero_horizon_single_row(self):
        system = free_system()
        traj = simulate(system, np.array([0.5]),
                        SimConfig(step=0.1, horizon=0.0, seed=1))
        assert traj.states.shape == (1, 1)
        assert traj.states[0, 0] == 0.5


class TestEnsemble:
    def test_matches_statistics_of_exact_law(self):
        # OU stationary variance 1/2 at T = 10
        system = ou_system()
        cfg = SimConfig(step=0.01, horizon=10.0, seed=21)
        res = simulate_ensemble(system, np.zeros((20000, 1)), cfg, [10.0])
        var = res[0, :, 0].var(ddof=1)
        # var of the sample variance of a Gaussian is ~ 2 sigma^4 / N
        tol = 4.0 * math.sqrt(2.0 * 0.25 / 20000) + 0.01  # + O(eta) bias room
        assert abs(var - 0.5) < tol

    def test_determinism(self):
        system = ou_system(2)
        cfg = SimConfig(step=0.01, horizon=1.0, seed=22)
        X0 = np.zeros((100, 2))
        a = simulate_ensemble(system, X0, cfg, [0.5, 1.0])
        b = simulate_ensemble(system, X0, cfg, [0.5, 1.0])
        assert np.array_equal(a, b)

    def test_probe_time_must_hit_grid(self):
        system = free_system()
        cfg = SimConfig(step=0.1, horizon=1.0, seed=1)
        with pytest.raises(ValueError):
            simulate_ensemble(system, np.zeros((2, 1)), cfg, [0.55])

    def test_probe_zero_returns_initials(self):
        system = free_system()
        cfg = SimConfig(step=0.1, horizon=1.0, seed=1)
        X0 = np.arange(6, dtype=float).reshape(6, 1)
        res = simulate_ensemble(system, X0, cfg, [0.0, 1.0])
        assert np.array_equal(res[0], X0)


class TestCoupled:
    def test_equal_initials_couple_at_zero(self):
        system = free_system()
        cfg = SimConfig(step=0.1, horizon=1.0, seed=31)
        out = simulate_coupled(system, np.zeros(1), np.zeros(1), cfg,
                               InnerProduct.euclidean(1))
        assert out.coupling_time == 0.0
        assert np.array_equal(out.x_states, out.y_states)

    def test_one_d_noise_is_sign_flipped(self):
        # far apart, one step: y receives the negated increment
        system = free_system()
        cfg = SimConfig(step=0.01, horizon=0.01, seed=32)
        x0, y0 = np.array([0.0]), np.array([100.0])
        out = simulate_coupled(system, x0, y0, cfg, InnerProduct.euclidean(1))
        dx = out.x_states[1] - out.x_states[0]
        dy = out.y_states[1] - out.y_states[0]
        # exact up to the rounding of y0 + noise at |y0| = 100
        assert dy[0] == pytest.approx(-dx[0], abs=1e-12)

    def test_gluing_exact(self):
        system = free_system()
        cfg = SimConfig(step=0.01, horizon=5.0, seed=33)
        out = simulate_coupled(system, np.zeros(1), np.array([0.3]), cfg,
                               InnerProduct.euclidean(1))
        assert out.coupling_time is not None
        after = out.times >= out.coupling_time
        assert np.array_equal(out.x_states[after], out.y_states[after])

    def test_determinism(self):
        system = ou_system(2)
        cfg = SimConfig(step=0.01, horizon=2.0, seed=34)
        a = simulate_coupled(system, np.zeros(2), np.ones(2), cfg,
                             InnerProduct.euclidean(2))
        b = simulate_coupled(system, np.zeros(2), np.ones(2), cfg,
                             InnerProduct.euclidean(2))
        assert np.array_equal(a.x_states, b.x_states)
        assert np.array_equal(a.y_states, b.y_states)
        assert a.coupling_time == b.coupling_time

    def test_coupled_marginal_law(self):
        # the mirrored copy is still a driftless Brownian motion:
        # chi^2 tests at the 1% level on mean and variance at t = 1
        system = free_system(2)
        cfg = SimConfig(step=0.02, horizon=1.0, seed=35)
        n = 10000
        X0 = np.zeros((n, 2))
        Y0 = np.tile([50.0, 0.0], (n, 1))  # stay uncoupled over the horizon
        res = simulate_coupled_ensemble(system, X0, Y0, cfg,
                                        InnerProduct.euclidean(2), [1.0])
        Y = res.y_probes[0] - np.array([50.0, 0.0])
        z2 = n * (Y.mean(axis=0) ** 2)  # each component ~ chi2(1) under H0
        assert z2.sum() < stats.chi2.ppf(0.99, df=2)
        s2 = Y.var(axis=0, ddof=1)
        lo = stats.chi2.ppf(0.005, df=n - 1) / (n - 1)
        hi = stats.chi2.ppf(0.995, df=n - 1) / (n - 1)
        assert np.all((s2 > lo) & (s2 < hi))

    def test_ensemble_matches_survival_shape(self):
        system = free_system()
        cfg = SimConfig(step=0.01, horizon=2.0, seed=36)
        n = 2000
        res = simulate_coupled_ensemble(system, np.zeros((n, 1)),
                                        np.ones((n, 1)), cfg,
                                        InnerProduct.euclidean(1), [2.0])
        taus = res.coupling_times
        assert taus.shape == (n,)
        frac = np.mean(np.isfinite(taus))
        # P(tau <= 2) = 2(1 - Phi(1/(2 sqrt(2)))) ~ 0.7237
        p = 2.0 * (1.0 - stats.norm.cdf(1.0 / (2.0 * math.sqrt(2.0))))
        assert abs(frac - p) < 4.0 * math.sqrt(p * (1 - p) / n)

    def test_delta_couple_default(self):
        ip = InnerProduct.euclidean(1)
        assert default_delta_couple([0.0], [3.0], ip) == pytest.approx(4e-8)


class TestCsv:
    def test_trajectory_csv(self, tmp_path):
        system = free_system(2)
        traj = simulate(system, np.zeros(2), SimConfig(step=0.1, horizon=0.3, seed=41))
        path = tmp_path / "traj.csv"
        trajectory_to_csv(traj, str(path))
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "t,x1,x2"
        assert len(lines) == 1 + len(traj.times)
        trajectory_to_csv(traj, str(tmp_path / "traj2.csv"))
        assert path.read_bytes() == (tmp_path / "traj2.csv").read_bytes()
