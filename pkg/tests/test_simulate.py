import math

import numpy as np
import pytest

from collogp.errors import RangeOutOfDomain
from collogp.simulate import (
    AllenCahnConfig,
    GridSolution,
    PendulumConfig,
    SamplingConfig,
    pendulum_energy,
    sample_collocation,
    sample_dataset,
    solve_allen_cahn,
    solve_pendulum,
)


class TestPendulum:
    def test_initial_angle(self):
        cfg = PendulumConfig()
        assert solve_pendulum(cfg, [0.0])[0] == pytest.approx(0.75 * math.pi)

    def test_energy_conserved_undamped(self):
        cfg = PendulumConfig()
        t = np.linspace(0, 28.8, 200)
        E = pendulum_energy(cfg, t)
        assert np.abs(E - E[0]).max() < 1e-6

    def test_energy_nonincreasing_damped(self):
        cfg = PendulumConfig(damping_b=0.2)
        t = np.linspace(0, 24.3, 400)
        E = pendulum_energy(cfg, t)
        assert (np.diff(E) <= 1e-12).all()

    def test_fourth_order_convergence(self):
        # error vs a step/10 reference scales ~ step^4: halving the step
        # shrinks the error by a factor within [8, 32] around the nominal 16
        t = np.array([4.0])
        ref = solve_pendulum(PendulumConfig(step=1e-3), t)[0]
        e1 = abs(solve_pendulum(PendulumConfig(step=8e-2), t)[0] - ref)
        e2 = abs(solve_pendulum(PendulumConfig(step=4e-2), t)[0] - ref)
        assert 8.0 <= e1 / e2 <= 32.0

    def test_small_angle_matches_linear_theory(self):
        cfg = PendulumConfig(theta0=1e-3, omega0=0.0)
        t = np.linspace(0, 10, 50)
        th = solve_pendulum(cfg, t)
        np.testing.assert_allclose(th, 1e-3 * np.cos(t), atol=1e-8)

    def test_negative_time_rejected(self):
        with pytest.raises(RangeOutOfDomain):
            solve_pendulum(PendulumConfig(), [-1.0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PendulumConfig(step=0.0)
        with pytest.raises(ValueError):
            PendulumConfig(damping_b=-0.1)


class TestAllenCahn:
    def test_initial_slice_exact(self):
        sol = solve_allen_cahn(AllenCahnConfig(grid_x=64, dt=1e-3, t_end=0.01,
                                               save_every=1))
        x = sol.x[:-1]
        np.testing.assert_array_equal(sol.u[0, :-1], x * x * np.cos(np.pi * x))

    def test_periodic_endpoint_duplicated(self):
        sol = solve_allen_cahn(AllenCahnConfig(grid_x=64, dt=1e-3, t_end=0.02))
        assert sol.x[-1] == 1.0
        np.testing.assert_array_equal(sol.u[:, -1], sol.u[:, 0])

    def test_dt_halving_self_convergence(self):
        cfgA = AllenCahnConfig(grid_x=128, dt=2e-4, t_end=0.1, save_every=500)
        cfgB = AllenCahnConfig(grid_x=128, dt=1e-4, t_end=0.1, save_every=1000)
        a = solve_allen_cahn(cfgA)
        b = solve_allen_cahn(cfgB)
        assert np.abs(a.u[-1] - b.u[-1]).max() < 1e-4

    def test_pure_diffusion_preserves_mean(self):
        cfg = AllenCahnConfig(nu=1e-3, grid_x=64, dt=1e-3, t_end=0.5, gamma=0.0)
        sol = solve_allen_cahn(cfg)
        m0 = sol.u[0, :-1].mean()
        assert abs(sol.u[-1, :-1].mean() - m0) < 1e-10

    def test_pure_diffusion_decays_modes(self):
        cfg = AllenCahnConfig(nu=1e-2, grid_x=64, dt=1e-3, t_end=1.0, gamma=0.0)
        sol = solve_allen_cahn(cfg)
        dev0 = np.abs(sol.u[0, :-1] - sol.u[0, :-1].mean()).max()
        dev1 = np.abs(sol.u[-1, :-1] - sol.u[-1, :-1].mean()).max()
        assert dev1 < dev0

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            AllenCahnConfig(grid_x=63)
        with pytest.raises(ValueError):
            AllenCahnConfig(dt=-1e-4)


class TestGridSolution:
    def grid(self):
        t = np.array([0.0, 1.0])
        x = np.array([0.0, 1.0])
        u = np.array([[0.0, 1.0], [2.0, 3.0]])
        return GridSolution(t=t, x=x, u=u)

    def test_corners(self):
        g = self.grid()
        np.testing.assert_allclose(
            g([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]),
            [0.0, 1.0, 2.0, 3.0])

    def test_bilinear_center(self):
        assert self.grid()([[0.5, 0.5]])[0] == pytest.approx(1.5)

    def test_out_of_domain(self):
        with pytest.raises(RangeOutOfDomain):
            self.grid()([[0.5, 1.5]])
        with pytest.raises(RangeOutOfDomain):
            self.grid()([[-0.5, 0.5]])


class TestSampling:
    def cfg(self, **kw):
        base = dict(train_range=[[0.0, 7.3]], test_range=[[0.0, 28.8]],
                    n_train=50, n_test=800, m_colloc=20, noise_var=0.0, seed=0)
        base.update(kw)
        return SamplingConfig(**base)

    def test_deterministic_per_seed(self):
        acc = lambda X: np.sin(X[:, 0])
        (a, ay), (b, by) = sample_dataset(acc, self.cfg())
        (a2, ay2), (b2, by2) = sample_dataset(acc, self.cfg())
        assert np.array_equal(a, a2) and np.array_equal(ay, ay2)
        assert np.array_equal(b, b2) and np.array_equal(by, by2)

    def test_seed_changes_draws(self):
        acc = lambda X: np.sin(X[:, 0])
        (a, _), _ = sample_dataset(acc, self.cfg())
        (b, _), _ = sample_dataset(acc, self.cfg(seed=1))
        assert not np.array_equal(a, b)

    def test_ranges_respected(self):
        acc = lambda X: np.zeros(X.shape[0])
        (Xtr, _), (Xte, _) = sample_dataset(acc, self.cfg())
        assert Xtr.min() >= 0.0 and Xtr.max() <= 7.3
        assert Xte.min() >= 0.0 and Xte.max() <= 28.8

    def test_noise_variance_calibrated(self):
        # 1e4 noisy train targets on a zero function: sample variance of the
        # noise within 20% of the configured variance
        acc = lambda X: np.zeros(X.shape[0])
        cfg = self.cfg(n_train=10000, n_test=1, noise_var=0.1)
        (_, ytr), _ = sample_dataset(acc, cfg)
        assert abs(ytr.var() - 0.1) < 0.02

    def test_test_targets_noise_free(self):
        acc = lambda X: np.sin(X[:, 0])
        cfg = self.cfg(noise_var=0.1)
        _, (Xte, yte) = sample_dataset(acc, cfg)
        np.testing.assert_array_equal(yte, np.sin(Xte[:, 0]))

    def test_collocation_deterministic_and_in_range(self):
        C = sample_collocation([[0.0, 28.8]], 20, seed=42)
        C2 = sample_collocation([[0.0, 28.8]], 20, seed=42)
        assert np.array_equal(C, C2)
        assert C.shape == (20, 1)
        assert C.min() >= 0.0 and C.max() <= 28.8

    def test_collocation_empty(self):
        assert sample_collocation([[0.0, 1.0]], 0, seed=0).shape == (0, 1)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            self.cfg(train_range=[[2.0, 2.0]])
        with pytest.raises(ValueError):
            self.cfg(noise_var=-0.1)
