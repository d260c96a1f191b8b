import math

import numpy as np
import pytest

import podmpc as pm
from podmpc.stability import AlphaFormulaError, InfeasibleGainError


def direct_alpha(C, sigma, N):
    """Independent oracle: plain float products, no log-space rearrangement."""
    eta = [C * (1 - sigma**i) / (1 - sigma) for i in range(2, N + 1)]
    prod_eta = math.prod(eta)
    prod_em1 = math.prod(e - 1 for e in eta)
    return 1 - (eta[-1] - 1) * prod_em1 / (prod_eta - prod_em1)


class TestConstants:
    def test_uncontrolled_stable_regime(self):
        params = pm.ModelParams(theta=1.0, rho=5.0, lam=0.01, dt=0.01)
        c = pm.controllability_constants(params, 0.0)
        assert c.C == 1.0
        assert c.gamma == pytest.approx(np.pi**2 - 5.0)
        assert c.gamma > 0

    def test_run1_values(self, run1):
        _, params, _, _ = run1
        c = pm.controllability_constants(params, 2.46)
        assert c.gamma == pytest.approx(1.3296, abs=1e-3)
        assert c.C == pytest.approx(1.0605, abs=1e-3)
        assert c.sigma_step == pytest.approx(0.9738, abs=1e-3)

    def test_run3_gamma(self):
        params = pm.ModelParams(theta=1 / np.sqrt(2), rho=10.0, lam=0.01, dt=0.01)
        c = pm.controllability_constants(params, 5.0)
        assert c.gamma == pytest.approx(1.979, abs=1e-3)

    def test_infeasible_gain_rejected(self, run1):
        _, params, _, _ = run1
        with pytest.raises(InfeasibleGainError):
            pm.controllability_constants(params, 0.5)      # gamma(0.5) < 0 for run1


class TestAlpha:
    def test_run1_sign_flip(self, run1):
        # frozen from the direct-product oracle at K = 2.46
        _, params, _, _ = run1
        c = pm.controllability_constants(params, 2.46)
        assert pm.alpha_horizon(c, 10) == pytest.approx(0.013910, abs=2e-5)
        assert pm.alpha_horizon(c, 9) == pytest.approx(-0.007797, abs=2e-5)

    def test_long_horizon_approaches_one(self, run1):
        _, params, _, _ = run1
        c = pm.controllability_constants(params, 2.46)
        assert pm.alpha_horizon(c, 200) > 0.99

    def test_vanishing_sigma_gives_alpha_one(self, run1):
        _, params, _, _ = run1
        c = pm.StabilityConstants(K=0.0, gamma=500.0, C=1.0,
                                  sigma_step=math.exp(-2 * 500.0 * params.dt),
                                  dt=params.dt)
        assert pm.alpha_horizon(c, 10) == pytest.approx(1.0, abs=1e-4)

    def test_short_horizon_rejected(self, run1):
        _, params, _, _ = run1
        c = pm.controllability_constants(params, 2.46)
        with pytest.raises(ValueError):
            pm.alpha_horizon(c, 1)

    def test_log_space_matches_direct_products(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            C = 1.0 + rng.uniform(0.0, 2.0)
            sigma = rng.uniform(0.3, 0.999)
            N = int(rng.integers(2, 61))
            c = pm.StabilityConstants(K=0.0, gamma=1.0, C=C, sigma_step=sigma, dt=0.01)
            assert pm.alpha_horizon(c, N) == pytest.approx(direct_alpha(C, sigma, N),
                                                           rel=1e-10, abs=1e-12)

    def test_alpha_only_depends_on_C_sigma_N(self):
        # two parameter sets engineered to share (C, sigma_step)
        p1 = pm.ModelParams(theta=1.0, rho=11.0, lam=0.01, dt=0.01)
        K1 = 2.46
        c1 = pm.controllability_constants(p1, K1)
        K2 = c1.gamma + 6.0 - 0.5 * np.pi**2
        p2 = pm.ModelParams(theta=0.5, rho=6.0, lam=(c1.C - 1) / K2**2, dt=0.01)
        c2 = pm.controllability_constants(p2, K2)
        assert c2.sigma_step == pytest.approx(c1.sigma_step, rel=1e-12)
        assert c2.C == pytest.approx(c1.C, rel=1e-12)
        for N in (5, 10, 40):
            assert pm.alpha_horizon(c1, N) == pytest.approx(pm.alpha_horizon(c2, N),
                                                            rel=1e-9)


class TestFeedbackBounds:
    def test_run2_bound(self):
        grid = pm.build_grid(99)
        params = pm.ModelParams(theta=1.0, rho=11.0, lam=0.01, dt=0.01, u_a=-0.3, u_b=0.0)
        y0 = 0.2 * np.sin(np.pi * grid.nodes)
        _, hi = pm.feedback_bounds(y0, params)
        assert hi == pytest.approx(1.5, rel=1e-6)

    def test_run4_bound(self):
        grid = pm.build_grid(99)
        params = pm.ModelParams(theta=0.5, rho=10.0, lam=0.01, dt=0.01, u_a=-1.0, u_b=1.0)
        y0 = pm.get_preset("run4").initial_state(grid)
        _, hi = pm.feedback_bounds(y0, params)
        assert hi == pytest.approx(10.0, rel=1e-6)

    def test_unconstrained_unbounded(self, run1):
        _, params, grid, y0 = run1
        _, hi = pm.feedback_bounds(y0, params)
        assert hi == math.inf

    def test_zero_initial_state_rejected(self, run1):
        _, params, grid, _ = run1
        with pytest.raises(InfeasibleGainError):
            pm.feedback_bounds(np.zeros(grid.n_interior), params)


class TestGainOptimization:
    def test_run1_interior_maximizer(self, run1):
        _, params, _, y0 = run1
        K, alpha = pm.optimize_feedback_gain(params, y0, 10)
        assert K == pytest.approx(2.46, abs=0.05)
        assert alpha > 0

    def test_run2_bound_active(self):
        preset = pm.get_preset("run2")
        params, grid = preset.params(), preset.grid()
        K, alpha = pm.optimize_feedback_gain(params, preset.initial_state(grid), 14)
        assert K == pytest.approx(1.50, abs=0.01)
        assert alpha > 0

    def test_run4_bound_active(self):
        preset = pm.get_preset("run4")
        params, grid = preset.params(), preset.grid()
        K, alpha = pm.optimize_feedback_gain(params, preset.initial_state(grid), 43)
        assert 9.90 <= K <= 10.00
        assert alpha > 0


class TestMinimalHorizon:
    @pytest.mark.parametrize("name,expected", [
        ("run1", 10), ("run2", 14), ("run3", 30), ("run4", 43)])
    def test_reference_horizons(self, name, expected):
        preset = pm.get_preset(name)
        params, grid = preset.params(), preset.grid()
        hr = pm.minimal_horizon(params, preset.initial_state(grid))
        assert hr.N_min == expected
        assert hr.alpha > 0
        assert not (hr.alpha_prev > 0)

    def test_zero_rom_error_is_identity(self, run1):
        _, params, _, y0 = run1
        c = pm.controllability_constants(params, 2.46)
        for N in (5, 10, 30):
            assert pm.alpha_horizon_rom(c, N, 0.0) == pm.alpha_horizon(c, N)

    def test_rom_error_degrades_alpha(self, run1):
        _, params, _, _ = run1
        for K in np.linspace(1.2, 6.0, 9):
            c = pm.controllability_constants(params, K)
            assert pm.alpha_horizon_rom(c, 12, 1e-2) <= pm.alpha_horizon(c, 12)

    def test_horizon_monotone_in_err(self):
        preset = pm.get_preset("run2")
        params, grid = preset.params(), preset.grid()
        y0 = preset.initial_state(grid)
        horizons = [pm.minimal_horizon(params, y0, rom_err=e).N_min
                    for e in (0.0, 1e-3, 1e-2, 1e-1)]
        assert horizons[0] == 14
        assert all(a <= b for a, b in zip(horizons, horizons[1:]))

    def test_not_found_raises(self):
        params = pm.ModelParams(theta=1.0, rho=11.0, lam=50.0, dt=0.01)
        grid = pm.build_grid(49)
        y0 = 0.2 * np.sin(np.pi * grid.nodes)
        with pytest.raises(pm.HorizonNotFoundError):
            pm.minimal_horizon(params, y0, N_max=5)


class TestRomErrorTerm:
    def test_identical_trajectories(self, run1):
        _, params, grid, y0 = run1
        traj = pm.solve_state(params, grid, 0.0, 10, y0)
        profile, sup = pm.rom_error_term(grid, traj, traj)
        assert sup == 0.0
        assert np.nanmax(profile) == 0.0

    def test_gap_homogeneity(self, run1):
        _, params, grid, y0 = run1
        base = pm.solve_state(params, grid, 0.0, 10, y0)
        gap = 1e-3 * np.sin(3 * np.pi * grid.nodes)
        one = pm.Trajectory(t0=0.0, times=base.times, values=base.values + gap)
        two = pm.Trajectory(t0=0.0, times=base.times, values=base.values + 2 * gap)
        p1, _ = pm.rom_error_term(grid, one, base)
        p2, _ = pm.rom_error_term(grid, two, base)
        np.testing.assert_allclose(p2, 2 * p1, rtol=1e-12)

    def test_zero_denominator_window_rejected(self, run1):
        _, params, grid, _ = run1
        zero = pm.Trajectory.from_values(0.0, params.dt, np.zeros((4, grid.n_interior)))
        with pytest.raises(ValueError):
            pm.rom_error_term(grid, zero, zero)


class TestExponentialControllability:
    @pytest.mark.parametrize("name", ["run1", "run2", "run3", "run4"])
    def test_running_cost_bound_along_rollout(self, name):
        preset = pm.get_preset(name)
        params, grid = preset.params(), preset.grid()
        y0 = preset.initial_state(grid)
        c = pm.controllability_constants(params, preset.gain)
        roll = pm.feedback_rollout(params, grid, 0.0, 50, y0, preset.gain)
        lstar = 0.5 * pm.h_norm(grid, y0) ** 2
        for k, row in enumerate(roll.state.values):
            lk = 0.5 * (1 + params.lam * preset.gain**2) * pm.h_norm(grid, row) ** 2
            assert lk <= c.C * c.sigma_step**k * lstar * (1 + 1e-3)

    def test_decay_bound_over_gain_grid(self):
        # fine time step keeps the implicit-Euler lag far below the slack
        grid = pm.build_grid(99)
        params = pm.ModelParams(theta=1.0, rho=11.0, lam=0.01, dt=0.002)
        y0 = 0.2 * np.sin(np.pi * grid.nodes)
        K_low = max(0.0, params.rho - params.theta * np.pi**2)
        for K in K_low + np.array([0.05, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0]):
            gamma = pm.decay_rate(params, K)
            roll = pm.feedback_rollout(params, grid, 0.0, 250, y0, K)
            norms = np.array([pm.h_norm(grid, row) for row in roll.state.values])
            bound = np.exp(-gamma * roll.state.times) * norms[0]
            assert np.all(norms <= bound * (1 + 1e-3)), f"decay bound failed at K={K}"
