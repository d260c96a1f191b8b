import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import podmpc as pm


class _Delegate:
    """Hides the concrete model type so the generic optimizer path runs."""

    def __init__(self, inner):
        self._inner = inner
        self.dim = inner.dim

    def __getattr__(self, name):
        return getattr(self._inner, name)


def _problem(params, grid, y0, N, model=None):
    model = model if model is not None else pm.FullOrderModel(params, grid)
    return pm.OpenLoopProblem(params=params, grid=grid, t0=0.0,
                              horizon_steps=N, y0=model.restrict(y0), model=model)


class TestStageCost:
    def test_on_target_zero(self, run1):
        _, params, grid, y0 = run1
        assert pm.running_cost(params, grid, np.zeros(grid.n_interior),
                               np.zeros(grid.n_interior)) == 0.0

    def test_feedback_identity(self, run1):
        _, params, grid, y0 = run1
        K = 2.46
        val = pm.running_cost(params, grid, y0, -K * y0)
        expected = 0.5 * (1 + params.lam * K**2) * pm.h_norm(grid, y0) ** 2
        assert val == pytest.approx(expected, rel=1e-12)

    def test_sine_quarter(self):
        grid = pm.build_grid(999)
        params = pm.ModelParams(theta=1.0, rho=1.0, lam=0.5, dt=0.01)
        phi = np.sin(np.pi * grid.nodes)
        assert pm.running_cost(params, grid, phi, np.zeros_like(phi)) == pytest.approx(
            0.25, rel=1e-6)


class TestProjection:
    def test_inside_unchanged(self):
        params = pm.ModelParams(theta=1.0, rho=1.0, lam=0.01, dt=0.01, u_a=-1, u_b=1)
        u = np.array([[0.5, -0.5]])
        np.testing.assert_array_equal(pm.project_box(params, u), u)

    def test_clamp(self):
        params = pm.ModelParams(theta=1.0, rho=1.0, lam=0.01, dt=0.01, u_a=-0.3, u_b=0.0)
        assert pm.project_box(params, np.array([0.5]))[0] == 0.0

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_idempotent(self, seed):
        params = pm.ModelParams(theta=1.0, rho=1.0, lam=0.01, dt=0.01, u_a=-0.4, u_b=0.2)
        u = np.random.default_rng(seed).normal(scale=2.0, size=(4, 7))
        once = pm.project_box(params, u)
        np.testing.assert_array_equal(pm.project_box(params, once), once)


class TestSolver:
    def test_zero_problem(self, run1):
        _, params, grid, _ = run1
        sol = pm.solve_open_loop(_problem(params, grid, np.zeros(grid.n_interior), 10))
        assert sol.cost == 0.0
        assert np.max(np.abs(sol.u_opt.values)) == 0.0
        assert sol.converged

    def test_run1_first_subproblem_variational_identity(self, run1):
        # at the optimum of the unconstrained problem, u = p/lam per control interval
        _, params, grid, y0 = run1
        model = pm.FullOrderModel(params, grid)
        sol = pm.solve_open_loop(_problem(params, grid, y0, 10))
        mult = model.adjoint(0.0, sol.states_model)
        gap = sol.u_opt.values - mult[1:] / params.lam
        assert pm.l2t_h_norm(grid, params.dt, gap) <= 1e-5
        assert pm.l2t_h_norm(grid, params.dt,
                             params.lam * sol.u_opt.values - mult[1:]) <= 1e-5

    def test_descent_against_initial_cost(self, run1):
        _, params, grid, y0 = run1
        problem = _problem(params, grid, y0, 10)
        sol = pm.solve_open_loop(problem)
        assert sol.cost <= pm.horizon_cost(problem, np.zeros((10, grid.n_interior)))
        assert sol.cost >= 0.0

    def test_box_feasibility_exact(self):
        preset = pm.get_preset("run2")
        params, grid = preset.params(), preset.grid()
        y0 = preset.initial_state(grid)
        sol = pm.solve_open_loop(_problem(params, grid, y0, 14))
        assert np.all(sol.u_opt.values >= params.u_a)
        assert np.all(sol.u_opt.values <= params.u_b)
        assert np.any(sol.u_opt.values == params.u_b)     # the upper bound binds

    def test_warm_start_converges_immediately(self, run1):
        _, params, grid, y0 = run1
        problem = _problem(params, grid, y0, 10)
        first = pm.solve_open_loop(problem)
        again = pm.solve_open_loop(problem, u_init=first.u_opt)
        assert again.iterations <= 2
        np.testing.assert_allclose(again.u_opt.values, first.u_opt.values,
                                   rtol=0, atol=1e-10)

    def test_compiled_matches_generic_bitwise(self, run1):
        _, params, grid, y0 = run1
        model = pm.FullOrderModel(params, grid)
        fast = pm.solve_open_loop(_problem(params, grid, y0, 10, model))
        slow = pm.solve_open_loop(_problem(params, grid, y0, 10, _Delegate(model)))
        assert fast.iterations == slow.iterations
        assert fast.cost == slow.cost
        np.testing.assert_array_equal(fast.u_opt.values, slow.u_opt.values)

    def test_rom_handle_same_contract(self, run1, run1_basis):
        _, params, grid, y0 = run1
        rom = pm.build_rom(run1_basis, run1_basis.rank, params, grid)
        sol_rom = pm.solve_open_loop(_problem(params, grid, y0, 10, rom))
        sol_full = pm.solve_open_loop(_problem(params, grid, y0, 10))
        assert sol_rom.converged
        assert np.all(sol_rom.u_opt.values >= params.u_a)
        gap = pm.l2t_h_norm(grid, params.dt, sol_rom.u_opt.values - sol_full.u_opt.values)
        assert gap <= 1e-3          # near-exact surrogate recovers the full control

    def test_rom_generic_matches_compiled(self, run1, run1_basis):
        # unconstrained: the compiled path iterates in reduced control
        # coordinates, algebraically identical to the generic full-space loop
        _, params, grid, y0 = run1
        rom = pm.build_rom(run1_basis, 3, params, grid)
        fast = pm.solve_open_loop(_problem(params, grid, y0, 8, rom))
        slow = pm.solve_open_loop(_problem(params, grid, y0, 8, _Delegate(rom)))
        np.testing.assert_allclose(fast.u_opt.values, slow.u_opt.values,
                                   rtol=0, atol=1e-9)
        assert abs(fast.cost - slow.cost) <= 1e-12

    def test_rom_boxed_generic_matches_compiled_bitwise(self, run1_basis):
        preset = pm.get_preset("run2")
        params, grid = preset.params(), preset.grid()
        y0 = preset.initial_state(grid)
        rom = pm.build_rom(run1_basis, 3, params, grid)
        fast = pm.solve_open_loop(_problem(params, grid, y0, 8, rom))
        slow = pm.solve_open_loop(_problem(params, grid, y0, 8, _Delegate(rom)))
        assert fast.iterations == slow.iterations
        np.testing.assert_allclose(fast.u_opt.values, slow.u_opt.values,
                                   rtol=0, atol=1e-12)

    def test_gradient_checks_on_random_instances(self, run1):
        _, params, grid, _ = run1
        model = pm.FullOrderModel(params, grid)
        rng = np.random.default_rng(11)
        for _ in range(5):
            y0 = 0.2 * rng.standard_normal(grid.n_interior) * np.sin(np.pi * grid.nodes)
            problem = _problem(params, grid, y0, 6, model)
            U = 0.3 * rng.standard_normal((6, grid.n_interior))
            states = model.forward(0.0, y0, U)
            g = pm.reduced_gradient(problem, U, states, model.adjoint(0.0, states))
            dU = rng.standard_normal(U.shape)
            eps = 1e-5
            fd = (pm.horizon_cost(problem, U + eps * dU)
                  - pm.horizon_cost(problem, U - eps * dU)) / (2 * eps)
            an = params.dt * grid.dx * np.sum(g * dU)
            assert abs(fd - an) <= 1e-4 * abs(fd)
