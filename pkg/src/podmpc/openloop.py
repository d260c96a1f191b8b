"""Finite-horizon open-loop optimal control over an abstract model handle.

Minimizes the tracking-plus-control-energy cost subject to the model dynamics
and the control box, by projected gradient descent with Armijo backtracking.
The gradient comes from the model's exact discrete adjoint, so the same solver
serves the full-order and the reduced-order model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .fd_model import FullOrderModel, ModelParams, NewtonDivergenceError, SpatialGrid, Trajectory

TOL_OPT = 1e-6
MAX_OUTER = 500
ARMIJO_C = 1e-4
MAX_BACKTRACK = 40


@dataclass(frozen=True)
class OpenLoopProblem:
    """One horizon problem: initial state in model coordinates, N control steps."""

    params: ModelParams
    grid: SpatialGrid
    t0: float
    horizon_steps: int
    y0: np.ndarray
    model: object

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be at least 1")
        if np.asarray(self.y0).shape != (self.model.dim,):
            raise ValueError("y0 dimension does not match the model")


@dataclass(frozen=True)
class OpenLoopSolution:
    u_opt: Trajectory           # one row per control interval
    y_opt: Trajectory           # lifted state, horizon_steps + 1 rows
    cost: float
    kkt_residual: float
    iterations: int
    converged: bool
    states_model: np.ndarray    # model-coordinate states backing y_opt


def running_cost(params: ModelParams, grid: SpatialGrid,
                 y_k: np.ndarray, u_k: np.ndarray) -> float:
    """Stage cost 0.5*(||y - y_d||_H^2 + lam*||u||_H^2)."""
    d = y_k - params.desired_state(grid)
    return 0.5 * grid.dx * (float(np.dot(d, d)) + params.lam * float(np.dot(u_k, u_k)))


def project_box(params: ModelParams, u: np.ndarray) -> np.ndarray:
    """Entrywise clamp onto [u_a, u_b]; idempotent."""
    return np.clip(u, params.u_a, params.u_b)


def _cost(problem: OpenLoopProblem, states: np.ndarray, U: np.ndarray) -> float:
    lam, dx, dt = problem.params.lam, problem.grid.dx, problem.params.dt
    track = problem.model.tracking_sq(states)[:-1]
    return 0.5 * dt * (float(np.sum(track)) + lam * dx * float(np.sum(U * U)))


def horizon_cost(problem: OpenLoopProblem, u) -> float:
    """Cost of the forward solve driven by u, left-rectangle rule in time."""
    U = u.values if isinstance(u, Trajectory) else np.asarray(u, dtype=float)
    if U.shape[0] == problem.horizon_steps + 1:
        U = U[:-1]
    states = problem.model.forward(problem.t0, np.asarray(problem.y0, float), U)
    return _cost(problem, states, U)


def reduced_gradient(problem: OpenLoopProblem, U: np.ndarray,
                     states: np.ndarray, multipliers: np.ndarray) -> np.ndarray:
    """Cost gradient lam*u_k - p_{k+1}, with the adjoint lifted to nodal values."""
    return problem.params.lam * U - problem.model.lift(multipliers[1:])


def _compiled_solve(problem: OpenLoopProblem, U: np.ndarray, tol: float,
                    max_outer: int):
    """Dispatch to the fused projected-gradient kernel for the two known models."""
    params, model = problem.params, problem.model
    y0 = np.ascontiguousarray(problem.y0, dtype=float)
    args = (tol, max_outer, MAX_BACKTRACK, ARMIJO_C)
    if isinstance(model, FullOrderModel):
        s = model._stencil
        return _kernels.pg_solve_full(
            y0, U, s.lower, s.diag, s.upper, params.dt, params.rho,
            problem.grid.dx, params.lam, params.u_a, params.u_b,
            model._y_d, *args)
    from .pod_rom import ReducedModel
    if isinstance(model, ReducedModel):
        if np.isinf(params.u_a) and np.isinf(params.u_b):
            # no box: iterate exactly in reduced control coordinates when the
            # start lies in the mode span (zero start and ROM warm starts do)
            C0 = U @ model._restrict_map.T
            scale = max(1.0, float(np.max(np.abs(U)))) if U.size else 1.0
            if not U.size or float(np.max(np.abs(U - C0 @ model.Psi.T))) <= 1e-10 * scale:
                out = _kernels.pg_solve_rom_nobox(
                    y0, np.ascontiguousarray(C0), model.M_r, model.A_r,
                    model._Wb, model._Pts, params.rho, params.dt, params.lam,
                    model.r_yd, model._yd_sq, *args)
                C, states, J, residual, it, converged, fail = out
                return C @ model.Psi.T, states, J, residual, it, converged, fail
        return _kernels.pg_solve_rom(
            y0, U, model.W_psi, model.Psi, model.M_r, model.A_r, model._Wb,
            model._Pts, params.rho, params.dt, problem.grid.dx, params.lam,
            params.u_a, params.u_b, model.r_yd, model._yd_sq, *args)
    return None


def solve_open_loop(problem: OpenLoopProblem, u_init=None,
                    tol: float = TOL_OPT, max_outer: int = MAX_OUTER) -> OpenLoopSolution:
    """Projected gradient with Armijo backtracking (halving from step 1/lam).

    Stops when the step-scaled stationarity residual
    ||u - P(u - g/lam)||_{L2(t;H)} drops below tol; on hitting max_outer the
    best iterate is returned with converged=False and its residual.

    The two built-in model types run through a compiled driver implementing
    the identical iteration; any other object with the model interface falls
    back to the plain numpy loop below.
    """
    params, model = problem.params, problem.model
    N, n = problem.horizon_steps, problem.grid.n_interior
    lam, dt, dx = params.lam, params.dt, problem.grid.dx
    y0 = np.asarray(problem.y0, dtype=float)

    if u_init is None:
        U = np.zeros((N, n))
    else:
        U = u_init.values if isinstance(u_init, Trajectory) else np.asarray(u_init, float)
        U = np.ascontiguousarray(project_box(params, U[:N]))
        if U.shape != (N, n):
            raise ValueError("u_init does not span the horizon")

    fused = _compiled_solve(problem, U, tol, max_outer)
    if fused is not None:
        U, states, J, residual, it, converged, fail = fused
        if fail >= 0:
            raise NewtonDivergenceError(fail)
        times = problem.t0 + dt * np.arange(N + 1)
        return OpenLoopSolution(
            u_opt=Trajectory(t0=problem.t0, times=times[:-1], values=U),
            y_opt=Trajectory(t0=problem.t0, times=times, values=model.lift(states)),
            cost=float(J), kkt_residual=float(residual), iterations=int(it),
            converged=bool(converged), states_model=states)

    ua, ub = params.u_a, params.u_b
    states, J = model.forward_with_cost(problem.t0, y0, U)
    best = (J, U, states, np.inf)
    residual = np.inf
    it = 0
    converged = False
    for it in range(1, max_outer + 1):
        mult = model.adjoint(problem.t0, states)
        g = lam * U - model.lift(mult[1:])
        residual = float(_kernels.scaled_residual(U, g, lam, ua, ub, dt, dx))
        if J <= best[0]:
            best = (J, U, states, residual)
        if residual <= tol:
            converged = True
            break
        step = 1.0 / lam
        for _ in range(MAX_BACKTRACK):
            U_trial, slope = _kernels.armijo_trial(U, g, step, ua, ub, dt, dx)
            states_trial, J_trial = model.forward_with_cost(problem.t0, y0, U_trial)
            if J_trial <= J + ARMIJO_C * slope:
                break
            step *= 0.5
        U, states, J = U_trial, states_trial, J_trial

    if converged:
        best = (J, U, states, residual)
    J, U, states, residual = best
    times = problem.t0 + dt * np.arange(N + 1)
    return OpenLoopSolution(
        u_opt=Trajectory(t0=problem.t0, times=times[:-1], values=U),
        y_opt=Trajectory(t0=problem.t0, times=times, values=model.lift(states)),
        cost=J,
        kkt_residual=residual,
        iterations=it,
        converged=converged,
        states_model=states,
    )
