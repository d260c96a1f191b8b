"""Full-order finite-difference model of the 1-D semilinear advection-diffusion-reaction PDE.

State equation   y_t - theta*y_xx + y_x + rho*(y^3 - y) = u   on (0,1),
homogeneous Dirichlet boundary, discretized with second-order central
differences in space and fully implicit Euler in time (Newton per step).
Only interior nodal values are stored; boundary zeros are implicit in the
operator stencils.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels


class NewtonDivergenceError(RuntimeError):
    """Newton failed to reach the residual tolerance within the iteration cap."""

    def __init__(self, step: int):
        super().__init__(f"Newton did not converge at time step {step}")
        self.step = step


@dataclass(frozen=True)
class SpatialGrid:
    """Equidistant interior grid on (0,1) with mesh width dx = 1/(n_interior+1)."""

    n_interior: int
    dx: float
    nodes: np.ndarray

    def __post_init__(self):
        if self.n_interior < 2:
            raise ValueError("n_interior must be at least 2")
        if abs(self.dx * (self.n_interior + 1) - 1.0) > 1e-12:
            raise ValueError("dx inconsistent with n_interior")
        if not (np.all(np.diff(self.nodes) > 0) and 0 < self.nodes[0] and self.nodes[-1] < 1):
            raise ValueError("nodes must be strictly increasing inside (0,1)")


def build_grid(n_interior: int) -> SpatialGrid:
    """Uniform grid with n_interior inner nodes x_i = i*dx, dx = 1/(n_interior+1)."""
    if n_interior < 2:
        raise ValueError(f"n_interior must be >= 2, got {n_interior}")
    dx = 1.0 / (n_interior + 1)
    nodes = dx * np.arange(1, n_interior + 1)
    return SpatialGrid(n_interior=n_interior, dx=dx, nodes=nodes)


@dataclass(frozen=True)
class ModelParams:
    """Constants of one problem instance: PDE coefficients, cost weight, box bounds, step size.

    u_a <= 0 <= u_b; infinite bounds mean an unconstrained control. y_d is the
    desired state on the interior nodes (None means the zero target).
    """

    theta: float
    rho: float
    lam: float
    dt: float
    u_a: float = -np.inf
    u_b: float = np.inf
    y_d: np.ndarray | None = None

    def __post_init__(self):
        if not (self.theta > 0 and self.rho > 0 and self.lam > 0 and self.dt > 0):
            raise ValueError("theta, rho, lam and dt must be positive")
        if not (self.u_a <= 0.0 <= self.u_b):
            raise ValueError(f"control bounds must satisfy u_a <= 0 <= u_b, got [{self.u_a}, {self.u_b}]")

    def desired_state(self, grid: SpatialGrid) -> np.ndarray:
        if self.y_d is None:
            return np.zeros(grid.n_interior)
        y_d = np.asarray(self.y_d, dtype=float)
        if y_d.shape != (grid.n_interior,):
            raise ValueError("y_d does not match the grid")
        return y_d


@dataclass(frozen=True)
class Trajectory:
    """Space-time grid function: values[k] holds the interior nodal values at times[k]."""

    t0: float
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("row count must equal time count")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory contains non-finite entries")

    @staticmethod
    def from_values(t0: float, dt: float, values: np.ndarray) -> "Trajectory":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        times = t0 + dt * np.arange(values.shape[0])
        return Trajectory(t0=t0, times=times, values=values)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1


@dataclass(frozen=True)
class FeedbackRollout:
    """Closed-loop solution under u = -K*y, with the sampled control and a bounds flag."""

    state: Trajectory
    control: Trajectory
    bounds_violated: bool


# ---------------------------------------------------------------------------
# discrete inner products / norms
# ---------------------------------------------------------------------------

def h_inner(grid: SpatialGrid, a: np.ndarray, b: np.ndarray) -> float:
    """L^2(0,1) inner product of interior grid functions (midpoint-exact on the grid)."""
    return grid.dx * float(np.dot(a, b))


def h_norm(grid: SpatialGrid, v: np.ndarray) -> float:
    return float(np.sqrt(grid.dx) * np.linalg.norm(v))


def v_inner(grid: SpatialGrid, a: np.ndarray, b: np.ndarray) -> float:
    """H^1_0 inner product: sum of difference quotients, zero-extended at the boundary."""
    da = np.diff(a, prepend=0.0, append=0.0)
    db = np.diff(b, prepend=0.0, append=0.0)
    return float(np.dot(da, db)) / grid.dx


def v_norm(grid: SpatialGrid, v: np.ndarray) -> float:
    d = np.diff(v, prepend=0.0, append=0.0)
    return float(np.linalg.norm(d)) / np.sqrt(grid.dx)


def l2t_h_norm(grid: SpatialGrid, dt: float, values: np.ndarray) -> float:
    """L^2(t; H) norm of a space-time array by the left-rectangle rule in time."""
    rows = np.atleast_2d(values)[:-1] if values.ndim == 2 and values.shape[0] > 1 else np.atleast_2d(values)
    return float(np.sqrt(dt * grid.dx * np.sum(rows * rows)))


# ---------------------------------------------------------------------------
# implicit Euler stepping
# ---------------------------------------------------------------------------

@dataclass
class _Stencil:
    """Tridiagonal data of A = theta*L + B (L = -d_xx, B = d_x, central, Dirichlet)."""

    lower: float
    diag: float
    upper: float

    @staticmethod
    def build(theta: float, dx: float) -> "_Stencil":
        return _Stencil(
            lower=-theta / dx**2 - 0.5 / dx,
            diag=2.0 * theta / dx**2,
            upper=-theta / dx**2 + 0.5 / dx,
        )

    def matvec(self, y: np.ndarray) -> np.ndarray:
        out = self.diag * y
        out[:-1] += self.upper * y[1:]
        out[1:] += self.lower * y[:-1]
        return out


def _control_rows(u, n_steps: int, n: int) -> np.ndarray | None:
    """Interval control samples: row k drives the step t_k -> t_{k+1}."""
    if u is None:
        return None
    values = u.values if isinstance(u, Trajectory) else np.asarray(u, dtype=float)
    if values.ndim == 1:
        values = np.broadcast_to(values, (n_steps, n))
    if values.shape[0] == n_steps + 1:
        values = values[:-1]
    if values.shape != (n_steps, n):
        raise ValueError(f"control must provide {n_steps} rows of {n} values")
    return values


_NO_CONTROL = np.zeros((1, 1))


def _run_forward(params: ModelParams, grid: SpatialGrid, n_steps: int,
                 y0: np.ndarray, U: np.ndarray | None, gain: float) -> np.ndarray:
    stencil = _Stencil.build(params.theta, grid.dx)
    Y, fail = _kernels.full_forward(
        np.ascontiguousarray(y0, dtype=float),
        _NO_CONTROL if U is None else np.ascontiguousarray(U, dtype=float),
        U is not None, stencil.lower, stencil.diag, stencil.upper,
        params.dt, params.rho, gain, n_steps)
    if fail >= 0:
        raise NewtonDivergenceError(fail)
    return Y


def solve_state(params: ModelParams, grid: SpatialGrid, t0: float, n_steps: int,
                y0: np.ndarray, u=None) -> Trajectory:
    """Integrate the state equation over n_steps implicit Euler steps from y0.

    u may be None (uncontrolled), an array of interval values (one row per
    step), or a Trajectory whose rows sample the control at the time levels
    (the final row is then unused).
    """
    n = grid.n_interior
    y0 = np.asarray(y0, dtype=float)
    if y0.shape != (n,):
        raise ValueError("y0 does not match the grid")
    U = _control_rows(u, n_steps, n)
    Y = _run_forward(params, grid, n_steps, y0, U, 0.0)
    return Trajectory.from_values(t0, params.dt, Y)


def solve_adjoint(params: ModelParams, grid: SpatialGrid, ybar: Trajectory) -> Trajectory:
    """Backward adjoint solve along ybar; the terminal row is exactly zero.

    This is the exact discrete adjoint of `solve_state` with the
    left-rectangle cost: each backward step solves the transposed linearized
    system frozen at the level of the unknown, so the assembled gradient
    lam*u_k - p_{k+1} matches finite differences of the discrete cost.
    """
    stencil = _Stencil.build(params.theta, grid.dx)
    P = _kernels.full_adjoint(np.ascontiguousarray(ybar.values),
                              params.desired_state(grid),
                              stencil.lower, stencil.diag, stencil.upper,
                              params.dt, params.rho)
    return Trajectory(t0=ybar.t0, times=ybar.times.copy(), values=P)


def feedback_rollout(params: ModelParams, grid: SpatialGrid, t0: float, n_steps: int,
                     y0: np.ndarray, K: float) -> FeedbackRollout:
    """Closed loop under the law u = -K*y, with the gain folded into the implicit system.

    The recorded control samples the law at the time levels, u_k = -K*y_k.
    Values falling outside [u_a, u_b] only raise the flag; the law itself is
    never clamped.
    """
    if K < 0:
        raise ValueError("feedback gain must be nonnegative")
    y0 = np.asarray(y0, dtype=float)
    Y = _run_forward(params, grid, n_steps, y0, None, K)
    U = -K * Y
    violated = bool(np.any(U < params.u_a - 1e-12) or np.any(U > params.u_b + 1e-12))
    state = Trajectory.from_values(t0, params.dt, Y)
    control = Trajectory.from_values(t0, params.dt, U)
    return FeedbackRollout(state=state, control=control, bounds_violated=violated)


class FullOrderModel:
    """Forward/adjoint handle over the finite-difference discretization.

    Presents the interface consumed by the open-loop solver; the reduced-order
    model exposes the same methods in its own coordinates.
    """

    def __init__(self, params: ModelParams, grid: SpatialGrid):
        self.params = params
        self.grid = grid
        self.dim = grid.n_interior
        self._y_d = params.desired_state(grid)
        self._stencil = _Stencil.build(params.theta, grid.dx)

    def lift(self, a: np.ndarray) -> np.ndarray:
        return a

    def restrict(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=float)

    def forward(self, t0: float, a0: np.ndarray, U: np.ndarray) -> np.ndarray:
        s = self._stencil
        Y, fail = _kernels.full_forward(a0, U, True, s.lower, s.diag, s.upper,
                                        self.params.dt, self.params.rho, 0.0,
                                        U.shape[0])
        if fail >= 0:
            raise NewtonDivergenceError(fail)
        return Y

    def forward_with_cost(self, t0: float, a0: np.ndarray,
                          U: np.ndarray) -> tuple[np.ndarray, float]:
        Y = self.forward(t0, a0, U)
        J = _kernels.full_tracking_cost(Y, self._y_d, U, self.grid.dx,
                                        self.params.dt, self.params.lam)
        return Y, J

    def adjoint(self, t0: float, states: np.ndarray) -> np.ndarray:
        s = self._stencil
        return _kernels.full_adjoint(states, self._y_d, s.lower, s.diag, s.upper,
                                     self.params.dt, self.params.rho)

    def tracking_sq(self, states: np.ndarray) -> np.ndarray:
        """Per-level ||y_k - y_d||_H^2 along a trajectory in model coordinates."""
        diff = states - self._y_d
        return self.grid.dx * np.einsum("ij,ij->i", diff, diff)
