"""POD basis construction (method of snapshots), DEIM, and the reduced-order model.

Snapshots come from the uncontrolled state and its adjoint; the basis is
X-orthonormal for X = H (mass inner product) or X = V (stiffness inner
product). The reduced model is the Galerkin projection of the full
finite-difference system onto the mode span, with the cubic term either lifted
exactly or interpolated at DEIM points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eigh, solve

from . import _kernels
from .fd_model import (ModelParams, SpatialGrid, Trajectory, _Stencil,
                       solve_adjoint, solve_state)

RANK_TRUNCATION = 1e-14     # relative eigenvalue floor defining the Gramian rank


@dataclass(frozen=True)
class SnapshotSet:
    """Tagged snapshot blocks sharing one spatial grid and one time weight."""

    blocks: tuple[tuple[str, np.ndarray], ...]
    dt: float

    def __post_init__(self):
        if not self.blocks:
            raise ValueError("snapshot set is empty")
        n = self.blocks[0][1].shape[1]
        if any(arr.shape[1] != n for _, arr in self.blocks):
            raise ValueError("snapshot blocks differ in spatial dimension")
        if all(np.max(np.abs(arr)) == 0.0 for _, arr in self.blocks):
            raise ValueError("all snapshots are zero")

    def stacked(self) -> np.ndarray:
        return np.vstack([arr for _, arr in self.blocks])


@dataclass(frozen=True)
class PodBasis:
    """X-orthonormal modes with the full retained spectrum (rank d columns)."""

    space: str                  # "H" or "V"
    modes: np.ndarray           # (n_interior, d)
    eigenvalues: np.ndarray     # (d,), nonincreasing
    grid: SpatialGrid

    def __post_init__(self):
        if self.space not in ("H", "V"):
            raise ValueError("space must be 'H' or 'V'")
        if np.any(np.diff(self.eigenvalues) > 1e-12 * self.eigenvalues[0]):
            raise ValueError("eigenvalues must be nonincreasing")

    @property
    def rank(self) -> int:
        return self.modes.shape[1]


@dataclass(frozen=True)
class DeimData:
    """Interpolatory reduction of the cubic term: modes, sample rows, point matrix."""

    modes: np.ndarray           # (n_interior, ell_deim)
    indices: np.ndarray         # (ell_deim,) distinct interior node indices
    point_matrix: np.ndarray    # modes[indices], the interpolation system

    def __post_init__(self):
        if len(set(self.indices.tolist())) != self.indices.size:
            raise ValueError("DEIM indices must be distinct")


def _stiffness_apply(grid: SpatialGrid, rows: np.ndarray) -> np.ndarray:
    """Rows of L @ v.T for L = tridiag(-1, 2, -1)/dx^2 with Dirichlet closure."""
    out = 2.0 * rows.copy()
    out[:, :-1] -= rows[:, 1:]
    out[:, 1:] -= rows[:, :-1]
    return out / grid.dx**2


def _x_weighted(space: str, grid: SpatialGrid, rows: np.ndarray) -> np.ndarray:
    """W_X @ rows.T transposed back, so that <a, b>_X = a @ _x_weighted(b)."""
    if space == "H":
        return grid.dx * rows
    return grid.dx * _stiffness_apply(grid, rows)


def collect_snapshots(params: ModelParams, grid: SpatialGrid, t0: float, T: float,
                      y0: np.ndarray, include_derivatives: bool = False) -> SnapshotSet:
    """Uncontrolled state over [t0, T] plus its adjoint; optional difference quotients."""
    n_steps = int(round((T - t0) / params.dt))
    state = solve_state(params, grid, t0, n_steps, y0)
    adj = solve_adjoint(params, grid, state)
    blocks = [("state", state.values), ("adjoint", adj.values)]
    if include_derivatives:
        quotients = np.diff(state.values, axis=0) / params.dt
        blocks.append(("state_dt", quotients))
    return SnapshotSet(blocks=tuple(blocks), dt=params.dt)


def nonlinearity_snapshots(params: ModelParams, state: Trajectory) -> np.ndarray:
    """Rows of the cubic term rho*(y^3 - y) along a state trajectory."""
    Y = state.values
    return params.rho * (Y**3 - Y)


def compute_pod_basis(snapshots: SnapshotSet, space: str, grid: SpatialGrid) -> PodBasis:
    """Method of snapshots: eigendecompose the time-Gramian in the X-inner product.

    The spectrum is truncated at RANK_TRUNCATION relative to the leading
    eigenvalue; modes are polished by a Cholesky re-orthonormalization so that
    X-orthonormality holds to machine precision across the whole retained tail.
    """
    S = snapshots.stacked()
    w = snapshots.dt
    G = w * (S @ _x_weighted(space, grid, S).T)
    G = 0.5 * (G + G.T)
    lam, Q = eigh(G)
    order = np.argsort(lam)[::-1]
    lam, Q = lam[order], Q[:, order]
    keep = lam > RANK_TRUNCATION * lam[0]
    if not keep.any():
        raise ValueError("snapshot Gramian has no significant eigenvalues")
    lam, Q = lam[keep], Q[:, keep]
    modes = (S.T @ Q) * (np.sqrt(w) / np.sqrt(lam))
    M = modes.T @ _x_weighted(space, grid, modes.T).T
    R = cholesky(0.5 * (M + M.T), lower=False)
    modes = np.linalg.solve(R.T, modes.T).T
    return PodBasis(space=space, modes=modes, eigenvalues=lam, grid=grid)


def pod_energy(basis: PodBasis, ell: int) -> float:
    """Tail energy sum of the retained spectrum beyond rank ell."""
    if not 0 <= ell <= basis.rank:
        raise ValueError(f"ell must lie in [0, {basis.rank}]")
    return float(np.sum(basis.eigenvalues[ell:]))


def projection_residual(basis: PodBasis, snapshots: SnapshotSet, ell: int) -> float:
    """Brute-force recomputation of the rank-ell mean-square projection error."""
    S = snapshots.stacked()
    Psi = basis.modes[:, :ell]
    coeff = S @ _x_weighted(basis.space, basis.grid, Psi.T).T
    R = S - coeff @ Psi.T
    return snapshots.dt * float(np.sum(R * _x_weighted(basis.space, basis.grid, R)))


def choose_rank(basis: PodBasis, tau_pod: float, normalized: bool = True) -> int:
    """Smallest ell with tail energy <= tau_pod (relative to total by default)."""
    if tau_pod < 0:
        raise ValueError("tau_pod must be nonnegative")
    total = pod_energy(basis, 0)
    scale = total if (normalized and total > 0) else 1.0
    for ell in range(basis.rank + 1):
        if pod_energy(basis, ell) <= tau_pod * scale:
            return ell
    return basis.rank


def project_onto_basis(basis: PodBasis, grid: SpatialGrid, phi: np.ndarray,
                       ell: int | None = None) -> np.ndarray:
    """V-orthogonal projection onto the span of the first ell modes.

    For V-modes the projection is the plain Fourier sum; for H-modes the
    coefficients solve the ell-by-ell system with the V-Gramian of the modes.
    """
    ell = basis.rank if ell is None else ell
    Psi = basis.modes[:, :ell]
    WvPsi = _x_weighted("V", grid, Psi.T).T         # dx * L @ Psi
    b = phi @ WvPsi
    if basis.space == "V":
        coeff = b
    else:
        Mv = Psi.T @ WvPsi
        coeff = solve(Mv, b, assume_a="pos")
    return Psi @ coeff


def build_deim(nonlin_rows: np.ndarray, ell_deim: int, grid: SpatialGrid,
               dt: float = 1.0, allow_cap: bool = False) -> DeimData:
    """POD modes of the nonlinearity rows plus greedy interpolation indices.

    Ranks beyond the snapshot rank are rejected, or silently capped when
    allow_cap is set (preset ranks may exceed what the data supports).
    """
    snaps = SnapshotSet(blocks=(("nonlinearity", np.asarray(nonlin_rows, float)),), dt=dt)
    basis = compute_pod_basis(snaps, "H", grid)
    if ell_deim > basis.rank:
        if not allow_cap:
            raise ValueError(
                f"ell_deim = {ell_deim} exceeds the nonlinearity snapshot rank {basis.rank}"
            )
        ell_deim = basis.rank
    U = basis.modes[:, :ell_deim]
    indices = [int(np.argmax(np.abs(U[:, 0])))]
    for j in range(1, ell_deim):
        c = solve(U[indices, :j], U[indices, j])
        r = U[:, j] - U[:, :j] @ c
        idx = int(np.argmax(np.abs(r)))
        if abs(r[idx]) == 0.0 or idx in indices:
            raise np.linalg.LinAlgError("singular DEIM interpolation system")
        indices.append(idx)
    indices = np.array(indices, dtype=int)
    return DeimData(modes=U, indices=indices, point_matrix=U[indices])


class ReducedModel:
    """Galerkin projection of the full model onto a rank-ell POD subspace.

    Implements the same forward/adjoint/lift/restrict interface as the
    full-order model, with every online operation independent of the full
    dimension when DEIM is attached (except control restriction, which is a
    single matmul per horizon).
    """

    def __init__(self, basis: PodBasis, ell: int, params: ModelParams,
                 grid: SpatialGrid, deim: DeimData | None = None):
        if not 1 <= ell <= basis.rank:
            raise ValueError(f"ell must lie in [1, {basis.rank}]")
        self.basis = basis
        self.params = params
        self.grid = grid
        self.deim = deim
        self.dim = ell
        Psi = np.ascontiguousarray(basis.modes[:, :ell])
        self.Psi = Psi
        self.W_psi = grid.dx * Psi                            # H-pairing restriction
        stencil = _Stencil.build(params.theta, grid.dx)
        APsi = np.column_stack([stencil.matvec(Psi[:, j]) for j in range(ell)])
        self.M_r = Psi.T @ self.W_psi
        self.A_r = self.W_psi.T @ APsi
        K_r = params.theta * grid.dx * (Psi.T @ _stiffness_apply(grid, Psi.T).T)
        if np.max(np.abs(K_r - K_r.T)) > 1e-12 * max(np.max(np.abs(K_r)), 1.0):
            raise AssertionError("reduced stiffness lost symmetry")
        self._y_d = params.desired_state(grid)
        self.r_yd = self.W_psi.T @ self._y_d
        self._yd_sq = grid.dx * float(np.dot(self._y_d, self._y_d))
        if basis.space == "H":
            self._restrict_map = np.linalg.inv(self.M_r) @ self.W_psi.T
        else:
            WvPsi = grid.dx * _stiffness_apply(grid, Psi.T).T
            self._restrict_map = np.linalg.inv(Psi.T @ WvPsi) @ WvPsi.T
        if deim is None:
            self._Wb = np.ascontiguousarray(self.W_psi.T)     # exact lifted nonlinearity
            self._Pts = Psi
        else:
            self.C_deim = solve(deim.point_matrix.T, (self.W_psi.T @ deim.modes).T).T
            self.Psi_pts = np.ascontiguousarray(Psi[deim.indices])
            self._Wb = np.ascontiguousarray(self.C_deim)
            self._Pts = self.Psi_pts
        self.M_r = np.ascontiguousarray(self.M_r)
        self.A_r = np.ascontiguousarray(self.A_r)

    # -- coordinate maps ----------------------------------------------------

    def lift(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a) @ self.Psi.T

    def restrict(self, y: np.ndarray) -> np.ndarray:
        """X-projection coefficients of a full-order state."""
        return self._restrict_map @ y

    # -- time stepping -------------------------------------------------------

    def _run(self, a0: np.ndarray, U_red: np.ndarray | None, gain: float,
             n_steps: int) -> np.ndarray:
        S, fail = _kernels.rom_forward(
            np.ascontiguousarray(a0, dtype=float),
            np.zeros((1, 1)) if U_red is None else U_red,
            U_red is not None, self.M_r, self.A_r, self._Wb, self._Pts,
            self.params.rho, self.params.dt, gain, n_steps)
        if fail >= 0:
            from .fd_model import NewtonDivergenceError
            raise NewtonDivergenceError(fail)
        return S

    def forward(self, t0: float, a0: np.ndarray, U: np.ndarray) -> np.ndarray:
        """Implicit Euler in reduced coordinates; U holds full-order interval controls."""
        return self._run(a0, U @ self.W_psi, 0.0, U.shape[0])

    def forward_with_cost(self, t0: float, a0: np.ndarray,
                          U: np.ndarray) -> tuple[np.ndarray, float]:
        S = self.forward(t0, a0, U)
        J = _kernels.rom_tracking_cost(S, self.M_r, self.r_yd, self._yd_sq, U,
                                       self.grid.dx, self.params.dt, self.params.lam)
        return S, J

    def feedback_rollout(self, t0: float, n_steps: int, a0: np.ndarray, K: float) -> np.ndarray:
        """Closed loop under u = -K*y^l with the gain folded into the reduced system."""
        return self._run(a0, None, K, n_steps)

    def adjoint(self, t0: float, states: np.ndarray) -> np.ndarray:
        """Exact discrete adjoint of `forward`; terminal row is exactly zero."""
        return _kernels.rom_adjoint(np.ascontiguousarray(states), self.M_r, self.A_r,
                                    self._Wb, self._Pts, self.r_yd,
                                    self.params.rho, self.params.dt)

    def tracking_sq(self, states: np.ndarray) -> np.ndarray:
        """Per-level ||Psi a - y_d||_H^2 without lifting."""
        quad = np.einsum("ij,jk,ik->i", states, self.M_r, states)
        return quad - 2.0 * states @ self.r_yd + self._yd_sq


def build_rom(basis: PodBasis, ell: int, params: ModelParams, grid: SpatialGrid,
              deim: DeimData | None = None) -> ReducedModel:
    """Assemble the rank-ell Galerkin model, optionally with DEIM."""
    return ReducedModel(basis=basis, ell=ell, params=params, grid=grid, deim=deim)


def solve_rom_state(rom: ReducedModel, t0: float, n_steps: int, a0: np.ndarray,
                    u=None) -> tuple[Trajectory, Trajectory]:
    """Reduced trajectory and its lifted nodal view."""
    n = rom.grid.n_interior
    if u is None:
        U = np.zeros((n_steps, n))
    else:
        U = u.values if isinstance(u, Trajectory) else np.asarray(u, float)
        if U.shape[0] == n_steps + 1:
            U = U[:-1]
    A = rom.forward(t0, np.asarray(a0, float), U)
    reduced = Trajectory.from_values(t0, rom.params.dt, A)
    lifted = Trajectory.from_values(t0, rom.params.dt, rom.lift(A))
    return reduced, lifted


def solve_rom_adjoint(rom: ReducedModel, ybar_reduced: Trajectory) -> Trajectory:
    B = rom.adjoint(ybar_reduced.t0, ybar_reduced.values)
    return Trajectory(t0=ybar_reduced.t0, times=ybar_reduced.times.copy(), values=B)


# ---------------------------------------------------------------------------
# CSV serialization (inspection format: one mode per column, eigenvalue header)
# ---------------------------------------------------------------------------

def save_basis_csv(basis: PodBasis, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["space", basis.space, "n_interior", basis.grid.n_interior])
        writer.writerow([repr(float(v)) for v in basis.eigenvalues])
        for row in basis.modes:
            writer.writerow([repr(float(v)) for v in row])


def load_basis_csv(path) -> PodBasis:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    space = rows[0][1]
    n_interior = int(rows[0][3])
    eigenvalues = np.array([float(v) for v in rows[1]])
    modes = np.array([[float(v) for v in row] for row in rows[2:]])
    from .fd_model import build_grid
    return PodBasis(space=space, modes=modes, eigenvalues=eigenvalues,
                    grid=build_grid(n_interior))


def save_snapshots_csv(snapshots: SnapshotSet, path) -> None:
    """One snapshot per row, prefixed by its block role."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dt", repr(snapshots.dt)])
        for role, arr in snapshots.blocks:
            for row in arr:
                writer.writerow([role] + [repr(float(v)) for v in row])
