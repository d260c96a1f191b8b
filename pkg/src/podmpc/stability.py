"""Suboptimality certificates for receding-horizon control of the semilinear PDE.

Exponential-controllability constants of the feedback law u = -K*y, the
relaxed-dynamic-programming degree alpha^N(K) (and its reduced-order
correction), admissible-gain bounds from the control box, gain optimization,
and the minimal stabilizing horizon search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fd_model import ModelParams, SpatialGrid, Trajectory, h_norm

GAMMA_EPS = 1e-3           # feasibility floor for the decay rate
GAIN_MARGIN = 1e-3         # relative shrink of finite admissibility bounds
GAIN_CAP = 12.0            # search cap when the box imposes no upper bound
GAIN_GRID = 1000
GAIN_REFINE_TOL = 1e-3
ERR_FLOOR = 1e-12


class InfeasibleGainError(ValueError):
    """The requested gain (or the whole gain interval) cannot certify decay."""


class HorizonNotFoundError(RuntimeError):
    """No stabilizing horizon found up to N_max."""


class AlphaFormulaError(ArithmeticError):
    """The relaxed-DPP formula degenerated (nonpositive denominator)."""


@dataclass(frozen=True)
class StabilityConstants:
    """Exponential-controllability constants of u = -K*y for one parameter set.

    gamma = K + theta*pi^2 - rho is the H-norm decay rate, C = 1 + lam*K^2 the
    running-cost overshoot, and sigma_step = exp(-2*gamma*dt) the cost decay
    per sampling step.
    """

    K: float
    gamma: float
    C: float
    sigma_step: float
    dt: float


@dataclass(frozen=True)
class HorizonResult:
    N_min: int
    K_star: float
    alpha: float
    constraint_active: str          # "box", "cap" or "interior"
    alpha_prev: float               # optimized alpha at N_min - 1 (nan when N_min == 2)
    rom_err_bound: float = 0.0


def decay_rate(params: ModelParams, K: float) -> float:
    return K + params.theta * math.pi**2 - params.rho


def controllability_constants(params: ModelParams, K: float,
                              eps: float = GAMMA_EPS) -> StabilityConstants:
    """Constants (gamma, C, sigma_step) for gain K; rejects gains with gamma < eps."""
    if K < 0:
        raise InfeasibleGainError(f"gain must be nonnegative, got {K}")
    gamma = decay_rate(params, K)
    if gamma < eps:
        raise InfeasibleGainError(
            f"gamma(K={K}) = {gamma:.6f} is below the feasibility floor {eps}"
        )
    return StabilityConstants(
        K=K,
        gamma=gamma,
        C=1.0 + params.lam * K**2,
        sigma_step=math.exp(-2.0 * gamma * params.dt),
        dt=params.dt,
    )


def _alpha_from_eta(eta: np.ndarray) -> float:
    """alpha = 1 - (eta_N - 1) * prod(eta_i - 1) / (prod(eta_i) - prod(eta_i - 1)).

    Evaluated in log space: alpha = 1 - (eta_N - 1)/(exp(sum log(eta_i/(eta_i-1))) - 1).
    """
    if np.any(eta <= 1.0):
        raise AlphaFormulaError("eta_i <= 1 encountered; denominator would be nonpositive")
    s = float(np.sum(np.log(eta / (eta - 1.0))))
    return 1.0 - (float(eta[-1]) - 1.0) / math.expm1(s)


def alpha_horizon(constants: StabilityConstants, N: int) -> float:
    """Suboptimality degree alpha^N for a horizon of N sampling steps (N >= 2)."""
    return alpha_horizon_rom(constants, N, 0.0)


def alpha_horizon_rom(constants: StabilityConstants, N: int, err_sup: float) -> float:
    """alpha^N with the overshoot inflated to C + 2*err + err^2 by the model-error bound."""
    if N < 2:
        raise ValueError(f"horizon must be at least 2 steps, got {N}")
    if err_sup < 0:
        raise ValueError("err_sup must be nonnegative")
    C_eff = constants.C + 2.0 * err_sup + err_sup**2
    sigma = constants.sigma_step
    i = np.arange(2, N + 1)
    eta = C_eff * (1.0 - sigma**i) / (1.0 - sigma)
    return _alpha_from_eta(eta)


def feedback_bounds(y0: np.ndarray, params: ModelParams) -> tuple[float, float]:
    """Admissible gain interval [0, K_max] keeping -K*y inside the control box.

    The case split follows the extrema of the zero-extended initial state,
    y_a = min(y0, 0) and y_b = max(y0, 0); degenerate sign patterns are
    rejected with a diagnostic.
    """
    y0 = np.asarray(y0, dtype=float)
    y_a = min(float(y0.min()), 0.0)
    y_b = max(float(y0.max()), 0.0)
    ua, ub = params.u_a, params.u_b
    if y_b == 0.0:
        if y_a >= 0.0:
            raise InfeasibleGainError("y0 is identically zero; no gain bound is meaningful")
        return (0.0, math.inf)
    if y_b < 0.0:                     # unreachable with zero-extension; kept for completeness
        if y_a >= 0.0:
            raise InfeasibleGainError("y_a >= 0 with y_b < 0 is impossible")
        return (0.0, ub / abs(y_b) if math.isfinite(ub) else math.inf)
    if y_a < 0.0:
        k1 = abs(ua) / y_b if math.isfinite(ua) else math.inf
        k2 = ub / abs(y_a) if math.isfinite(ub) else math.inf
        return (0.0, min(k1, k2))
    return (0.0, abs(ua) / y_b if math.isfinite(ua) else math.inf)


def _alpha_table(params: ModelParams, K: np.ndarray, N_max: int,
                 err_sup: float) -> np.ndarray:
    """alpha^{N}(K) for N = 2..N_max over a gain grid, one row per gain."""
    gamma = K + params.theta * math.pi**2 - params.rho
    sigma = np.exp(-2.0 * gamma * params.dt)
    C_eff = 1.0 + params.lam * K**2 + 2.0 * err_sup + err_sup**2
    i = np.arange(2, N_max + 1)
    eta = C_eff[:, None] * (1.0 - sigma[:, None] ** i[None, :]) / (1.0 - sigma[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(eta > 1.0, np.log(eta / (eta - 1.0)), np.nan)
        s = np.cumsum(logs, axis=1)
        return 1.0 - (eta - 1.0) / np.expm1(s)


def _gain_interval(params: ModelParams, y0: np.ndarray,
                   eps: float = GAMMA_EPS) -> tuple[float, float, bool]:
    """Search interval [K_lo, K_hi] and whether K_hi comes from the control box."""
    K_lo = max(0.0, params.rho - params.theta * math.pi**2 + eps)
    _, K_box = feedback_bounds(y0, params)
    if math.isfinite(K_box):
        K_hi, from_box = K_box * (1.0 - GAIN_MARGIN), True
    else:
        K_hi, from_box = GAIN_CAP, False
    if K_hi < K_lo:
        raise InfeasibleGainError(
            f"empty gain interval: stabilization needs K >= {K_lo:.4f} "
            f"but the control box allows K <= {K_hi:.4f}"
        )
    return K_lo, K_hi, from_box


def _golden_refine(f, a: float, b: float, tol: float = GAIN_REFINE_TOL) -> float:
    """Golden-section maximizer of f on [a, b]; ties resolve toward smaller K."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return a if f(a) >= f(b) else b


def optimize_feedback_gain(params: ModelParams, y0: np.ndarray, N: int,
                           rom_err: float = 0.0) -> tuple[float, float]:
    """Maximize alpha^N(K) over the admissible gain interval; returns (K_star, alpha).

    Dense grid scan followed by golden-section refinement on the bracketing
    cell; finite box bounds are shrunk by the safety margin.
    """
    K_lo, K_hi, _ = _gain_interval(params, y0)
    grid = np.linspace(K_lo, K_hi, GAIN_GRID)
    alphas = _alpha_table(params, grid, max(N, 2), rom_err)[:, N - 2]
    j = int(np.nanargmax(alphas))
    a = grid[max(j - 1, 0)]
    b = grid[min(j + 1, len(grid) - 1)]

    def objective(K: float) -> float:
        try:
            return alpha_horizon_rom(controllability_constants(params, K), N, rom_err)
        except (InfeasibleGainError, AlphaFormulaError):
            return -math.inf

    K_star = _golden_refine(objective, a, b)
    return K_star, objective(K_star)


def minimal_horizon(params: ModelParams, y0: np.ndarray, rom_err: float = 0.0,
                    N_max: int = 200) -> HorizonResult:
    """Smallest N in [2, N_max] whose gain-optimized alpha is positive."""
    K_lo, K_hi, from_box = _gain_interval(params, y0)
    grid = np.linspace(K_lo, K_hi, GAIN_GRID)
    table = _alpha_table(params, grid, N_max, rom_err)
    best = np.nanmax(table, axis=0)
    positive = np.flatnonzero(best > 0.0)
    if positive.size == 0:
        raise HorizonNotFoundError(f"no stabilizing horizon up to N_max = {N_max}")
    N_min = int(positive[0]) + 2
    K_star, alpha = optimize_feedback_gain(params, y0, N_min, rom_err)
    if N_min > 2:
        _, alpha_prev = optimize_feedback_gain(params, y0, N_min - 1, rom_err)
    else:
        alpha_prev = math.nan
    bound_hit = abs(K_star - K_hi) <= 2.0 * GAIN_REFINE_TOL
    active = ("box" if from_box else "cap") if bound_hit else "interior"
    return HorizonResult(N_min=N_min, K_star=K_star, alpha=alpha,
                         constraint_active=active, alpha_prev=alpha_prev,
                         rom_err_bound=rom_err)


def rom_error_term(grid: SpatialGrid, full_state: Trajectory,
                   rom_state: Trajectory) -> tuple[np.ndarray, float]:
    """Relative H-norm gap Err(t) = ||y_full(t) - y_rom(t)||_H / ||y_rom(t)||_H.

    Times where the reduced state falls below the norm floor are excluded
    (returned as NaN); an all-excluded window is an error. Returns the
    per-time profile and its supremum over the kept times.
    """
    if full_state.values.shape != rom_state.values.shape:
        raise ValueError("trajectories must share the time window and grid")
    err = np.full(full_state.values.shape[0], np.nan)
    for k in range(err.size):
        denom = h_norm(grid, rom_state.values[k])
        if denom >= ERR_FLOOR:
            err[k] = h_norm(grid, full_state.values[k] - rom_state.values[k]) / denom
    if np.all(np.isnan(err)):
        raise ValueError("reduced state is below the norm floor on the whole window")
    return err, float(np.nanmax(err))
