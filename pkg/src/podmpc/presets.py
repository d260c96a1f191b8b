"""Benchmark presets: the four reference experiments with their expected values.

Every preset pins the PDE/cost constants, the initial profile, the prediction
horizon and certified gain, the two reduced-order variants, and the expected
closed-loop numbers with their gate tolerances (relative unless noted).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fd_model import ModelParams, SpatialGrid, build_grid


@dataclass(frozen=True)
class Expected:
    """A gated reference value: target with relative tolerance."""

    value: float
    rtol: float

    def check(self, actual: float) -> bool:
        return abs(actual - self.value) <= self.rtol * abs(self.value)


@dataclass(frozen=True)
class RunPreset:
    name: str
    theta: float
    rho: float
    lam: float = 0.01
    dt: float = 0.01
    nx: int = 99
    T: float = 0.5
    u_a: float = -math.inf
    u_b: float = math.inf
    y0_kind: str = "sin"            # "sin": a*sin(pi x); "sgn": a*sgn(x - c)
    y0_amplitude: float = 0.2
    y0_center: float = 0.3
    horizon: int = 10               # certified prediction horizon (steps)
    gain: float = 2.46              # certified feedback gain
    gain_tol: float = 0.05          # absolute gate on the recomputed gain
    pod_hi: tuple[int, int] = (13, 15)
    pod_lo: tuple[int, int] = (3, 2)
    cost_ky: Expected | None = None
    cost_nmpc: Expected | None = None
    cost_pod_hi: Expected | None = None
    cost_pod_lo: Expected | None = None
    err_ky: Expected | None = None
    err_pod_hi: Expected | None = None
    err_pod_lo: Expected | None = None

    def params(self) -> ModelParams:
        return ModelParams(theta=self.theta, rho=self.rho, lam=self.lam,
                           dt=self.dt, u_a=self.u_a, u_b=self.u_b)

    def grid(self, nx: int | None = None) -> SpatialGrid:
        return build_grid(self.nx if nx is None else nx)

    def initial_state(self, grid: SpatialGrid) -> np.ndarray:
        if self.y0_kind == "sin":
            return self.y0_amplitude * np.sin(np.pi * grid.nodes)
        if self.y0_kind == "sgn":
            shifted = grid.nodes - self.y0_center
            shifted[np.abs(shifted) < 1e-12] = 0.0
            return self.y0_amplitude * np.sign(shifted)
        raise ValueError(f"unknown initial profile kind {self.y0_kind!r}")


_COST_TOL = 0.25
_ERR_TOL = 0.40

PRESETS: dict[str, RunPreset] = {
    "run1": RunPreset(
        name="run1", theta=1.0, rho=11.0,
        horizon=10, gain=2.46, gain_tol=0.05,
        pod_hi=(13, 15), pod_lo=(3, 2),
        cost_ky=Expected(0.0025, _COST_TOL), cost_nmpc=Expected(0.0015, _COST_TOL),
        cost_pod_hi=Expected(0.0016, _COST_TOL), cost_pod_lo=Expected(0.0016, _COST_TOL),
        err_ky=Expected(0.0145, _ERR_TOL),
        err_pod_hi=Expected(0.0047, _ERR_TOL), err_pod_lo=Expected(0.0058, _ERR_TOL),
    ),
    "run2": RunPreset(
        name="run2", theta=1.0, rho=11.0, u_a=-0.3, u_b=0.0,
        horizon=14, gain=1.50, gain_tol=0.01,
        pod_hi=(13, 15), pod_lo=(3, 2),
        cost_ky=Expected(0.0035, _COST_TOL), cost_nmpc=Expected(0.0027, _COST_TOL),
        cost_pod_hi=Expected(0.0032, _COST_TOL), cost_pod_lo=Expected(0.0033, _COST_TOL),
        err_ky=Expected(0.0089, _ERR_TOL),
        err_pod_hi=Expected(0.0054, _ERR_TOL), err_pod_lo=Expected(0.0055, _ERR_TOL),
    ),
    "run3": RunPreset(
        name="run3", theta=1.0 / math.sqrt(2.0), rho=10.0, u_a=-1.0, u_b=0.0,
        horizon=30, gain=5.0, gain_tol=0.01,
        pod_hi=(16, 16), pod_lo=(2, 3),
        cost_ky=Expected(0.0021, _COST_TOL), cost_nmpc=Expected(0.0016, _COST_TOL),
        cost_pod_hi=Expected(0.0017, _COST_TOL), cost_pod_lo=Expected(0.0018, _COST_TOL),
        err_ky=Expected(0.0208, _ERR_TOL),
        err_pod_hi=Expected(0.0092, _ERR_TOL), err_pod_lo=Expected(0.0093, _ERR_TOL),
    ),
    # rho = 10 is the only value consistent with this setting's certified
    # (N = 43, K = 9.99) pair and its cost row; the calibration oracle in the
    # acceptance suite pins this down.
    "run4": RunPreset(
        name="run4", theta=0.5, rho=10.0, u_a=-1.0, u_b=1.0,
        y0_kind="sgn", y0_amplitude=0.1, y0_center=0.3,
        horizon=43, gain=9.99, gain_tol=0.05,
        pod_hi=(17, 19), pod_lo=(3, 4),
        cost_ky=Expected(4.7e-4, _COST_TOL), cost_nmpc=Expected(4.1e-4, _COST_TOL),
        cost_pod_hi=Expected(4.4e-4, _COST_TOL), cost_pod_lo=Expected(4.4e-4, _COST_TOL),
        err_ky=Expected(0.0060, _ERR_TOL),
        err_pod_hi=Expected(0.0034, _ERR_TOL), err_pod_lo=Expected(0.0035, _ERR_TOL),
    ),
}


def get_preset(name: str) -> RunPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
