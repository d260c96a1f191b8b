"""Command-line entry point: preset execution, result export, and horizon sweeps.

    podmpc run --preset run1 --mode all --out results/
    podmpc sweep-err --preset run2 --errs 0,1e-3,1e-2,1e-1 --out results/

Exit codes: 0 all gates pass, 2 a gated value missed its tolerance, 1 error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .fd_model import ModelParams, Trajectory, feedback_rollout
from .mpc import (MpcConfig, MpcResult, RomSettings, build_rom_from_config,
                  evaluate_metrics, run_nmpc, run_pod_nmpc)
from .presets import PRESETS, RunPreset, get_preset
from .stability import (HorizonNotFoundError, minimal_horizon, rom_error_term)

MODES = ("horizon", "feedback", "nmpc", "pod-nmpc", "all")


class ConfigError(ValueError):
    """Malformed or schema-violating configuration file."""


_CONFIG_KEYS = {
    "preset": str, "nx": int, "horizon": int, "T": float, "dt": float,
    "theta": float, "rho": float, "lam": float, "u_a": float, "u_b": float,
    "y0": dict, "pod_rank": int, "deim_rank": int, "tau_pod": float,
    "space": str, "noise": float, "seed": int,
}
_Y0_KEYS = {"kind": str, "amplitude": float, "center": float}


def _coerce(key: str, value, want: type):
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, want) and not isinstance(value, bool):
        return value
    raise ConfigError(f"config key {key!r} must be of type {want.__name__}")


def load_config(path) -> MpcConfig:
    """Resolve a JSON config file into a fully-populated MpcConfig.

    Unknown keys are rejected; a named preset supplies the defaults and every
    other key overrides it.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"invalid JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = {k: _coerce(k, v, _CONFIG_KEYS[k]) for k, v in raw.items()}

    preset = get_preset(data["preset"]) if "preset" in data else None
    if preset is None:
        missing = {"theta", "rho"} - set(data)
        if missing:
            raise ConfigError(f"config without a preset must set {sorted(missing)}")
        preset = RunPreset(name="custom", theta=data["theta"], rho=data["rho"])
    overrides = {}
    for src, dst in [("theta", "theta"), ("rho", "rho"), ("lam", "lam"),
                     ("dt", "dt"), ("nx", "nx"), ("T", "T"), ("u_a", "u_a"),
                     ("u_b", "u_b"), ("horizon", "horizon")]:
        if src in data:
            overrides[dst] = data[src]
    if "y0" in data:
        y0 = data["y0"]
        unknown = set(y0) - set(_Y0_KEYS)
        if unknown:
            raise ConfigError(f"unknown y0 keys: {sorted(unknown)}")
        if y0.get("kind", "sin") not in ("sin", "sgn"):
            raise ConfigError("y0.kind must be 'sin' or 'sgn'")
        overrides["y0_kind"] = y0.get("kind", preset.y0_kind)
        overrides["y0_amplitude"] = float(y0.get("amplitude", preset.y0_amplitude))
        overrides["y0_center"] = float(y0.get("center", preset.y0_center))
    preset = replace(preset, **overrides)

    rom = None
    if "pod_rank" in data or "tau_pod" in data:
        rom = RomSettings(pod_rank=data.get("pod_rank"),
                          deim_rank=data.get("deim_rank"),
                          tau_pod=data.get("tau_pod"),
                          space=data.get("space", "H"))
    try:
        params = preset.params()
        grid = preset.grid()
        return MpcConfig(params=params, grid=grid, T=preset.T, N=preset.horizon,
                         y0=preset.initial_state(grid), rom=rom,
                         noise_level=data.get("noise", 0.0),
                         rng_seed=data.get("seed", 0))
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump_json(payload: dict, path: Path) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _write_traj_csv(path: Path, traj: Trajectory) -> None:
    n = traj.values.shape[1]
    header = ["t"] + [f"x_{i}" for i in range(1, n + 1)]
    rows = (np.concatenate(([t], v)) for t, v in zip(traj.times, traj.values))
    _write_csv(path, header, rows)


def export_results(state: Trajectory, control: Trajectory, summary: dict,
                   out_dir, eigenvalues: np.ndarray | None = None) -> None:
    """state.csv / control.csv / summary.json (+ eigs.csv for reduced runs)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_traj_csv(out / "state.csv", state)
    _write_traj_csv(out / "control.csv", control)
    _dump_json(summary, out / "summary.json")
    if eigenvalues is not None:
        _write_csv(out / "eigs.csv", ["index", "eigenvalue"],
                   ((i + 1, v) for i, v in enumerate(eigenvalues)))


@dataclass
class Gate:
    label: str
    expected: float
    tolerance: float          # relative, except for the exact-integer horizon gate
    actual: float
    passed: bool


def _gate(gates: list[Gate], label: str, expected, actual: float) -> None:
    passed = expected.check(actual)
    gates.append(Gate(label=label, expected=expected.value, tolerance=expected.rtol,
                      actual=actual, passed=passed))


# ---------------------------------------------------------------------------
# preset pipelines
# ---------------------------------------------------------------------------

def _feedback_result(preset: RunPreset, params, grid, y0) -> MpcResult:
    roll = feedback_rollout(params, grid, 0.0, int(round(preset.T / params.dt)), y0,
                            preset.gain)
    lam = params.lam
    Y, U = roll.state.values, roll.control.values
    cost = params.dt * 0.5 * float(np.sum(
        grid.dx * (np.einsum("ij,ij->i", Y, Y)[:-1]
                   + lam * np.einsum("ij,ij->i", U, U)[:-1])))
    return MpcResult(state=roll.state, control=roll.control, closed_loop_cost=cost,
                     wall_time_total=0.0, wall_time_per_step=0.0)


def run_preset(name: str, mode: str, out_dir, pod_rank: int | None = None,
               deim_rank: int | None = None, tau_pod: float | None = None,
               noise: float = 0.0, seed: int = 0, nx: int | None = None,
               horizon: int | None = None) -> tuple[int, dict]:
    """Execute one preset pipeline, export artifacts, and gate against the goldens."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    preset = get_preset(name)
    if horizon is not None:
        preset = replace(preset, horizon=horizon)
    params = preset.params()
    grid = preset.grid(nx)
    y0 = preset.initial_state(grid)
    out = Path(out_dir) / preset.name
    gates: list[Gate] = []
    summary: dict = {"preset": preset.name, "mode": mode}

    if mode in ("horizon", "all"):
        hr = minimal_horizon(params, y0)
        summary["horizon"] = {"N": hr.N_min, "K": hr.K_star, "alpha": hr.alpha,
                              "alpha_prev": hr.alpha_prev,
                              "constraint_active": hr.constraint_active}
        gates.append(Gate("horizon.N", preset.horizon, 0.0, hr.N_min,
                          hr.N_min == preset.horizon))
        gates.append(Gate("horizon.K", preset.gain, preset.gain_tol, hr.K_star,
                          abs(hr.K_star - preset.gain) <= preset.gain_tol))

    reference: MpcResult | None = None
    if mode in ("feedback", "all"):
        fb = _feedback_result(preset, params, grid, y0)
        _gate(gates, "feedback.J", preset.cost_ky, fb.closed_loop_cost)
        export_results(fb.state, fb.control,
                       {"variant": "feedback", "K": preset.gain,
                        "J": fb.closed_loop_cost}, out / "feedback")
        summary["feedback"] = {"J": fb.closed_loop_cost, "K": preset.gain}

    if mode in ("nmpc", "pod-nmpc", "all"):
        config = MpcConfig(params=params, grid=grid, T=preset.T, N=preset.horizon,
                           y0=y0, noise_level=noise, rng_seed=seed)
        reference = run_nmpc(config)
        _gate(gates, "nmpc.J", preset.cost_nmpc, reference.closed_loop_cost)
        export_results(reference.state, reference.control,
                       {"variant": "nmpc", "N": preset.horizon,
                        "J": reference.closed_loop_cost,
                        "wall_time_s": reference.wall_time_total}, out / "nmpc")
        summary["nmpc"] = {"J": reference.closed_loop_cost,
                           "wall_time_s": reference.wall_time_total}
        if mode == "all":
            fb = _feedback_result(preset, params, grid, y0)
            met = evaluate_metrics(fb, reference, grid)
            _gate(gates, "feedback.err_L2", preset.err_ky, met.err_l2)
            summary["feedback"]["err_L2"] = met.err_l2

    if mode in ("pod-nmpc", "all"):
        variants = []
        if pod_rank is not None or tau_pod is not None:
            variants.append(("pod", RomSettings(pod_rank=pod_rank, deim_rank=deim_rank,
                                                tau_pod=tau_pod), None, None))
        else:
            variants.append(("pod_hi", RomSettings(*preset.pod_hi),
                             preset.cost_pod_hi, preset.err_pod_hi))
            variants.append(("pod_lo", RomSettings(*preset.pod_lo),
                             preset.cost_pod_lo, preset.err_pod_lo))
        for label, rset, cost_gate, err_gate in variants:
            config = MpcConfig(params=params, grid=grid, T=preset.T, N=preset.horizon,
                               y0=y0, rom=rset, noise_level=noise, rng_seed=seed)
            res = run_pod_nmpc(config)
            met = evaluate_metrics(res, reference, grid)
            if cost_gate is not None:
                _gate(gates, f"{label}.J", cost_gate, res.closed_loop_cost)
            if err_gate is not None:
                _gate(gates, f"{label}.err_L2", err_gate, met.err_l2)
            export_results(res.state, res.control,
                           {"variant": label, "N": preset.horizon,
                            "pod_rank": res.pod_rank, "deim_rank": res.deim_rank,
                            "J": res.closed_loop_cost, "err_L2": met.err_l2,
                            "err_sup": met.err_sup, "speedup": met.speedup,
                            "wall_time_s": res.wall_time_total,
                            "offline_time_s": res.offline_time},
                           out / label, eigenvalues=res.eigenvalues)
            summary[label] = {"J": res.closed_loop_cost, "err_L2": met.err_l2,
                              "err_sup": met.err_sup, "speedup": met.speedup,
                              "pod_rank": res.pod_rank, "deim_rank": res.deim_rank,
                              "wall_time_s": res.wall_time_total}

    summary["gates"] = [vars(g) for g in gates]
    summary["passed"] = all(bool(g.passed) for g in gates)
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(summary, out / "summary.json")
    for g in gates:
        status = "PASS" if g.passed else "FAIL"
        print(f"[{status}] {preset.name} {g.label}: got {g.actual:.6g}, "
              f"want {g.expected:.6g} (tol {g.tolerance:.2g})")
    return (0 if summary["passed"] else 2), summary


def sweep_err_horizon(name: str, err_grid, out_dir=None) -> list[dict]:
    """Minimal horizon as a function of the assumed reduced-order error bound."""
    preset = get_preset(name)
    params = preset.params()
    grid = preset.grid()
    y0 = preset.initial_state(grid)
    if sorted(err_grid) != list(err_grid) or any(e < 0 for e in err_grid):
        raise ValueError("err grid must be nonnegative and sorted")
    rows = []
    for err in err_grid:
        try:
            hr = minimal_horizon(params, y0, rom_err=err)
            rows.append({"err": err, "N_min": hr.N_min, "K_star": hr.K_star,
                         "alpha": hr.alpha, "status": "ok"})
        except HorizonNotFoundError:
            rows.append({"err": err, "N_min": -1, "K_star": math.nan,
                         "alpha": math.nan, "status": "not-found"})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / f"{preset.name}_err_horizon.csv", "w", newline="") as fh:
            fh.write("err,N_min,K_star,alpha,status\n")
            for r in rows:
                fh.write(f"{r['err']!r},{r['N_min']},{r['K_star']!r},"
                         f"{r['alpha']!r},{r['status']}\n")
    return rows


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="podmpc")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a benchmark preset")
    run.add_argument("--preset", default="run1",
                     help="run1..run4, or 'all' (comma lists accepted)")
    run.add_argument("--mode", default="all", choices=MODES)
    run.add_argument("--out", default="podmpc_out")
    run.add_argument("--config", default=None,
                     help="JSON config file; overrides the preset defaults")
    run.add_argument("--pod-rank", type=int, default=None)
    run.add_argument("--deim-rank", type=int, default=None)
    run.add_argument("--tau-pod", type=float, default=None)
    run.add_argument("--noise", type=float, default=0.0)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--nx", type=int, default=None)
    run.add_argument("--horizon", type=int, default=None)

    sweep = sub.add_parser("sweep-err", help="horizon sweep over model-error bounds")
    sweep.add_argument("--preset", default="run2")
    sweep.add_argument("--errs", default="0,1e-3,1e-2,1e-1",
                       help="comma-separated nonnegative error bounds")
    sweep.add_argument("--out", default="podmpc_out")
    return parser


def run_config(config: MpcConfig, mode: str, out_dir) -> int:
    """Ungated pipeline for a custom configuration: artifacts only."""
    out = Path(out_dir) / "config"
    summary: dict = {"mode": mode}
    if mode in ("horizon", "all"):
        hr = minimal_horizon(config.params, np.asarray(config.y0, float))
        summary["horizon"] = {"N": hr.N_min, "K": hr.K_star, "alpha": hr.alpha}
    if mode in ("feedback", "all"):
        K = summary.get("horizon", {}).get(
            "K", minimal_horizon(config.params, np.asarray(config.y0, float)).K_star)
        roll = feedback_rollout(config.params, config.grid, 0.0,
                                config.n_plant_steps, config.y0, K)
        export_results(roll.state, roll.control, {"variant": "feedback", "K": K},
                       out / "feedback")
        summary["feedback"] = {"K": K, "bounds_violated": roll.bounds_violated}
    if mode in ("nmpc", "pod-nmpc", "all"):
        if config.rom is not None and mode != "nmpc":
            res = run_pod_nmpc(config)
            label = "pod-nmpc"
        else:
            res = run_nmpc(replace(config, rom=None))
            label = "nmpc"
        met = evaluate_metrics(res)
        export_results(res.state, res.control,
                       {"variant": label, "N": config.N, "J": res.closed_loop_cost,
                        "err_sup": met.err_sup, "wall_time_s": res.wall_time_total},
                       out / label, eigenvalues=res.eigenvalues)
        summary[label] = {"J": res.closed_loop_cost,
                          "wall_time_s": res.wall_time_total}
    out.mkdir(parents=True, exist_ok=True)
    _dump_json(summary, out / "summary.json")
    return 0


def _run_command(args) -> int:
    if args.config is not None:
        return run_config(load_config(args.config), args.mode, args.out)
    names = list(PRESETS) if args.preset == "all" else args.preset.split(",")
    kwargs = dict(pod_rank=args.pod_rank, deim_rank=args.deim_rank,
                  tau_pod=args.tau_pod, noise=args.noise, seed=args.seed,
                  nx=args.nx, horizon=args.horizon)
    threads = max(1, int(os.environ.get("PODMPC_THREADS", "1")))
    codes = []
    if threads > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_preset, n, args.mode, args.out, **kwargs)
                       for n in names]
            codes = [f.result()[0] for f in futures]
    else:
        for n in names:
            code, _ = run_preset(n, args.mode, args.out, **kwargs)
            codes.append(code)
    return max(codes) if codes else 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run_command(args)
        if args.command == "sweep-err":
            errs = [float(e) for e in args.errs.split(",")]
            rows = sweep_err_horizon(args.preset, errs, args.out)
            for r in rows:
                print(f"err={r['err']:g}: N_min={r['N_min']} K={r['K_star']:.3f} "
                      f"alpha={r['alpha']:+.4f} [{r['status']}]")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:                       # pragma: no cover - defensive
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
