#!/usr/bin/env python3
"""Minimal stabilizing horizon as a function of the assumed model-error bound.

A reduced-order surrogate inflates the controllability overshoot from C to
C + 2*err + err^2, so the certified horizon grows with the error budget. This
sweeps a grid of bounds for the chosen presets and writes one CSV per preset.
"""

import argparse

from podmpc.cli import sweep_err_horizon


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="podmpc_out/sweeps")
    parser.add_argument("--presets", default="run2,run4")
    parser.add_argument("--errs", default="0,1e-4,1e-3,1e-2,3e-2,1e-1")
    args = parser.parse_args()
    errs = [float(e) for e in args.errs.split(",")]
    for name in args.presets.split(","):
        print(f"--- {name}")
        for row in sweep_err_horizon(name.strip(), errs, args.out):
            print(f"  err={row['err']:<8g} N_min={row['N_min']:<4d} "
                  f"K*={row['K_star']:.3f}  alpha={row['alpha']:+.4f} [{row['status']}]")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
