#!/usr/bin/env python3
"""End-to-end reproduction of the four benchmark scenarios.

For each preset: minimal stabilizing horizon and gain, the feedback rollout,
the full receding-horizon loop, and both reduced-order variants, with every
gated value compared against its reference table. Artifacts (state/control
CSVs, spectra, summary.json) land under --out; exit code 2 flags tolerance
breaches, mirroring `podmpc run`.
"""

import argparse
import sys

from podmpc.cli import run_preset


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="podmpc_out")
    parser.add_argument("--presets", default="run1,run2,run3,run4")
    parser.add_argument("--mode", default="all")
    args = parser.parse_args()
    worst = 0
    for name in args.presets.split(","):
        code, summary = run_preset(name.strip(), args.mode, args.out)
        worst = max(worst, code)
        print(f"{name}: {'all gates passed' if code == 0 else 'tolerance breach'}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
