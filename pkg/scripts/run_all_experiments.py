#!/usr/bin/env python3
"""Run every experiment preset across seeds into one run directory."""

import argparse
from pathlib import Path

from gpvic import teacher
from gpvic.cli import main as cli_main


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="runs")
    parser.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    args = parser.parse_args()

    for preset in sorted(teacher.PRESETS):
        out = Path(args.out) / preset
        print(f"== {preset} -> {out}")
        rc = cli_main(["--out", str(out), "experiment", preset,
                       "--seeds", *[str(s) for s in args.seeds]])
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
