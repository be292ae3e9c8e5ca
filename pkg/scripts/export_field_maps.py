#!/usr/bin/env python3
"""Teach one policy per task and export plot-ready field slice CSVs."""

import argparse
from pathlib import Path

import numpy as np

from gpvic import policy as pol, sim, teacher


def taught_unplug(seed=1):
    demo = teacher.scripted_demo("unplug", 0.15, seed=seed)
    ref = teacher.ReferencePath(demo.positions)
    state = pol.init_from_demos([demo], pol.PolicyConfig(), seed=seed)
    taught, _ = teacher._teach_passes(
        state, lambda: sim.Environment.plug(teacher.SOCKET), ref, (16.0, 12.0))
    return taught


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="fields")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--resolution", type=int, nargs=2, default=(60, 40))
    args = parser.parse_args()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    state = taught_unplug(args.seed)
    n0, n1 = args.resolution
    g0 = np.linspace(0.15, 0.6, n0)
    g1 = np.linspace(0.1, 0.45, n1)
    grid = np.zeros((n0 * n1, 3))
    m0, m1 = np.meshgrid(g0, g1, indexing="ij")
    grid[:, 0] = m0.ravel()
    grid[:, 2] = m1.ravel()
    dx, ks, rel, fst = pol.query_batch(state, grid)
    force = ks * dx
    path = out_dir / f"unplug_seed{args.seed}_xz.csv"
    with open(path, "w") as fh:
        fh.write("x,y,fx,fy,sigma_rel,fsx,fsy\n")
        for i in range(grid.shape[0]):
            fh.write(",".join(repr(float(v)) for v in (
                grid[i, 0], grid[i, 2], force[i, 0], force[i, 2],
                rel[i], fst[i, 0], fst[i, 2])) + "\n")
    print(f"wrote {path}")
    (out_dir / f"unplug_seed{args.seed}_policy.json").write_text(
        pol.policy_to_json(state))


if __name__ == "__main__":
    main()
