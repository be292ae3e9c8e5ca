"""Command line entry points.

Subcommands:

* ``experiment`` -- run a scripted-teacher preset across seeds, writing the
  summary table, per-episode logs, policy snapshots and a checksum manifest
* ``train``      -- fit a policy from recorded demo files (CSV ``t,x,y,z``
  or JSON) and save it as one JSON document
* ``field``      -- evaluate a saved policy on a grid slice and emit a
  plot-ready CSV of forces, relative uncertainty and stabilization field
* ``replay``     -- summarize a recorded episode log
* ``serve``      -- start the live teaching service

Exit codes: 0 success, 2 usage, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import policy as pol
from . import teacher


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    doc = yaml.safe_load(open(path)) or {}
    if not isinstance(doc, dict):
        raise ValueError("config file must contain a mapping")
    return doc


def _policy_overrides(config: dict, preset: str | None = None) -> dict:
    overrides = dict(config.get("policy", {}))
    if preset:
        overrides.update(config.get("presets", {}).get(preset, {}).get("policy", {}))
    return overrides


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def cmd_experiment(args) -> int:
    config = _load_config(args.config)
    preset_cfg = config.get("presets", {}).get(args.preset, {})
    seeds = args.seeds or preset_cfg.get("seeds") or [1, 2, 3, 4, 5]
    overrides = _policy_overrides(config, args.preset)
    env_overrides = dict(config.get("environment", {}))
    env_overrides.update(preset_cfg.get("environment", {}))

    out_dir = Path(args.out or f"runs/{args.preset}")
    out_dir.mkdir(parents=True, exist_ok=True)
    sink = teacher.ArtifactSink(out_dir)
    report = teacher.experiment(args.preset, seeds, overrides or None, sink=sink,
                                env_overrides=env_overrides or None)

    (out_dir / "summary.txt").write_text(report.to_text() + "\n")
    report.to_csv(out_dir / "summary.csv")
    if not args.quiet:
        print(report.to_text())

    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "preset": args.preset,
        "seeds": [int(s) for s in seeds],
        "policy_overrides": overrides,
        "checksums": {str(p.relative_to(out_dir)): _sha256(p) for p in files},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    overrides = _policy_overrides(config)
    cfg = teacher._config_with(overrides or None)
    demos = [teacher.load_demo_file(p) for p in args.demos]
    state = pol.init_from_demos(demos, cfg, seed=args.seed)
    out = Path(args.out or "policy.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(pol.policy_to_json(state))
    if not args.quiet:
        print(f"trained on {len(demos)} demo(s), {state.attractor_gp.n_points} samples "
              f"-> {out}")
    return 0


def cmd_field(args) -> int:
    state = pol.policy_from_json(Path(args.policy).read_text())
    lo0, hi0, lo1, hi1 = args.bounds
    n0, n1 = args.resolution
    if n0 < 1 or n1 < 1:
        raise ValueError("resolution must be positive")
    axes = [a for a in range(3) if a != args.slice_axis]
    g0 = np.linspace(lo0, hi0, n0)
    g1 = np.linspace(lo1, hi1, n1)
    grid = np.zeros((n0 * n1, 3))
    mesh0, mesh1 = np.meshgrid(g0, g1, indexing="ij")
    grid[:, axes[0]] = mesh0.ravel()
    grid[:, axes[1]] = mesh1.ravel()
    grid[:, args.slice_axis] = args.slice_value

    dx, ks, rel, fst = pol.query_batch(state, grid)
    force = ks * dx
    out = Path(args.out or "field.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("x,y,fx,fy,sigma_rel,fsx,fsy\n")
        for i in range(grid.shape[0]):
            fh.write(",".join(repr(float(v)) for v in (
                grid[i, axes[0]], grid[i, axes[1]],
                force[i, axes[0]], force[i, axes[1]],
                rel[i], fst[i, axes[0]], fst[i, axes[1]],
            )) + "\n")
    if not args.quiet:
        print(f"wrote {n0 * n1} cells -> {out}")
    return 0


def cmd_replay(args) -> int:
    rows = [line.strip().split(",") for line in open(args.log) if line.strip()]
    header, body = rows[0], rows[1:]
    col = {name: i for i, name in enumerate(header)}
    t = np.array([float(r[col["t"]]) for r in body])
    v = np.array([[float(r[col[c]]) for c in ("vx", "vy", "vz")] for r in body])
    events = [r[col["event"]] for r in body] if "event" in col else []
    n_events = sum(1 for e in events if e)
    n_corrective = sum(1 for e in events if e and e != "goal")
    speed = np.linalg.norm(v, axis=1)
    print(f"ticks:            {len(body)}")
    print(f"duration:         {t[-1] - t[0] + (t[1] - t[0]) if len(t) > 1 else 0.0:.2f} s")
    print(f"peak speed:       {speed.max():.4f} m/s")
    print(f"feedback events:  {n_events}")
    if len(t) > 1:
        print(f"feedback time:    {n_corrective * (t[1] - t[0]):.2f} s")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, _, port = (args.listen or "127.0.0.1:8075").rpartition(":")
    try:
        uvicorn.run(create_app(log_dir=args.log_dir), host=host or "127.0.0.1",
                    port=int(port),
                    log_level="warning" if args.quiet else "info")
    except OSError as exc:
        print(f"cannot listen on {args.listen}: {exc}", file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpvic")
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output file or directory")
    parser.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("experiment", help="run a scripted experiment preset")
    p.add_argument("preset", choices=sorted(teacher.PRESETS))
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("train", help="train a policy from demo files")
    p.add_argument("demos", nargs="+")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("field", help="export a policy field slice as CSV")
    p.add_argument("policy")
    p.add_argument("--bounds", type=float, nargs=4, required=True,
                   metavar=("LO0", "HI0", "LO1", "HI1"))
    p.add_argument("--resolution", type=int, nargs=2, default=(40, 40))
    p.add_argument("--slice-axis", type=int, default=2, choices=(0, 1, 2))
    p.add_argument("--slice-value", type=float, default=0.0)
    p.set_defaults(fn=cmd_field)

    p = sub.add_parser("replay", help="summarize an episode log CSV")
    p.add_argument("log")
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("serve", help="run the live teaching service")
    p.add_argument("--listen", default="127.0.0.1:8075")
    p.add_argument("--log-dir", help="archive session tick logs here on stop/delete")
    p.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
