"""Command-line interface: simulate, compare, metrics."""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, RunConfig, load_config
from . import harness


def _cmd_simulate(args) -> int:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig().validate()
    if args.mode:
        from dataclasses import replace

        cfg = replace(cfg, mode=args.mode).validate()
    out = args.out or "run_output"
    metrics = harness.run(cfg, out)
    print(f"mode={metrics.mode} level={metrics.level} dt={metrics.dt:.6g} "
          f"steps={metrics.n_steps} wall_stepping={metrics.wall_stepping:.3f}s")
    for row in sorted(metrics.snapshot_rows, key=lambda r: r["index"]):
        print(f"  snapshot {row['index']}: t={row['time']:.6g} "
              f"leaves={row['leaf_count']} eta={row['eta']:.3f}")
    print(f"output written to {out}")
    return 0


def _cmd_compare(args) -> int:
    results, nu = harness.compare_runs(args.run, args.reference)
    lines = ["time,level,err_v_L1,err_v_L2,err_v_Linf,err_ue_L1,err_ue_L2,err_ue_Linf"]
    for r in results:
        v, ue = r["v"], r["ue"]
        lines.append(
            f"{r['time']!r},{r['level']},"
            + ",".join(repr(x) for x in v) + "," + ",".join(repr(x) for x in ue)
        )
    if nu is not None:
        lines.append(f"# nu = {nu!r}")
    text = "\n".join(lines)
    print(text)
    out_path = os.path.join(args.run, "comparison.csv")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    print(f"# written to {out_path}")
    return 0


def _cmd_metrics(args) -> int:
    path = os.path.join(args.run, harness.METRICS_FILE)
    if not os.path.exists(path):
        print(f"no metrics file in {args.run}", file=sys.stderr)
        return 1
    with open(path, "r", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mrbidomain",
                                 description="Adaptive multiresolution bidomain solver")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a simulation from a config file")
    sim.add_argument("--config", help="configuration file (empty/missing: desk defaults)")
    sim.add_argument("--mode", choices=("uniform", "mr", "mr-lts"),
                     help="override the configured mode")
    sim.add_argument("--out", help="output directory (default run_output)")
    sim.set_defaults(func=_cmd_simulate)

    cmp_ = sub.add_parser("compare", help="error norms of a run against a reference run")
    cmp_.add_argument("--run", required=True)
    cmp_.add_argument("--reference", required=True)
    cmp_.set_defaults(func=_cmd_compare)

    met = sub.add_parser("metrics", help="print the metrics file of a run")
    met.add_argument("--run", required=True)
    met.set_defaults(func=_cmd_metrics)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
