"""Command line entry point: ``tsgfn train|eval|compare|sweep``.

Exit status is 0 on success, 1 for configuration errors and 2 when a run
aborts or a command fails at runtime.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_run_config, make_run_config, preset_names
from .harness import (OUTPUT_ROOT_ENV, ArtifactError, CompareError, compare, evaluate_artifact, format_final,
                      load_sweep_spec, run_sweep, train_artifact)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("tsgfn")


def _print_progress(row: dict) -> None:
    log.info("step %s  seen %s  loss %s  metric %s", row["step"], row["trajectories_seen"],
             f"{row['loss']:.4g}" if row.get("loss") is not None else "-", row.get("L1_or_modes"))


def cmd_train(args) -> int:
    if args.config is None and args.preset is None:
        raise ConfigError("train needs a config file or --preset")
    if args.config is not None:
        path = Path(args.config)
        run = load_run_config(path, overrides=dict(args.set or []))
        config_bytes = path.read_bytes()
    else:
        data = {}
        if args.label:
            data["label"] = args.label
        run = make_run_config(data, preset=args.preset, source=f"preset {args.preset}",
                              **{k.replace(".", "__"): v for k, v in (args.set or [])})
        config_bytes = None
    art_dir, summary = train_artifact(run, config_bytes, root=args.output_root, resume=args.resume,
                                      progress=_print_progress)
    print(f"artifact: {art_dir}")
    print(json.dumps(summary, indent=2))
    if summary["status"] != "ok":
        print(f"training aborted: {summary['abort']}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_eval(args) -> int:
    out = evaluate_artifact(args.artifact, exact=args.exact, samples=args.samples, plot=not args.no_plot)
    print(json.dumps(out, indent=2))
    return EXIT_OK


def cmd_compare(args) -> int:
    out_dir = Path(args.out) if args.out else Path(args.dirs[0]).parent / "compare"
    result = compare(args.dirs, out_dir, points=args.points, group_by=args.group_by, plot=not args.no_plot)
    print(format_final(result["final"], result["metric"]))
    print(f"tables: {out_dir}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep_spec(args.spec)
    root, board = run_sweep(spec, root=args.output_root, jobs=args.jobs)
    for r in board:
        print(f"{r['run']:<40} {r['status']:<8} {r['final_metric']}")
    print(f"leaderboard: {root / 'leaderboard.csv'}")
    return EXIT_OK if all(r["status"] == "ok" for r in board) else EXIT_RUNTIME


def _key_value(text: str):
    import yaml
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, val = text.split("=", 1)
    return key, yaml.safe_load(val)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsgfn", description="Train and compare GFlowNet exploration strategies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run into an artifact directory")
    t.add_argument("config", nargs="?", help="YAML run config")
    t.add_argument("--preset", choices=[n for n in preset_names() if n != "defaults"],
                   help="train a shipped preset without a config file")
    t.add_argument("--label", help="run label when training from --preset")
    t.add_argument("--set", action="append", type=_key_value, metavar="KEY=VALUE",
                   help="dotted override, e.g. budget.total_trajectories=20000")
    t.add_argument("--output-root", help=f"artifact root (default: ${OUTPUT_ROOT_ENV} or output_dir)")
    t.add_argument("--resume", action="store_true", help="continue from the latest checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="re-evaluate the latest checkpoint of an artifact")
    e.add_argument("artifact")
    e.add_argument("--exact", action="store_true", help="exact DP distributions (grid only)")
    e.add_argument("--samples", type=int, default=10000)
    e.add_argument("--no-plot", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="aggregate curves of several artifacts")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out", help="directory for tables and figure (default: <first parent>/compare)")
    c.add_argument("--points", type=int, default=50)
    c.add_argument("--group-by", choices=["label", "artifact"], default="label")
    c.add_argument("--no-plot", action="store_true")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="run a Cartesian grid of configs")
    s.add_argument("spec")
    s.add_argument("--output-root")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactError, CompareError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
