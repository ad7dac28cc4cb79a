"""Command-line interface: gen | label | train | eval | report."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench
from .errors import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cranbnb",
        description="Learned branch-and-bound for Cloud-RAN power minimization")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate instance splits and a manifest")
    gen.add_argument("--config", required=True, help="experiment config JSON")
    gen.add_argument("--out", required=True, help="dataset directory")
    gen.add_argument("--seed", type=int, default=None,
                     help="override the split seed bases (train=S, val=S+20000, test=S+40000)")

    label = sub.add_parser("label", help="exact-solve train/val splits into traces")
    label.add_argument("--data", required=True, help="dataset directory")
    label.add_argument("--splits", default="train,val")
    label.add_argument("--budget-nodes", type=int, default=None)
    label.add_argument("--workers", type=int, default=None)

    train = sub.add_parser("train", help="DAgger-train the pruning policy")
    train.add_argument("--data", required=True)
    train.add_argument("--out", default=None, help="policy file path")
    train.add_argument("--report", default=None, help="training report path")

    evl = sub.add_parser("eval", help="run methods on the test split")
    evl.add_argument("--data", required=True)
    evl.add_argument("--methods", default=None, help="comma list: exact,learned,rminlp,gsbf")
    evl.add_argument("--policy", default=None, help="policy file (for method 'learned')")
    evl.add_argument("--out", default=None, help="results CSV path")
    evl.add_argument("--no-exact", action="store_true",
                     help="skip the exact reference (gaps/speedups omitted)")
    evl.add_argument("--budget-nodes", type=int, default=None)
    evl.add_argument("--workers", type=int, default=None)

    rep = sub.add_parser("report", help="aggregate a results CSV into tables and figures")
    rep.add_argument("--results", required=True)
    rep.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen":
            config = bench.load_config(args.config)
            if args.seed is not None:
                config.train_seed_start = args.seed
                config.val_seed_start = args.seed + 20_000
                config.test_seed_start = args.seed + 40_000
            manifest = bench.cmd_gen(config, args.out)
            counts = {s: len(v) for s, v in manifest["splits"].items()}
            print(f"dataset {manifest['config_hash']} at {args.out}: {counts}")
        elif args.command == "label":
            summary = bench.cmd_label(
                args.data, splits=tuple(args.splits.split(",")),
                max_nodes=args.budget_nodes, workers=args.workers or 1)
            for split, entries in summary["labeled"].items():
                nex = len(summary["excluded"][split])
                print(f"{split}: {len(entries)} labeled, {nex} excluded")
        elif args.command == "train":
            model, report = bench.cmd_train(args.data, args.out, args.report)
            chosen = report.candidates[report.chosen_index]
            print(f"policy saved ({model.kind}); chosen candidate k={chosen['k']} "
                  f"gap={chosen['mean_gap']:.4f} speedup={chosen['mean_speedup']:.2f}x")
        elif args.command == "eval":
            methods = tuple(args.methods.split(",")) if args.methods else None
            out_csv = bench.cmd_eval(
                args.data, methods=methods, policy_path=args.policy,
                out_csv=args.out, no_exact=args.no_exact,
                max_nodes=args.budget_nodes, workers=args.workers)
            print(f"results written to {out_csv}")
        elif args.command == "report":
            res = bench.cmd_report(args.results, args.out)
            print(f"aggregates: {res['table']}")
            for name, path in res["figures"].items():
                print(f"figure ({name}): {path}")
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
