"""Command-line entry point: ``hinrec <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from .data import SyntheticSpec, atomic_write_text, generate_synthetic
from .experiment import (ExperimentConfig, evaluate_checkpoint, load_bundle, recommend,
                         run_experiment, sweep, SWEEP_AXES)
from .trainer import MODE_ALIASES

log = logging.getLogger("hinrec")


def _overrides(args) -> Dict[str, str]:
    ov: Dict[str, str] = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = v.strip()
    if getattr(args, "data", None):
        ov["data.dir"] = args.data
    if getattr(args, "seed", None) is not None:
        ov["seed"] = str(args.seed)
    if getattr(args, "out", None):
        ov["out"] = args.out
    if getattr(args, "mode", None):
        ov["train.mode"] = MODE_ALIASES[args.mode]
    if getattr(args, "meta_paths", None):
        ov["meta_paths.user"] = args.meta_paths
    if getattr(args, "negatives", None) is not None:
        ov["eval.negatives"] = str(args.negatives)
    return ov


def _config(args) -> ExperimentConfig:
    return ExperimentConfig.load(args.config, _overrides(args))


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--data", help="dataset directory (overrides data.dir)")
    p.add_argument("--mode", choices=sorted(MODE_ALIASES))
    p.add_argument("--meta-paths", dest="meta_paths", help="comma list of user meta-paths, e.g. MP1,MP3")
    p.add_argument("--negatives", type=int, help="sampled negatives per evaluation instance")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(users=args.users, concepts=args.concepts, courses=args.courses,
                         videos=args.videos, teachers=args.teachers, blocks=args.blocks,
                         p_within=args.p_within, p_cross=args.p_cross, seed=args.seed or 0)
    generate_synthetic(spec, args.out)
    print(f"wrote synthetic corpus to {args.out}")
    return 0


def cmd_build_graph(args) -> int:
    cfg = _config(args)
    bundle = load_bundle(cfg)
    lines = bundle.summary()
    out = Path(cfg["out"])
    atomic_write_text(out / "graph_summary.tsv", "\n".join(lines) + "\n")
    atomic_write_text(out / "validation.txt", str(bundle.hin.report()) + "\n")
    for w in bundle.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print("\n".join(lines))
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    res = run_experiment(cfg)
    for line in res.train.log_lines():
        print(line)
    print(res.report.to_tsv(), end="")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    ckpt = args.checkpoint or str(Path(cfg["out"]) / "checkpoint.json")
    report = evaluate_checkpoint(cfg, ckpt)
    out = Path(cfg["out"])
    atomic_write_text(out / "eval_report.tsv", report.to_tsv())
    atomic_write_text(out / "eval_report.json", report.to_json())
    print(report.to_tsv(), end="")
    return 0


def cmd_recommend(args) -> int:
    users: List[str] = []
    if args.users:
        users += [u.strip() for u in args.users.split(",") if u.strip()]
    if args.users_file:
        users += [l.strip() for l in Path(args.users_file).read_text(encoding="utf-8").splitlines() if l.strip()]
    text, errors = recommend(args.checkpoint, users, args.top)
    atomic_write_text(Path(args.out) / "recommendations.tsv", text)
    print(text, end="")
    for u in errors:
        print(f"error: unknown user {u}", file=sys.stderr)
    return 1 if errors else 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = [v for v in args.values.split(";")] if args.values else None
    rows = sweep(cfg, args.axis, cfg["out"], values)
    for r in rows:
        print(f"{r['axis']}\t{r['value']}\t{r['status']}\t{r.get('hr@5', '')}")
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hinrec", description="meta-path GCN concept recommender")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a planted-block synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--concepts", type=int, default=200)
    p.add_argument("--courses", type=int, default=40)
    p.add_argument("--videos", type=int, default=200)
    p.add_argument("--teachers", type=int, default=12)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--p-within", type=float, default=0.3)
    p.add_argument("--p-cross", type=float, default=0.01)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("build-graph", help="ingest, validate and summarize a dataset")
    _common(p)
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("train", help="run ingest -> train -> evaluate and write all artifacts")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", help="top-N concepts per user from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--users", help="comma-separated external user ids")
    p.add_argument("--users-file")
    p.add_argument("-n", "--top", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("sweep", help="one run per value of a parameter axis")
    _common(p)
    p.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    p.add_argument("--values", help="semicolon-separated values (default: the standard grid)")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
