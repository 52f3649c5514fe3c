"""Command-line entry point: ``pamil {generate-data,train,evaluate,ablate,plot}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        overrides[key.strip()] = _parse_value(raw)
    if getattr(args, "manifest", None):
        overrides["manifest"] = str(args.manifest)
    if args.out:
        overrides["out_dir"] = str(args.out)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.scheme:
        overrides["sampler.scheme"] = args.scheme.upper()
    if args.group_size is not None:
        overrides["sampler.group_size"] = args.group_size
    if getattr(args, "epochs", None) is not None:
        overrides["optim.epochs"] = args.epochs
    if overrides:
        cfg = cfg.replace(**overrides)
    return cfg.validate()


def cmd_generate_data(args) -> int:
    from .synthetic import SyntheticConfig, generate_synthetic_dataset

    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = SyntheticConfig.from_dict(raw)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.only_negative:
        cfg.positive_fraction = 0.0
    if not args.out:
        raise UsageError("generate-data needs --out")
    manifest = generate_synthetic_dataset(cfg, args.out)
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {manifest.num_bags} bags to {args.out} {counts}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    cfg = _run_config(args)
    if not cfg.manifest:
        raise UsageError("train needs a manifest (--manifest or config key 'manifest')")
    report = train(cfg, out_dir=cfg.out_dir, attention=not args.no_attention)
    test = report.get("test") or report.get("val") or {}
    print(json.dumps({"best_epoch": report["best_epoch"], **{k: test.get(k) for k in ("accuracy", "auc", "f1")}}))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .train import evaluate

    if not args.checkpoint:
        raise UsageError("evaluate needs --checkpoint")
    manifest = args.manifest
    if manifest is None:
        from .checkpoint import checkpoint_load

        manifest = checkpoint_load(args.checkpoint)["config"].get("manifest")
        if not manifest:
            raise UsageError("evaluate needs --manifest")
    out = args.out or str(Path(args.checkpoint).parent / f"eval_{args.split}")
    report = evaluate(args.checkpoint, manifest, args.split, out_dir=out, attention=not args.no_attention)
    print(json.dumps(report["metrics"]))
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .ablation import ablate, parse_values

    cfg = _run_config(args)
    if not cfg.manifest:
        raise UsageError("ablate needs a manifest (--manifest or config key 'manifest')")
    values = parse_values(args.axis, args.values)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [cfg.seed]
    rows = ablate(cfg, args.axis, values, seeds, out_dir=cfg.out_dir)
    for r in rows:
        print(f"{r['axis']}={r['setting']}: accuracy {r['accuracy']:.4f} auc {r['auc']:.4f} seeds {r['seeds']}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from .reports import plot_ablation, plot_curves, read_csv

    src = Path(args.input)
    if src.is_dir():
        src = src / "ablation.csv" if (src / "ablation.csv").exists() else src / "metrics.csv"
    if not src.exists():
        raise FileNotFoundError(f"no metrics table at {src}")
    rows = read_csv(src)
    if not rows:
        raise ValueError(f"{src} has no rows")
    if "setting" in rows[0]:
        dest = Path(args.out) if args.out else src.with_name("ablation.svg")
        plot_ablation(rows, dest if dest.suffix == ".svg" else dest / "ablation.svg")
    else:
        dest = Path(args.out) if args.out else src.with_name("curves.svg")
        plot_curves(rows, dest if dest.suffix == ".svg" else dest / "curves.svg")
    print(f"wrote {dest}")
    return EXIT_OK


def _common(p, run_flags: bool = True):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    if run_flags:
        p.add_argument("--manifest", help="manifest.csv of the dataset")
        p.add_argument("--scheme", help="sampling scheme (GMSS, GHSS, LIIS, RANDOM, POSITION, KMEANS, RANDOM_GROUP)")
        p.add_argument("--group-size", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pamil", description="Policy-driven instance sampling for multi-instance learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate-data", help="write a synthetic planted-signal dataset")
    _common(p, run_flags=False)
    p.add_argument("--only-negative", action="store_true", help="generate negative bags only")
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train and evaluate one run")
    _common(p)
    p.add_argument("--no-attention", action="store_true", help="skip per-bag attention CSVs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on one split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--no-attention", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run an ablation over one axis")
    _common(p)
    p.add_argument("--axis", required=True, choices=("group_size", "scheme", "loss", "reward"))
    p.add_argument("--values", help="comma-separated settings (default: the axis' standard set)")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed or the config seed)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render curves.svg / ablation.svg from a metrics table")
    p.add_argument("--input", required=True, help="metrics.csv, ablation.csv or a run directory")
    p.add_argument("--out", help="output .svg path or directory")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pamil: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - surfaced as exit code 2
        if args.verbose:
            logging.exception("command failed")
        print(f"pamil: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
