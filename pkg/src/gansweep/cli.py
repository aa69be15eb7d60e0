"""Command-line entry point: ``gansweep <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .cnn import load_cnn, save_cnn, train_cnn
from .config import load_config, parse_ratios
from .data import LABELS, blend, load_dataset, save_dataset, train_val_split
from .dcgan import generate_synthetic, load_generator
from .errors import ConfigurationError, GanSweepError, IngestionError
from . import sweep
from .metrics import evaluate

log = logging.getLogger("gansweep")


def _common(parser: argparse.ArgumentParser, top: bool) -> None:
    # flags are accepted before or after the verb; the verb's copies must not
    # overwrite values already parsed at the top level
    def default(value):
        return value if top else argparse.SUPPRESS

    parser.add_argument("--config", type=Path, default=default(None), help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=default(None), help="master seed (overrides the config)")
    parser.add_argument("--out", type=Path, default=default(None), help="output directory (overrides out_dir)")
    parser.add_argument("--toy", action="store_true", default=default(None), help="use the built-in blob images instead of a dataset")
    parser.add_argument("--set", action="append", default=default([]), metavar="KEY=VALUE", help="override any config key")
    parser.add_argument("-v", "--verbose", action="count", default=default(0))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gansweep", description="GAN/real blend-ratio experiments for a binary image classifier.")
    _common(parser, top=True)
    verbs = parser.add_subparsers(dest="verb", required=True)

    def verb(name: str, help: str) -> argparse.ArgumentParser:
        sub = verbs.add_parser(name, help=help)
        _common(sub, top=False)
        return sub

    p = verb("gan-train", "train the per-class generators on the GAN split")
    p.add_argument("--label", choices=LABELS, action="append", help="class to train (default: both)")

    p = verb("generate", "sample synthetic images from a generator checkpoint")
    p.add_argument("--generator", type=Path, required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--label", choices=LABELS, help="class tag (default: the checkpoint's)")

    p = verb("blend", "mix real and synthetic images at one ratio")
    p.add_argument("--ratio", required=True, help="real:gan, e.g. 900:100")
    p.add_argument("--synthetic", type=Path, action="append", required=True, help="dataset stem from 'generate' (repeatable)")

    p = verb("cnn-train", "train the classifier on a blend")
    p.add_argument("--data", type=Path, required=True, help="1000-image dataset stem from 'blend'")

    p = verb("evaluate", "score a classifier on the real test set")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--test", type=Path, help="dataset stem (default: the configured test split)")

    verb("sweep", "run the full ratio sweep")

    p = verb("report", "re-emit the report of a finished sweep")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


def _overrides(args) -> dict:
    pairs = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        pairs[key.strip()] = value.strip()
    if args.seed is not None:
        pairs["seed"] = str(args.seed)
    if args.out is not None:
        pairs["out_dir"] = str(args.out)
    return pairs


def _stem(path: Path) -> Path:
    return path.with_suffix("") if path.suffix in (".npy", ".jsonl") else path


def _cmd_gan_train(cfg, args) -> dict:
    splits = sweep.prepare_splits(cfg)
    _, paths = sweep.train_generators(cfg, splits.gan_train, Path(cfg.out_dir), args.label or LABELS)
    return paths


def _cmd_generate(cfg, args) -> dict:
    generator, header = load_generator(args.generator)
    label = args.label or header.get("label")
    if label not in LABELS:
        raise ConfigurationError("pass --label; the checkpoint does not name its class")
    records = generate_synthetic(generator, args.count, label, sweep.derive_seed(cfg.seed, f"synthetic/{label}"))
    tensor, manifest = save_dataset(records, Path(cfg.out_dir) / f"synthetic_{label}", "synthetic")
    return {"images": str(tensor), "manifest": str(manifest), "count": len(records)}


def _cmd_blend(cfg, args) -> dict:
    (spec,) = parse_ratios(args.ratio)
    splits = sweep.prepare_splits(cfg)
    synthetic = []
    for stem in args.synthetic:
        records, _ = load_dataset(_stem(stem))
        synthetic += records
    dataset = blend(splits.cnn_pool, synthetic, spec, sweep.derive_seed(cfg.seed, spec.label))
    out = Path(cfg.out_dir)
    tensor, manifest = save_dataset(dataset, out / f"blend_{spec.real_count}_{spec.gan_count}", "blend")
    test_tensor, _ = save_dataset(splits.test, out / "test", "test")
    return {"blend": str(tensor), "manifest": str(manifest), "test": str(test_tensor), "label": spec.label}


def _cmd_cnn_train(cfg, args) -> dict:
    records, _ = load_dataset(_stem(args.data))
    seed = sweep.derive_seed(cfg.seed, "cnn")
    train, val = train_val_split(records, seed)
    network, history = train_cnn(train, val, replace(cfg.cnn, seed=seed))
    out = Path(cfg.out_dir)
    return {
        "checkpoint": str(save_cnn(out / "cnn.ckpt", network, seed=seed)),
        "history": str(history.write_csv(out / "history.csv")),
        "final_val_acc": history.val_acc[-1],
    }


def _cmd_evaluate(cfg, args) -> dict:
    network, _ = load_cnn(args.model)
    if args.test is not None:
        test, _ = load_dataset(_stem(args.test))
    else:
        test = sweep.prepare_splits(cfg).test
    report = evaluate(network, test, cfg.threshold, cfg.auc_tie_rule)
    path = report.write_json(Path(cfg.out_dir) / "metrics.json")
    return {"metrics": str(path)} | report.to_dict()


def _cmd_sweep(cfg, args) -> dict:
    def progress(row):
        if row.ok:
            m = row.metrics
            print(f"{row.description:>20}  acc {100 * m.accuracy:6.2f}  f1 {100 * m.f1:6.2f}  auc {m.auc:.2f}", file=sys.stderr)

    result = sweep.run_sweep(cfg, progress)
    return {"report": str(Path(cfg.out_dir) / "report.csv"), "rows": len(result.rows), "test_manifest_sha256": result.test_manifest_sha256}


def _cmd_report(cfg, args) -> dict:
    result = sweep.load_result(cfg.out_dir)
    path = sweep.emit_report(result, Path(cfg.out_dir) / f"report.{args.format}", args.format)
    sys.stdout.write(path.read_text())
    return {}


COMMANDS = {
    "gan-train": _cmd_gan_train,
    "generate": _cmd_generate,
    "blend": _cmd_blend,
    "cnn-train": _cmd_cnn_train,
    "evaluate": _cmd_evaluate,
    "sweep": _cmd_sweep,
    "report": _cmd_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args), toy=args.toy)
        outcome = COMMANDS[args.verb](cfg, args)
    except GanSweepError as exc:
        print(f"gansweep: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gansweep: error: {exc}", file=sys.stderr)
        return IngestionError.exit_code
    if outcome:
        print(json.dumps(outcome, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
