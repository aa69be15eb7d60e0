"""End-to-end ratio sweep: GANs once, then one classifier per blend row.

Output layout under ``out_dir``::

    config.txt                 resolved configuration
    test.jsonl                 manifest of the fixed real test set
    gan/<label>/               generator checkpoint, loss CSV, sample grids
    rows/<real>_<gan>/         blend manifest, history, metrics, figures, row.json
    report.csv, report.json    one line per ratio row
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import plots
from .cnn import TrainConfig, save_cnn, train_cnn
from .config import ExperimentConfig
from .data import (
    LABELS,
    REAL,
    SYNTHETIC,
    BlendSpec,
    ImageRecord,
    Splits,
    blend,
    load_dataset_root,
    manifest_lines,
    manifest_sha256,
    preprocess_all,
    split_dataset,
    train_val_split,
)
from .dcgan import (
    GanTrainConfig,
    generate_synthetic,
    load_generator,
    save_generator,
    save_sample_grid,
    train_dcgan,
)
from .errors import ContractError, GanSweepError
from .metrics import MetricsReport, evaluate
from .toy import make_toy_dataset

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("data_distribution", "accuracy_pct", "precision_pct", "recall_pct", "f1_pct", "auc")


def derive_seed(master_seed: int, tag: str) -> int:
    """32-bit seed from sha256 of the master seed and a tag such as a ratio label."""
    digest = hashlib.sha256(f"{master_seed}|{tag}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class SweepRow:
    label: str
    description: str
    real_count: int
    gan_count: int
    seed: int
    metrics: Optional[MetricsReport]
    blend_counts: dict
    test_manifest_sha256: str
    epochs_run: int = 0
    paths: dict = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None and self.metrics is not None

    def to_dict(self) -> dict:
        out = {k: v for k, v in vars(self).items() if k != "metrics"}
        out["metrics"] = self.metrics.to_dict() if self.metrics else None
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SweepRow":
        data = dict(data)
        data["metrics"] = MetricsReport.from_dict(data["metrics"]) if data.get("metrics") else None
        return cls(**data)


@dataclass
class SweepResult:
    rows: list
    test_manifest_sha256: str
    out_dir: Path
    gan_paths: dict = field(default_factory=dict)

    @property
    def failed(self) -> list:
        return [r for r in self.rows if not r.ok]


# -- data preparation ---------------------------------------------------------


def load_corpus(cfg: ExperimentConfig) -> list[ImageRecord]:
    if cfg.toy:
        return make_toy_dataset(cfg.toy_per_class, cfg.toy_image_size, seed=derive_seed(cfg.seed, "toy"))
    return preprocess_all(load_dataset_root(cfg.dataset_root))


def prepare_splits(cfg: ExperimentConfig, corpus: Optional[Sequence[ImageRecord]] = None) -> Splits:
    corpus = load_corpus(cfg) if corpus is None else corpus
    return split_dataset(corpus, replace(cfg.split, seed=derive_seed(cfg.seed, "split")))


def _fingerprint(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _gan_config(cfg: ExperimentConfig, label: str) -> GanTrainConfig:
    return replace(cfg.gan, seed=derive_seed(cfg.seed, f"gan/{label}"))


def train_generators(
    cfg: ExperimentConfig, gan_pool: Sequence[ImageRecord], out_dir: Path, labels: Sequence[str] = LABELS
) -> tuple[dict, dict]:
    """Train (or reload) one generator per class; returns generators and artifact paths by label."""
    generators, paths = {}, {}
    for label in labels:
        images = [r for r in gan_pool if r.label == label]
        gan_cfg = _gan_config(cfg, label)
        folder = out_dir / "gan" / label
        ckpt = folder / "generator.ckpt"
        settings = {k: v for k, v in cfg.as_flat().items() if k.startswith("gan.")}
        fingerprint = _fingerprint({"gan": settings, "seed": gan_cfg.seed, "train": sorted(r.uid for r in images)})
        stamp = folder / "fingerprint.txt"
        if ckpt.exists() and stamp.exists() and stamp.read_text().strip() == fingerprint:
            log.info("reusing %s generator from %s", label, ckpt)
            generators[label], _ = load_generator(ckpt)
            paths[label] = {"checkpoint": str(ckpt)}
            continue
        log.info("training %s GAN on %d images for %d epochs", label, len(images), gan_cfg.epochs)
        result = train_dcgan(images, gan_cfg)
        save_generator(ckpt, result.generator, seed=gan_cfg.seed, label=label)
        entry = {"checkpoint": str(ckpt), "losses": str(result.report.write_csv(folder / "losses.csv"))}
        for epoch, samples in sorted(result.report.samples.items()):
            entry[f"samples_epoch{epoch}"] = str(save_sample_grid(samples, folder / f"samples_epoch{epoch:04d}.png"))
        if cfg.plots:
            figure = plots.plot_gan_losses(result.report, folder / "losses.png")
            if figure:
                entry["loss_plot"] = str(figure)
        stamp.write_text(fingerprint + "\n")
        generators[label] = result.generator
        paths[label] = entry
    return generators, paths


def synthesize_pool(cfg: ExperimentConfig, generators: dict) -> list[ImageRecord]:
    pool = []
    for label in LABELS:
        pool += generate_synthetic(generators[label], cfg.synthetic_per_class, label, derive_seed(cfg.seed, f"synthetic/{label}"))
    return pool


# -- rows ---------------------------------------------------------------------


def _row_dir(out_dir: Path, spec: BlendSpec) -> Path:
    return out_dir / "rows" / f"{spec.real_count:04d}_{spec.gan_count:04d}"


def _cnn_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return replace(cfg.cnn, seed=seed)


def run_row(
    cfg: ExperimentConfig,
    spec: BlendSpec,
    real_pool: Sequence[ImageRecord],
    synthetic_pool: Sequence[ImageRecord],
    test_set: Sequence[ImageRecord],
    out_dir: Path,
) -> SweepRow:
    """Blend, split 800/200, train, evaluate on the real test set; persist the row."""
    seed = derive_seed(cfg.seed, spec.label)
    folder = _row_dir(out_dir, spec)
    folder.mkdir(parents=True, exist_ok=True)
    dataset = blend(real_pool, synthetic_pool, spec, seed)
    train, val = train_val_split(dataset, seed)
    blend_manifest = folder / "blend.jsonl"
    blend_manifest.write_text("\n".join(manifest_lines(train, "train") + manifest_lines(val, "val")) + "\n")

    network, history = train_cnn(train, val, _cnn_config(cfg, seed))
    report = evaluate(network, test_set, cfg.threshold, cfg.auc_tie_rule)

    paths = {
        "blend_manifest": str(blend_manifest),
        "history": str(history.write_csv(folder / "history.csv")),
        "metrics": str(report.write_json(folder / "metrics.json")),
    }
    if cfg.save_models:
        paths["checkpoint"] = str(save_cnn(folder / "cnn.ckpt", network, seed=seed))
    if cfg.plots:
        for key, figure in (
            ("curves", plots.plot_history(history, folder / "curves.png")),
            ("confusion", plots.plot_confusion(report.counts, folder / "confusion.png", spec.description)),
        ):
            if figure:
                paths[key] = str(figure)
    counts = {REAL: sum(r.source == REAL for r in dataset), SYNTHETIC: sum(r.source == SYNTHETIC for r in dataset)}
    return SweepRow(
        spec.label,
        spec.description,
        spec.real_count,
        spec.gan_count,
        seed,
        report,
        counts,
        manifest_sha256(test_set, "test"),
        epochs_run=len(history),
        paths=paths,
    )


def _annotate(exc: GanSweepError, label: str) -> GanSweepError:
    annotated = type(exc)(f"ratio row {label}: {exc}")
    annotated.__cause__ = exc
    return annotated


def run_sweep(cfg: ExperimentConfig, progress: Optional[Callable[[SweepRow], None]] = None) -> SweepResult:
    """Run every configured ratio row; completed rows on disk are skipped.

    A failing row is recorded and the remaining rows still run. The first
    failure is re-raised at the end, annotated with its ratio label, after
    the partial report has been written.
    """
    cfg.validate()
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text("".join(f"{k} = {v}\n" for k, v in cfg.as_flat().items()))

    splits = prepare_splits(cfg)
    test_hash = manifest_sha256(splits.test, "test")
    (out_dir / "test.jsonl").write_text("\n".join(manifest_lines(splits.test, "test")) + "\n")

    generators, gan_paths = train_generators(cfg, splits.gan_train, out_dir)
    synthetic = synthesize_pool(cfg, generators)

    row_fingerprint = _fingerprint(
        {k: v for k, v in cfg.as_flat().items() if k not in ("out_dir", "plots", "save_models", "ratios")} | {"test": test_hash}
    )
    rows, errors = [], []
    for spec in cfg.ratios:
        record = _row_dir(out_dir, spec) / "row.json"
        if record.exists():
            saved = json.loads(record.read_text())
            if saved.get("fingerprint") == row_fingerprint and saved["row"].get("error") is None:
                log.info("row %s already complete, skipping", spec.label)
                row = SweepRow.from_dict(saved["row"])
                rows.append(row)
                if progress:
                    progress(row)
                continue
        log.info("row %s (%s)", spec.label, spec.description)
        try:
            row = run_row(cfg, spec, splits.cnn_pool, synthetic, splits.test, out_dir)
        except GanSweepError as exc:
            log.error("row %s failed: %s", spec.label, exc)
            errors.append(_annotate(exc, spec.label))
            row = SweepRow(spec.label, spec.description, spec.real_count, spec.gan_count,
                           derive_seed(cfg.seed, spec.label), None, {}, test_hash, error=str(exc))
        record.parent.mkdir(parents=True, exist_ok=True)
        record.write_text(json.dumps({"fingerprint": row_fingerprint, "row": row.to_dict()}, indent=2, sort_keys=True) + "\n")
        rows.append(row)
        if progress:
            progress(row)

    result = SweepResult(rows, test_hash, out_dir, gan_paths)
    if any(r.ok for r in rows):
        emit_report(result, out_dir / "report.csv", "csv")
        emit_report(result, out_dir / "report.json", "json")
    if errors:
        raise errors[0]
    return result


def load_result(out_dir) -> SweepResult:
    """Rebuild a result from the per-row records of a finished (or partial) sweep."""
    out_dir = Path(out_dir)
    records = sorted((out_dir / "rows").glob("*/row.json"))
    if not records:
        raise ContractError(f"no sweep rows found under {out_dir}")
    rows = [SweepRow.from_dict(json.loads(p.read_text())["row"]) for p in records]
    rows.sort(key=lambda r: -r.real_count)
    hashes = {r.test_manifest_sha256 for r in rows}
    return SweepResult(rows, hashes.pop() if len(hashes) == 1 else "", out_dir)


# -- reporting ----------------------------------------------------------------


def _pct(x: float) -> str:
    return f"{100 * x:.2f}"


def report_rows(result: SweepResult) -> list[dict]:
    """Table rows (strings, 2 decimals) for completed rows, descending real fraction."""
    done = sorted((r for r in result.rows if r.ok), key=lambda r: -r.real_count)
    if not done:
        raise ContractError("cannot report an empty sweep result")
    return [
        {
            "data_distribution": r.description,
            "accuracy_pct": _pct(r.metrics.accuracy),
            "precision_pct": _pct(r.metrics.precision),
            "recall_pct": _pct(r.metrics.recall),
            "f1_pct": _pct(r.metrics.f1),
            "auc": f"{r.metrics.auc:.2f}",
        }
        for r in done
    ]


def emit_report(result: SweepResult, path, fmt: str = "csv") -> Path:
    """Write the per-row summary report as CSV or JSON."""
    rows = report_rows(result)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    elif fmt == "json":
        numeric = [{k: (v if k == "data_distribution" else float(v)) for k, v in row.items()} for row in rows]
        path.write_text(json.dumps(numeric, indent=2) + "\n")
    else:
        raise ContractError(f"unknown report format {fmt!r}; use csv or json")
    return path


def read_report(path) -> list[dict]:
    """Parse a report written by :func:`emit_report` back into floats."""
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    return [{k: (v if k == "data_distribution" else float(v)) for k, v in row.items()} for row in rows]

