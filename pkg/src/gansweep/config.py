"""Experiment configuration: a flat ``key = value`` file plus environment overrides.

Example::

    # lines starting with '#' are comments
    dataset_root = /data/mri
    seed = 7
    cnn.epochs = 25
    ratios = 1000:0, 900:100, 0:1000

Every key may be overridden by an environment variable named
``GANSWEEP_`` + the key upper-cased with dots replaced by ``__``,
e.g. ``GANSWEEP_CNN__EPOCHS=3``. Precedence: built-in defaults, then
the toy profile (when ``toy = true``), then the file, then the
environment, then explicit command-line flags.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

from .cnn import TrainConfig
from .data import RATIO_ROWS, BlendSpec, SplitSpec
from .dcgan import GanTrainConfig
from .errors import ConfigurationError
from .metrics import TIE_RULES

ENV_PREFIX = "GANSWEEP_"


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("none", "auto", "") else int(text)


def _int_list(text: str) -> tuple:
    return tuple(int(part) for part in text.replace(",", " ").split())


def parse_ratios(text: str) -> tuple[BlendSpec, ...]:
    """``"1000:0, 900:100"`` -> BlendSpecs; each row must sum to 1000."""
    rows = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        real, sep, gan = part.partition(":")
        if not sep:
            raise ConfigurationError(f"ratio row {part!r} is not of the form real:gan")
        try:
            rows.append(BlendSpec(int(real), int(gan)))
        except ValueError as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"ratio row {part!r}: {exc}") from exc
    if not rows:
        raise ConfigurationError("ratios must list at least one real:gan row")
    labels = [r.label for r in rows]
    if len(set(labels)) != len(labels):
        raise ConfigurationError(f"duplicate ratio rows in {text!r}")
    return tuple(rows)


# key -> (parser, attribute path on ExperimentConfig)
_KEYS: dict[str, tuple[Callable[[str], Any], str]] = {
    "dataset_root": (str, "dataset_root"),
    "toy": (_bool, "toy"),
    "toy.per_class": (int, "toy_per_class"),
    "toy.image_size": (int, "toy_image_size"),
    "seed": (int, "seed"),
    "out_dir": (str, "out_dir"),
    "threshold": (float, "threshold"),
    "auc_tie_rule": (str, "auc_tie_rule"),
    "ratios": (parse_ratios, "ratios"),
    "plots": (_bool, "plots"),
    "save_models": (_bool, "save_models"),
    "split.cnn_pool": (int, "split.cnn_pool_size"),
    "split.gan_train": (_optional_int, "split.gan_train_size"),
    "split.test": (int, "split.test_size"),
    "split.allow_overlap": (_bool, "split.allow_overlap"),
    "gan.epochs": (int, "gan.epochs"),
    "gan.learning_rate": (float, "gan.learning_rate"),
    "gan.batch_size": (int, "gan.batch_size"),
    "gan.z_dim": (int, "gan.z_dim"),
    "gan.base_width": (int, "gan.base_width"),
    "gan.beta1": (float, "gan.beta1"),
    "gan.sample_epochs": (_int_list, "gan.sample_epochs"),
    "gan.sample_count": (int, "gan.sample_count"),
    "gan.synthetic_per_class": (int, "synthetic_per_class"),
    "cnn.epochs": (int, "cnn.epochs"),
    "cnn.learning_rate": (float, "cnn.learning_rate"),
    "cnn.batch_size": (int, "cnn.batch_size"),
    "cnn.dropout": (float, "cnn.dropout_rate"),
    "cnn.patience": (_optional_int, "cnn.patience"),
    "cnn.beta1": (float, "cnn.beta1"),
}
KNOWN_KEYS = tuple(_KEYS)

# Desk-scale defaults applied before the file when ``toy = true``: a narrow
# GAN trained briefly and a short classifier run keep a full sweep in minutes.
# Small GAN batches give the narrow networks four times the updates per epoch
# at about the same cost.
TOY_PROFILE = {
    "toy.per_class": "1000",
    "gan.epochs": "5",
    "gan.base_width": "4",
    "gan.batch_size": "16",
    "gan.sample_epochs": "1 5",
    "cnn.epochs": "2",
    "cnn.patience": "none",
}


@dataclass
class ExperimentConfig:
    dataset_root: Optional[str] = None
    toy: bool = False
    toy_per_class: int = 1000
    toy_image_size: int = 32
    split: SplitSpec = field(default_factory=SplitSpec)
    gan: GanTrainConfig = field(default_factory=GanTrainConfig)
    cnn: TrainConfig = field(default_factory=TrainConfig)
    synthetic_per_class: int = 500
    ratios: tuple = RATIO_ROWS
    seed: int = 0
    out_dir: str = "runs/sweep"
    threshold: float = 0.5
    auc_tie_rule: str = "strict"
    plots: bool = True
    save_models: bool = True

    def validate(self) -> "ExperimentConfig":
        if not self.toy and not self.dataset_root:
            raise ConfigurationError("missing required key 'dataset_root' (or set 'toy = true')")
        if self.auc_tie_rule not in TIE_RULES:
            raise ConfigurationError(f"auc_tie_rule must be one of {TIE_RULES}, got {self.auc_tie_rule!r}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError(f"threshold must lie in [0, 1], got {self.threshold}")
        if self.toy_per_class < 1 or self.synthetic_per_class < 1:
            raise ConfigurationError("toy.per_class and gan.synthetic_per_class must be positive")
        need = max(r.gan_count for r in self.ratios)
        if need > 2 * self.synthetic_per_class:
            raise ConfigurationError(
                f"ratio rows need {need} synthetic images but gan.synthetic_per_class is {self.synthetic_per_class}"
            )
        for row in self.ratios:
            if not isinstance(row, BlendSpec):
                raise ConfigurationError(f"ratio row {row!r} is not a BlendSpec")
        return self

    def as_flat(self) -> dict[str, str]:
        """Every known key with its resolved value rendered as text."""
        out = {}
        for key, (_, attr) in _KEYS.items():
            value = _get(self, attr)
            if key == "ratios":
                value = ", ".join(r.label for r in value)
            elif isinstance(value, tuple):
                value = " ".join(str(v) for v in value)
            out[key] = str(value)
        return out


def _get(cfg: ExperimentConfig, attr: str):
    obj = cfg
    for part in attr.split("."):
        obj = getattr(obj, part)
    return obj


def _set(cfg: ExperimentConfig, attr: str, value) -> ExperimentConfig:
    head, _, rest = attr.partition(".")
    if not rest:
        return replace(cfg, **{head: value})
    return replace(cfg, **{head: replace(getattr(cfg, head), **{rest: value})})


def parse_text(text: str, origin: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment line."""
    pairs = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{origin}:{number}: expected 'key = value', got {line!r}")
        key = key.strip()
        if key not in _KEYS:
            raise ConfigurationError(f"{origin}:{number}: unknown key {key!r}")
        pairs[key] = value.strip()
    return pairs


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    pairs = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower().replace("__", ".")
        if key not in _KEYS:
            raise ConfigurationError(f"environment variable {name}: unknown key {key!r}")
        pairs[key] = value
    return pairs


def apply(cfg: ExperimentConfig, pairs: Mapping[str, str], origin: str = "<config>") -> ExperimentConfig:
    for key, text in pairs.items():
        if key not in _KEYS:
            raise ConfigurationError(f"{origin}: unknown key {key!r}")
        parse, attr = _KEYS[key]
        try:
            value = parse(text)
        except ConfigurationError:
            raise
        except ValueError as exc:
            raise ConfigurationError(f"{origin}: malformed value for {key!r}: {text!r}") from exc
        try:
            cfg = _set(cfg, attr, value)
        except ConfigurationError as exc:
            raise ConfigurationError(f"{origin}: {key}: {exc}") from exc
    return cfg


def load_config(
    path=None,
    overrides: Optional[Mapping[str, str]] = None,
    environ: Optional[Mapping[str, str]] = None,
    toy: Optional[bool] = None,
) -> ExperimentConfig:
    """Resolve defaults, toy profile, file, environment and ``overrides`` in that order."""
    layers: list[tuple[str, dict[str, str]]] = []
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
        layers.append((str(path), parse_text(text, str(path))))
    layers.append(("environment", env_overrides(environ)))
    layers.append(("command line", {k: str(v) for k, v in (overrides or {}).items()}))

    merged: dict[str, str] = {}
    for _, pairs in layers:
        merged.update(pairs)
    try:
        is_toy = toy if toy is not None else _bool(merged.get("toy", "false"))
    except ValueError as exc:
        raise ConfigurationError(f"malformed value for 'toy': {merged['toy']!r}") from exc

    cfg = ExperimentConfig()
    if is_toy:
        cfg = apply(cfg, TOY_PROFILE, "toy profile")
        cfg = replace(cfg, toy=True)
    for origin, pairs in layers:
        cfg = apply(cfg, pairs, origin)
    if toy is not None:
        cfg = replace(cfg, toy=toy)
    return cfg.validate()


def parse_config(path) -> ExperimentConfig:
    """Read a config file with environment overrides applied."""
    return load_config(path)
