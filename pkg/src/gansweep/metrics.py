"""Confusion-count metrics and the pairwise (Mann-Whitney) AUC.

Tumor is the positive class throughout. Internal values are fractions in
[0, 1]; percentages only appear when a report is rendered.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .data import TUMOR, ImageRecord, stack
from .errors import ConfigurationError, ContractError

TIE_RULES = ("strict", "half")


@dataclass(frozen=True)
class ConfusionCounts:
    """C1 true positives, C2 true negatives, I1 false positives, I2 false negatives."""

    C1: int
    C2: int
    I1: int
    I2: int

    @property
    def total(self) -> int:
        return self.C1 + self.C2 + self.I1 + self.I2

    def as_matrix(self) -> np.ndarray:
        """Rows are the true class (tumor, healthy), columns the predicted one."""
        return np.array([[self.C1, self.I2], [self.I1, self.C2]])


@dataclass(frozen=True)
class ScoredSample:
    score: float
    positive: bool


@dataclass(frozen=True)
class SummaryMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    # names of ratios whose denominator was zero and were reported as 0
    undefined: tuple = ()


def _as_positive(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "UO":
        return arr == TUMOR
    return arr.astype(bool)


def confusion(predictions, truths) -> ConfusionCounts:
    """Tally predicted vs true labels; labels may be ``"tumor"/"healthy"`` or 1/0."""
    pred, true = _as_positive(predictions), _as_positive(truths)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ContractError(f"confusion needs two equal-length vectors, got {pred.shape} and {true.shape}")
    if pred.size == 0:
        raise ContractError("confusion needs at least one sample")
    return ConfusionCounts(
        C1=int(np.sum(pred & true)),
        C2=int(np.sum(~pred & ~true)),
        I1=int(np.sum(pred & ~true)),
        I2=int(np.sum(~pred & true)),
    )


def _ratio(num: int, den: int, name: str, undefined: list) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean of precision and recall, 0 when both are 0."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def summary_metrics(counts: ConfusionCounts) -> SummaryMetrics:
    if counts.total <= 0:
        raise ContractError("metrics are undefined for an empty evaluation")
    undefined: list[str] = []
    accuracy = (counts.C1 + counts.C2) / counts.total
    precision = _ratio(counts.C1, counts.C1 + counts.I1, "precision", undefined)
    recall = _ratio(counts.C1, counts.C1 + counts.I2, "recall", undefined)
    if precision + recall == 0:
        undefined.append("f1")
    return SummaryMetrics(accuracy, precision, recall, f1_score(precision, recall), tuple(undefined))


def _split_scores(samples, truths=None) -> tuple[np.ndarray, np.ndarray]:
    if truths is None:
        scores = np.array([s.score for s in samples], dtype=np.float64)
        positive = np.array([s.positive for s in samples], dtype=bool)
    else:
        scores = np.asarray(samples, dtype=np.float64).reshape(-1)
        positive = _as_positive(truths).reshape(-1)
        if scores.shape != positive.shape:
            raise ContractError(f"{scores.size} scores for {positive.size} labels")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    pos, neg = scores[positive], scores[~positive]
    if pos.size == 0 or neg.size == 0:
        raise ContractError(f"AUC needs both classes: {pos.size} positive, {neg.size} negative samples")
    return pos, neg


def auc(samples, truths=None, tie_rule: str = "strict") -> float:
    """Fraction of (positive, negative) pairs where the positive scores higher.

    ``samples`` is either a sequence of :class:`ScoredSample` or a score
    vector paired with ``truths``. Under ``"strict"`` a tied pair counts 0;
    under ``"half"`` it counts 0.5.
    """
    if tie_rule not in TIE_RULES:
        raise ConfigurationError(f"tie_rule must be one of {TIE_RULES}, got {tie_rule!r}")
    pos, neg = _split_scores(samples, truths)
    neg = np.sort(neg)
    below = np.searchsorted(neg, pos, side="left")
    wins = int(below.sum())
    if tie_rule == "half":
        ties = int((np.searchsorted(neg, pos, side="right") - below).sum())
        return (wins + 0.5 * ties) / (pos.size * neg.size)
    return wins / (pos.size * neg.size)


def roc_points(scores, truths) -> list[tuple[float, float]]:
    """(FPR, TPR) pairs from the highest threshold down, starting at (0, 0)."""
    pos, neg = _split_scores(scores, truths)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    points = [(0.0, 0.0)]
    for t in thresholds:
        points.append((float(np.mean(neg >= t)), float(np.mean(pos >= t))))
    return points


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    auc: float
    counts: ConfusionCounts
    threshold: float = 0.5
    tie_rule: str = "strict"
    undefined: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["undefined"] = list(self.undefined)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        data = dict(data)
        data["counts"] = ConfusionCounts(**data["counts"])
        data["undefined"] = tuple(data.get("undefined", ()))
        return cls(**data)

    def write_json(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        row = {k: v for k, v in self.to_dict().items() if k not in ("counts", "undefined")}
        row.update(asdict(self.counts))
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row))
            writer.writeheader()
            writer.writerow(row)
        return path


Scorer = Union[Callable[[np.ndarray], np.ndarray], object]


def _scores(network: Scorer, x: np.ndarray) -> np.ndarray:
    from .cnn import predict
    from .nn import Module

    if isinstance(network, Module):
        return predict(network, x)
    return np.asarray(network(x), dtype=np.float64).reshape(-1)


def evaluate(network: Scorer, test_set: Sequence[ImageRecord], threshold: float = 0.5, tie_rule: str = "strict") -> MetricsReport:
    """Score the test set, threshold at ``p > threshold`` and assemble every metric.

    ``network`` is a classifier module or any callable mapping an (N,3,64,64)
    array to N tumor probabilities.
    """
    if len(test_set) == 0:
        raise ContractError("cannot evaluate on an empty test set")
    x, y = stack(test_set)
    scores = _scores(network, x)
    if scores.shape != y.shape:
        raise ContractError(f"network returned {scores.size} scores for {y.size} images")
    counts = confusion(scores > threshold, y)
    summary = summary_metrics(counts)
    area = auc(scores, y, tie_rule=tie_rule)
    return MetricsReport(
        summary.accuracy, summary.precision, summary.recall, summary.f1, area, counts, threshold, tie_rule, summary.undefined
    )
