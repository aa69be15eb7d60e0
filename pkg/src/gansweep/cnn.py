"""Binary tumor classifier: three conv/pool stages, a dense head, BCE training."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import functional as F
from .checkpoint import load_checkpoint, save_checkpoint
from .data import HEALTHY, IMAGE_SIZE, TUMOR, BatchIterator, ImageRecord, stack
from .errors import ConfigurationError, ContractError, DivergenceError
from .nn import Activation, Conv2d, Dense, Dropout, Flatten, MaxPool2d, Module, Sequential
from .optim import AdamConfig, AdamState, adam_step
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

CONV_WIDTHS = (32, 64, 128)
HIDDEN_UNITS = 128


@dataclass(frozen=True)
class CnnSpec:
    conv_widths: tuple = CONV_WIDTHS
    kernel: int = 3
    hidden: int = HIDDEN_UNITS
    dropout_rate: float = 0.5
    in_channels: int = 3
    image_size: int = IMAGE_SIZE

    @property
    def flat_features(self) -> int:
        side = self.image_size // 2 ** len(self.conv_widths)
        return self.conv_widths[-1] * side * side

    def analytic_parameter_count(self) -> int:
        count, c_in = 0, self.in_channels
        for c_out in self.conv_widths:
            count += c_out * c_in * self.kernel**2 + c_out
            c_in = c_out
        count += self.flat_features * self.hidden + self.hidden
        count += self.hidden + 1
        return count


def build_cnn(dropout_rate: float = 0.5, seed: int = 0, spec: Optional[CnnSpec] = None) -> Sequential:
    """Same-padded 3x3 convs with ReLU and 2x2 max-pooling (64 -> 32 -> 16 -> 8), then dense 128 -> 1."""
    if not 0.0 <= dropout_rate < 1.0:
        raise ConfigurationError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    spec = spec or CnnSpec(dropout_rate=dropout_rate)
    rng = np.random.default_rng(seed)
    layers: list[Module] = []
    c_in = spec.in_channels
    for c_out in spec.conv_widths:
        layers += [Conv2d(c_in, c_out, spec.kernel, 1, spec.kernel // 2, rng=rng), Activation("relu"), MaxPool2d(2)]
        c_in = c_out
    layers += [
        Flatten(),
        Dense(spec.flat_features, spec.hidden, rng=rng),
        Activation("relu"),
        Dropout(dropout_rate, seed=int(rng.integers(2**32))),
        Dense(spec.hidden, 1, rng=rng),
        Activation("sigmoid"),
    ]
    net = Sequential(*layers)
    net.spec = spec
    return net


def bce_loss(predictions: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    t = np.asarray(targets)
    if t.size != predictions.size:
        raise ContractError(f"{predictions.size} predictions for {t.size} targets")
    return F.binary_cross_entropy(predictions, t)


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 25
    dropout_rate: float = 0.5
    patience: Optional[int] = 5
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be at least 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        if not self.learning_rate > 0 or self.batch_size < 1:
            raise ConfigurationError("learning_rate and batch_size must be positive")
        if self.patience is not None and self.patience < 1:
            raise ConfigurationError("patience must be positive or unset")

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    steps: int = 0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.train_loss)

    def rows(self):
        for i in range(len(self)):
            yield i + 1, self.train_loss[i], self.train_acc[i], self.val_loss[i], self.val_acc[i]

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            for row in self.rows():
                writer.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return path


def _dropout_layers(net: Sequential) -> list[Dropout]:
    return [layer for layer in net.layers if isinstance(layer, Dropout)]


def predict(network: Module, images, batch_size: int = 256) -> np.ndarray:
    """Tumor probabilities for (N,3,64,64) images; dropout off, no graph recorded."""
    x = images.data if isinstance(images, Tensor) else np.asarray(images, dtype=np.float32)
    if x.ndim != 4 or x.shape[1:] != (3, IMAGE_SIZE, IMAGE_SIZE):
        raise ContractError(f"predict expects (N,3,{IMAGE_SIZE},{IMAGE_SIZE}) images, got {x.shape}")
    was_training = network.training
    network.eval()
    try:
        with no_grad():
            out = [network(Tensor(x[i : i + batch_size])).data.reshape(-1) for i in range(0, len(x), batch_size)]
    finally:
        network.train(was_training)
    return np.concatenate(out) if out else np.zeros(0, dtype=np.float32)


def classify(probability, threshold: float = 0.5):
    """``tumor`` iff probability > threshold (strict), else ``healthy``; vectorises over arrays."""
    p = np.asarray(probability)
    if p.ndim == 0:
        return TUMOR if float(p) > threshold else HEALTHY
    return np.where(p > threshold, TUMOR, HEALTHY)


def _evaluate_split(network, x, y) -> tuple[float, float]:
    p = predict(network, x)
    loss = float(bce_loss(Tensor(p), y).data)
    acc = float(np.mean((p > 0.5) == (y > 0.5)))
    return loss, acc


def train_cnn(
    train_set: Sequence[ImageRecord],
    val_set: Sequence[ImageRecord],
    config: TrainConfig,
    on_epoch: Optional[Callable[[int, Sequential, "TrainHistory"], bool]] = None,
) -> tuple[Sequential, TrainHistory]:
    """Mini-batch Adam on BCE with a per-epoch reshuffle and validation pass.

    ``on_epoch(epoch, network, history)`` runs after each validation pass;
    a true return value ends training there.
    """
    if not train_set or not val_set:
        raise ContractError("train and validation sets must be non-empty")
    train_ids = {id(r) for r in train_set}
    if any(id(r) in train_ids for r in val_set) or (
        {r.uid for r in train_set if r.uid} & {r.uid for r in val_set if r.uid}
    ):
        raise ContractError("train and validation sets overlap")

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    net = build_cnn(config.dropout_rate, seed=int(seeds[0].generate_state(1)[0]))
    for layer in _dropout_layers(net):
        layer.rng = np.random.default_rng(seeds[1])
    batches = BatchIterator(train_set, config.batch_size, np.random.default_rng(seeds[2]))
    x_val, y_val = stack(val_set)
    params = net.parameters()
    state = AdamState.for_params(params)
    adam = config.adam
    history = TrainHistory()
    best_val, stale = math.inf, 0

    net.train()
    for epoch in range(1, config.epochs + 1):
        loss_sum, correct, seen = 0.0, 0, 0
        for xb, yb, _ in batches.epoch():
            probs = net(Tensor(xb))
            loss = bce_loss(probs, yb)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(f"classifier loss became {value} at epoch {epoch}")
            loss.backward()
            adam_step(params, state, adam)
            history.steps += 1
            loss_sum += value * len(xb)
            correct += int(np.sum((probs.data.reshape(-1) > 0.5) == (yb > 0.5)))
            seen += len(xb)
        val_loss, val_acc = _evaluate_split(net, x_val, y_val)
        history.train_loss.append(loss_sum / seen)
        history.train_acc.append(correct / seen)
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        log.debug("epoch %d: train %.4f/%.3f val %.4f/%.3f", epoch, loss_sum / seen, correct / seen, val_loss, val_acc)
        if on_epoch is not None and on_epoch(epoch, net, history):
            break
        if config.patience is not None:
            if val_loss < best_val:
                best_val, stale = val_loss, 0
            else:
                stale += 1
                if stale >= config.patience:
                    history.stopped_early = True
                    break
    return net, history


def save_cnn(path, network: Sequential, seed: int = 0) -> Path:
    spec = network.spec
    header = {
        "kind": "cnn",
        "conv_widths": list(spec.conv_widths),
        "hidden": spec.hidden,
        "dropout_rate": spec.dropout_rate,
        "seed": seed,
    }
    return save_checkpoint(path, network.state_dict(), header)


def load_cnn(path) -> tuple[Sequential, dict]:
    state, header = load_checkpoint(path)
    if header.get("kind") != "cnn":
        raise ContractError(f"{path} does not hold a classifier")
    spec = CnnSpec(tuple(header["conv_widths"]), hidden=header["hidden"], dropout_rate=header["dropout_rate"])
    net = build_cnn(spec.dropout_rate, spec=spec)
    net.load_state_dict(state)
    return net, header
