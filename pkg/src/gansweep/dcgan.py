"""Per-class DCGAN: networks, adversarial losses, training loop and sampling."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import functional as F
from .checkpoint import load_checkpoint, save_checkpoint
from .data import IMAGE_SIZE, LABELS, REAL, SYNTHETIC, BatchIterator, ImageRecord, denormalize, stack
from .errors import ConfigurationError, ContractError, DivergenceError
from .nn import Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Flatten, Module, Reshape, Sequential
from .optim import AdamConfig, AdamState, adam_step
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorSpec:
    """Latent vector -> 4x4 projection -> four stride-2 transposed convs -> 3x64x64."""

    z_dim: int = 100
    widths: tuple = (512, 256, 128, 64)
    out_channels: int = 3

    @classmethod
    def scaled(cls, z_dim: int = 100, base_width: int = 64) -> "GeneratorSpec":
        return cls(z_dim, (8 * base_width, 4 * base_width, 2 * base_width, base_width))


@dataclass(frozen=True)
class DiscriminatorSpec:
    """Four stride-2 convs (batchnorm on all but the first) and a sigmoid head."""

    widths: tuple = (64, 128, 256, 512)
    slope: float = 0.2
    in_channels: int = 3

    @classmethod
    def scaled(cls, base_width: int = 64) -> "DiscriminatorSpec":
        return cls((base_width, 2 * base_width, 4 * base_width, 8 * base_width))


def build_generator(z_dim: int = 100, spec: Optional[GeneratorSpec] = None, seed: int = 0) -> Sequential:
    if z_dim < 1:
        raise ConfigurationError("z_dim must be at least 1")
    spec = spec or GeneratorSpec(z_dim)
    if spec.z_dim != z_dim:
        spec = GeneratorSpec(z_dim, spec.widths, spec.out_channels)
    rng = np.random.default_rng(seed)
    w = spec.widths
    layers: list[Module] = [
        Reshape(z_dim, 1, 1),
        ConvTranspose2d(z_dim, w[0], 4, 1, 0, bias=False, rng=rng),
        BatchNorm2d(w[0], rng=rng),
        Activation("relu"),
    ]
    for c_in, c_out in zip(w, w[1:]):
        layers += [ConvTranspose2d(c_in, c_out, 4, 2, 1, bias=False, rng=rng), BatchNorm2d(c_out, rng=rng), Activation("relu")]
    layers += [ConvTranspose2d(w[-1], spec.out_channels, 4, 2, 1, bias=False, rng=rng), Activation("tanh")]
    net = Sequential(*layers)
    net.spec = spec
    return net


def build_discriminator(spec: Optional[DiscriminatorSpec] = None, seed: int = 0) -> Sequential:
    spec = spec or DiscriminatorSpec()
    rng = np.random.default_rng(seed)
    w = spec.widths
    layers: list[Module] = [Conv2d(spec.in_channels, w[0], 4, 2, 1, bias=False, rng=rng, init="normal"), Activation("leaky_relu", spec.slope)]
    for c_in, c_out in zip(w, w[1:]):
        layers += [
            Conv2d(c_in, c_out, 4, 2, 1, bias=False, rng=rng, init="normal"),
            BatchNorm2d(c_out, rng=rng),
            Activation("leaky_relu", spec.slope),
        ]
    layers += [Conv2d(w[-1], 1, 4, 1, 0, bias=False, rng=rng, init="normal"), Flatten(), Activation("sigmoid")]
    net = Sequential(*layers)
    net.spec = spec
    return net


# -- losses --------------------------------------------------------------------


def disc_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``-(mean log D(x) + mean log(1 - D(G(z))))`` with probabilities clamped at 1e-7."""
    return F.binary_cross_entropy(d_real, np.ones(d_real.shape)) + F.binary_cross_entropy(d_fake, np.zeros(d_fake.shape))


def gen_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss ``-mean log D(G(z))``."""
    return F.binary_cross_entropy(d_fake, np.ones(d_fake.shape))


# -- training -----------------------------------------------------------------


@dataclass
class GanTrainConfig:
    epochs: int = 1000
    learning_rate: float = 2e-4
    batch_size: int = 64
    z_dim: int = 100
    base_width: int = 64
    sample_epochs: tuple = (1, 500, 1000)
    sample_count: int = 16
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("GAN epochs must be at least 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("GAN learning_rate must be positive")
        if self.batch_size < 1 or self.z_dim < 1 or self.base_width < 1:
            raise ConfigurationError("GAN batch_size, z_dim and base_width must be positive")
        self.sample_epochs = tuple(int(e) for e in self.sample_epochs)

    @property
    def adam(self) -> AdamConfig:
        return AdamConfig(self.learning_rate, self.beta1, self.beta2)


@dataclass
class GanTrainReport:
    label: str
    gen_loss: list = field(default_factory=list)
    disc_loss: list = field(default_factory=list)
    samples: dict = field(default_factory=dict)
    d_steps: int = 0
    g_steps: int = 0
    train_uids: tuple = ()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "gen_loss", "disc_loss"])
            for epoch, (g, d) in enumerate(zip(self.gen_loss, self.disc_loss), start=1):
                writer.writerow([epoch, repr(float(g)), repr(float(d))])
        return path


@dataclass
class GanResult:
    generator: Sequential
    discriminator: Sequential
    report: GanTrainReport
    config: GanTrainConfig


def _check_class(images: Sequence[ImageRecord]) -> str:
    if not images:
        raise ContractError("GAN training needs at least one image")
    labels = {r.label for r in images}
    if len(labels) != 1:
        raise ContractError(f"GAN training expects a single class, got {sorted(labels)}")
    if any(r.source != REAL for r in images):
        raise ContractError("GAN training images must be real")
    shape = (3, IMAGE_SIZE, IMAGE_SIZE)
    for r in images:
        if r.pixels.shape != shape:
            raise ContractError(f"image {r.uid} has shape {r.pixels.shape}, expected {shape}")
    return labels.pop()


def _sample(generator: Module, z: np.ndarray) -> np.ndarray:
    was_training = generator.training
    generator.eval()
    try:
        with no_grad():
            return generator(Tensor(z)).data.copy()
    finally:
        generator.train(was_training)


def train_dcgan(images: Sequence[ImageRecord], config: GanTrainConfig) -> GanResult:
    """Alternate one discriminator and one generator Adam step per mini-batch."""
    label = _check_class(images)
    x, _ = stack(images)
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    g_seed, d_seed = (int(s.generate_state(1)[0]) for s in seeds[:2])
    G = build_generator(config.z_dim, GeneratorSpec.scaled(config.z_dim, config.base_width), seed=g_seed)
    D = build_discriminator(DiscriminatorSpec.scaled(config.base_width), seed=d_seed)
    noise_rng = np.random.default_rng(seeds[2])
    batches = BatchIterator(x, config.batch_size, np.random.default_rng(seeds[3]))
    fixed_z = np.random.default_rng(config.seed + 7919).standard_normal((config.sample_count, config.z_dim)).astype(np.float32)

    g_params, d_params = G.parameters(), D.parameters()
    g_state, d_state = AdamState.for_params(g_params), AdamState.for_params(d_params)
    adam = config.adam
    report = GanTrainReport(label, train_uids=tuple(r.uid for r in images))

    for epoch in range(1, config.epochs + 1):
        g_sum = d_sum = 0.0
        n_batches = 0
        for xb, _, _ in batches.epoch():
            z = noise_rng.standard_normal((len(xb), config.z_dim)).astype(np.float32)
            fake = G(Tensor(z))

            D.zero_grad()
            ld = disc_loss(D(Tensor(xb)), D(fake.detach()))
            ld.backward()
            adam_step(d_params, d_state, adam)
            report.d_steps += 1

            lg = gen_loss(D(fake))
            lg.backward()
            D.zero_grad()
            adam_step(g_params, g_state, adam)
            report.g_steps += 1

            d_val, g_val = ld.item(), lg.item()
            if not (math.isfinite(d_val) and math.isfinite(g_val)):
                raise DivergenceError(f"{label} GAN diverged at epoch {epoch}: disc {d_val}, gen {g_val}")
            d_sum += d_val
            g_sum += g_val
            n_batches += 1
        report.disc_loss.append(d_sum / n_batches)
        report.gen_loss.append(g_sum / n_batches)
        if epoch in config.sample_epochs:
            report.samples[epoch] = _sample(G, fixed_z)
        log.debug("%s epoch %d: gen %.4f disc %.4f", label, epoch, report.gen_loss[-1], report.disc_loss[-1])
    return GanResult(G, D, report, config)


def generate_synthetic(generator: Module, count: int, label: str, seed: int, batch_size: int = 64) -> list[ImageRecord]:
    """Draw ``count`` images from ``generator`` and tag them as synthetic ``label`` records."""
    if count < 1:
        raise ContractError("count must be at least 1")
    if label not in LABELS:
        raise ConfigurationError(f"unknown label {label!r}")
    z_dim = generator.spec.z_dim
    z = np.random.default_rng(seed).standard_normal((count, z_dim)).astype(np.float32)
    out = []
    for start in range(0, count, batch_size):
        imgs = _sample(generator, z[start : start + batch_size])
        for i, img in enumerate(imgs, start=start):
            out.append(ImageRecord(img, label, SYNTHETIC, f"gan/{label}/{seed}/{i:05d}"))
    return out


# -- persistence and export -------------------------------------------------


def save_generator(path, generator: Sequential, seed: int = 0, label: str = "") -> Path:
    spec = generator.spec
    header = {"kind": "generator", "z_dim": spec.z_dim, "widths": list(spec.widths), "seed": seed, "label": label}
    return save_checkpoint(path, generator.state_dict(), header)


def load_generator(path) -> tuple[Sequential, dict]:
    state, header = load_checkpoint(path)
    if header.get("kind") != "generator":
        raise ContractError(f"{path} does not hold a generator")
    spec = GeneratorSpec(header["z_dim"], tuple(header["widths"]))
    net = build_generator(spec.z_dim, spec)
    net.load_state_dict(state)
    return net, header


def image_grid(images: np.ndarray, columns: Optional[int] = None) -> np.ndarray:
    """Tile (N,3,H,W) images in [-1,1] into one uint8 (rows*H, cols*W, 3) array."""
    n, _, h, w = images.shape
    columns = columns or int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / columns))
    grid = np.zeros((rows * h, columns * w, 3), dtype=np.uint8)
    pixels = np.clip(denormalize(images), 0, 1).transpose(0, 2, 3, 1)
    for i, img in enumerate(pixels):
        r, c = divmod(i, columns)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = np.round(img * 255).astype(np.uint8)
    return grid


def save_sample_grid(images: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image_grid(images)).save(path)
    return path
