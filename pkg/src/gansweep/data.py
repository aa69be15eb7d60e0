"""Image ingestion, preprocessing, splitting, ratio blending and batching."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ConfigurationError, ContractError, IngestionError

log = logging.getLogger(__name__)

IMAGE_SIZE = 64
TUMOR, HEALTHY = "tumor", "healthy"
LABELS = (TUMOR, HEALTHY)
REAL, SYNTHETIC = "real", "synthetic"
BLEND_TOTAL = 1000
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


@dataclass(frozen=True)
class RawImage:
    """A decoded grayscale image with intensities in [0, 1]."""

    pixels: np.ndarray
    label: str
    uid: str


@dataclass(frozen=True, eq=False)
class ImageRecord:
    """One preprocessed (3, 64, 64) image in [-1, 1]."""

    pixels: np.ndarray
    label: str
    source: str = REAL
    uid: str = ""

    @property
    def target(self) -> int:
        return 1 if self.label == TUMOR else 0


@dataclass(frozen=True)
class BlendSpec:
    real_count: int
    gan_count: int

    def __post_init__(self):
        if self.real_count < 0 or self.gan_count < 0:
            raise ConfigurationError(f"blend counts must be non-negative: {self}")
        if self.real_count + self.gan_count != BLEND_TOTAL:
            raise ConfigurationError(
                f"blend {self.real_count}:{self.gan_count} sums to "
                f"{self.real_count + self.gan_count}, expected {BLEND_TOTAL}"
            )

    @property
    def label(self) -> str:
        return f"{self.real_count}:{self.gan_count}"

    @property
    def description(self) -> str:
        gan_pct = round(100 * self.gan_count / BLEND_TOTAL)
        return f"{gan_pct}% GAN, {100 - gan_pct}% Real"


# Real:GAN rows of the ratio protocol, in descending real fraction.
RATIO_ROWS = tuple(BlendSpec(1000 - 100 * i, 100 * i) for i in range(11))


@dataclass(frozen=True)
class SplitSpec:
    """Sizes of the three disjoint pools carved out of the real corpus.

    ``gan_train_size=None`` means "everything left after the other two".
    ``allow_overlap`` lets the GAN pool reuse CNN-pool images (never test ones).
    """

    cnn_pool_size: int = 1000
    gan_train_size: Optional[int] = None
    test_size: int = 500
    seed: int = 0
    allow_overlap: bool = False

    def __post_init__(self):
        for name in ("cnn_pool_size", "test_size"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if self.gan_train_size is not None and self.gan_train_size < 0:
            raise ConfigurationError("gan_train_size must be non-negative")


@dataclass
class Splits:
    cnn_pool: list
    gan_train: list
    test: list


# -- ingestion ---------------------------------------------------------------


def _decode(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        gray = img.convert("L")
        return np.asarray(gray, dtype=np.float32) / 255.0


def load_image_dir(path, label: str) -> list[RawImage]:
    """Decode every image file in ``path``; corrupt files are skipped with a warning."""
    if label not in LABELS:
        raise ConfigurationError(f"unknown label {label!r}")
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"image directory not found: {root}")
    files = sorted(p for p in root.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise IngestionError(f"no image files in {root}")
    images = []
    for f in files:
        try:
            pixels = _decode(f)
        except (UnidentifiedImageError, OSError, ValueError) as exc:
            log.warning("skipping undecodable image %s: %s", f, exc)
            continue
        images.append(RawImage(pixels, label, str(f)))
    if not images:
        raise IngestionError(f"none of the {len(files)} files in {root} could be decoded")
    return images


def load_dataset_root(root) -> list[RawImage]:
    """Read the ``yes/`` (tumor) and ``no/`` (healthy) folders under ``root``."""
    root = Path(root)
    return load_image_dir(root / "yes", TUMOR) + load_image_dir(root / "no", HEALTHY)


# -- preprocessing -----------------------------------------------------------


def center_crop_box(height: int, width: int) -> tuple[int, int, int]:
    """(top, left, side) of the largest centered square."""
    side = min(height, width)
    return (height - side) // 2, (width - side) // 2, side


def center_crop(pixels: np.ndarray) -> np.ndarray:
    top, left, side = center_crop_box(*pixels.shape[:2])
    return pixels[top : top + side, left : left + side]


def resize_bilinear(pixels: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    if pixels.shape == (size, size):
        return pixels.astype(np.float32, copy=True)
    img = Image.fromarray(pixels.astype(np.float32), mode="F")
    return np.asarray(img.resize((size, size), Image.BILINEAR), dtype=np.float32)


def normalize(x):
    """Map [0, 1] intensities to [-1, 1]."""
    return (x - 0.5) / 0.5


def denormalize(x):
    return x * 0.5 + 0.5


def preprocess(raw: RawImage, source: str = REAL) -> ImageRecord:
    """Center-crop to a square, resize to 64x64, replicate to RGB and normalize."""
    pixels = np.asarray(raw.pixels, dtype=np.float32)
    if pixels.ndim == 3:
        pixels = pixels.mean(axis=2)
    if pixels.ndim != 2 or pixels.shape[0] == 0 or pixels.shape[1] == 0:
        raise IngestionError(f"image {raw.uid!r} has degenerate shape {pixels.shape}")
    square = resize_bilinear(center_crop(pixels))
    scaled = np.clip(square, 0.0, 1.0)
    rgb = np.repeat(normalize(scaled)[None], 3, axis=0).astype(np.float32)
    return ImageRecord(rgb, raw.label, source, raw.uid)


def preprocess_all(raws: Iterable[RawImage]) -> list[ImageRecord]:
    return [preprocess(r) for r in raws]


# -- splitting and blending --------------------------------------------------


def _by_label(records: Sequence[ImageRecord]) -> dict[str, list[ImageRecord]]:
    groups = {label: [] for label in LABELS}
    for r in records:
        groups[r.label].append(r)
    return groups


def class_counts(total: int) -> dict[str, int]:
    """Balanced per-class counts; an odd total gives the extra image to tumor."""
    return {TUMOR: total - total // 2, HEALTHY: total // 2}


def _permute(items: list, rng: np.random.Generator) -> list:
    return [items[i] for i in rng.permutation(len(items))]


def split_dataset(records: Sequence[ImageRecord], spec: SplitSpec) -> Splits:
    """Class-balanced, disjoint cnn_pool / gan_train / test subsets."""
    groups = _by_label(records)
    rng = np.random.default_rng(spec.seed)
    test_n = class_counts(spec.test_size)
    pool_n = class_counts(spec.cnn_pool_size)
    out = Splits([], [], [])
    for label in LABELS:
        items = _permute(groups[label], rng)
        need = test_n[label] + pool_n[label]
        if len(items) < need:
            raise ConfigurationError(
                f"class {label!r}: {len(items)} images available, test+cnn_pool need {need} "
                f"(short by {need - len(items)})"
            )
        test = items[: test_n[label]]
        rest = items[test_n[label] :]
        pool = rest[: pool_n[label]]
        remaining = rest if spec.allow_overlap else rest[pool_n[label] :]
        if spec.gan_train_size is None:
            gan = remaining
        else:
            want = class_counts(spec.gan_train_size)[label]
            if len(remaining) < want:
                raise ConfigurationError(
                    f"class {label!r}: gan_train needs {want} images but only {len(remaining)} remain "
                    f"(short by {want - len(remaining)})"
                )
            gan = remaining[:want]
        out.test += test
        out.cnn_pool += pool
        out.gan_train += gan
    return out


def _take_balanced(pool: Sequence[ImageRecord], total: int, rng: np.random.Generator, what: str) -> list:
    groups = _by_label(pool)
    chosen = []
    for label, n in class_counts(total).items():
        items = groups[label]
        if len(items) < n:
            raise ConfigurationError(
                f"{what} pool has {len(items)} {label} images, blend needs {n} (short by {n - len(items)})"
            )
        idx = rng.choice(len(items), size=n, replace=False) if n else []
        chosen += [items[i] for i in sorted(idx)]
    return chosen


def blend(real_pool, synthetic_pool, spec: BlendSpec, seed: int) -> list[ImageRecord]:
    """Exactly ``spec.real_count`` real plus ``spec.gan_count`` synthetic images, shuffled."""
    rng = np.random.default_rng(seed)
    real = _take_balanced(real_pool, spec.real_count, rng, "real")
    synthetic = _take_balanced(synthetic_pool, spec.gan_count, rng, "synthetic")
    for r in real:
        if r.source != REAL:
            raise ContractError(f"record {r.uid} in the real pool is tagged {r.source}")
    for r in synthetic:
        if r.source != SYNTHETIC:
            raise ContractError(f"record {r.uid} in the synthetic pool is tagged {r.source}")
    return _permute(real + synthetic, rng)


def train_val_split(dataset: Sequence[ImageRecord], seed: int, train_size: int = 800) -> tuple[list, list]:
    """Stratified 800/200 split of a 1000-image blend."""
    if len(dataset) != BLEND_TOTAL:
        raise ContractError(f"train/val split expects {BLEND_TOTAL} records, got {len(dataset)}")
    rng = np.random.default_rng(seed)
    groups = _by_label(dataset)
    train, val = [], []
    frac = train_size / len(dataset)
    for label in LABELS:
        items = _permute(groups[label], rng)
        cut = int(round(len(items) * frac))
        train += items[:cut]
        val += items[cut:]
    # rounding per class can be off by one when class sizes are odd
    while len(train) > train_size:
        val.append(train.pop())
    while len(train) < train_size:
        train.append(val.pop())
    return _permute(train, rng), _permute(val, rng)


# -- batching -----------------------------------------------------------------


def stack(records: Sequence[ImageRecord]) -> tuple[np.ndarray, np.ndarray]:
    """Images as (N,3,64,64) float32 plus targets (1 = tumor) as (N,) float32."""
    x = np.stack([r.pixels for r in records]).astype(np.float32, copy=False)
    y = np.array([r.target for r in records], dtype=np.float32)
    return x, y


class BatchIterator:
    """Shuffled mini-batches; one full pass per epoch, final partial batch kept."""

    def __init__(self, dataset, batch_size: int = 64, seed=0):
        if len(dataset) == 0:
            raise ContractError("cannot batch an empty dataset")
        if batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if isinstance(dataset, np.ndarray):
            self.x, self.y = dataset, None
        else:
            self.x, self.y = stack(dataset)
        self.batch_size = batch_size
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.cursor = 0
        self.order = np.arange(len(self.x))

    def __len__(self) -> int:
        return -(-len(self.x) // self.batch_size)

    def epoch(self) -> Iterator[tuple[np.ndarray, Optional[np.ndarray], np.ndarray]]:
        """Yield ``(images, targets, indices)`` for one reshuffled pass."""
        self.order = self.rng.permutation(len(self.x))
        for self.cursor in range(0, len(self.x), self.batch_size):
            idx = self.order[self.cursor : self.cursor + self.batch_size]
            yield self.x[idx], (None if self.y is None else self.y[idx]), idx

    def __iter__(self):
        return self.epoch()


def batches(dataset, batch_size: int = 64, seed=0) -> BatchIterator:
    return BatchIterator(dataset, batch_size, seed)


# -- serialization ------------------------------------------------------------


def manifest_lines(records: Sequence[ImageRecord], split: str) -> list[str]:
    return [
        json.dumps({"path": r.uid, "label": r.label, "source": r.source, "split": split}, sort_keys=True)
        for r in records
    ]


def manifest_sha256(records: Sequence[ImageRecord], split: str) -> str:
    text = "\n".join(manifest_lines(records, split)) + "\n"
    return hashlib.sha256(text.encode()).hexdigest()


def save_dataset(records: Sequence[ImageRecord], stem, split: str) -> tuple[Path, Path]:
    """Write ``<stem>.npy`` (N,3,64,64 float32) and ``<stem>.jsonl`` manifest."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    tensor_path = stem.with_suffix(".npy")
    manifest_path = stem.with_suffix(".jsonl")
    pixels = np.stack([r.pixels for r in records]) if records else np.zeros((0, 3, IMAGE_SIZE, IMAGE_SIZE), np.float32)
    np.save(tensor_path, pixels.astype(np.float32))
    manifest_path.write_text("\n".join(manifest_lines(records, split)) + "\n")
    return tensor_path, manifest_path


def load_dataset(stem) -> tuple[list[ImageRecord], str]:
    stem = Path(stem)
    pixels = np.load(stem.with_suffix(".npy"))
    rows = [json.loads(line) for line in stem.with_suffix(".jsonl").read_text().splitlines() if line]
    if len(rows) != len(pixels):
        raise IngestionError(f"{stem}: manifest has {len(rows)} rows for {len(pixels)} images")
    records = [ImageRecord(p, row["label"], row["source"], row["path"]) for p, row in zip(pixels, rows)]
    split = rows[0]["split"] if rows else ""
    return records, split


def relabel(records: Sequence[ImageRecord], source: str) -> list[ImageRecord]:
    return [replace(r, source=source) for r in records]
