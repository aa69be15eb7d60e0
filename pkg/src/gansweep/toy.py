"""Desk-scale stand-in for the MRI corpus: Gaussian blobs over noise."""

from __future__ import annotations

import numpy as np

from .data import HEALTHY, TUMOR, ImageRecord, RawImage, preprocess


def _toy_raw(rng: np.random.Generator, size: int, tumor: bool) -> np.ndarray:
    img = 0.25 + 0.08 * rng.standard_normal((size, size))
    if tumor:
        sigma = size / 8.0
        cy, cx = rng.uniform(1.5 * sigma, size - 1.5 * sigma, size=2)
        yy, xx = np.mgrid[0:size, 0:size]
        img = img + 0.55 * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def make_toy_dataset(n_per_class: int, image_size: int = 32, seed: int = 0) -> list[ImageRecord]:
    """``n_per_class`` tumor images (bright blob) and as many healthy ones (noise only).

    Raw images are ``image_size`` square and go through the regular
    preprocessing, so they come out as (3, 64, 64) in [-1, 1].
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be at least 1")
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_per_class):
        for label in (TUMOR, HEALTHY):
            raw = RawImage(_toy_raw(rng, image_size, label == TUMOR), label, f"toy/{label}/{i:05d}")
            records.append(preprocess(raw))
    return records
