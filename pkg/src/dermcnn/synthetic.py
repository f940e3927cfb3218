"""Synthetic blob datasets for smoke tests and demos.

Positives carry a bright Gaussian blob on a dark noisy background;
negatives are dark noise only.  Images and a HAM10000-style metadata CSV
are written to disk so the full CLI pipeline can run end to end without
real data.
"""
from __future__ import annotations

import os

import numpy as np

from . import rng
from .image import save_image


def blob_image(size: int, positive: bool, gen: np.random.Generator,
               brightness: float = 0.85, noise: float = 0.05) -> np.ndarray:
    img = gen.uniform(0.0, noise, size=(size, size, 3))
    if positive:
        cy, cx = gen.uniform(size * 0.3, size * 0.7, size=2)
        radius = gen.uniform(size * 0.15, size * 0.3)
        yy, xx = np.mgrid[0:size, 0:size]
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius**2))
        img += brightness * blob[:, :, None]
    return np.clip(img, 0.0, 1.0)


def make_blob_dataset(
    out_dir: str | os.PathLike,
    n_images: int,
    image_size: int = 32,
    seed: int = 0,
    malignant_fraction: float = 0.5,
    brightness: float = 0.85,
    noise: float = 0.05,
) -> tuple[str, str]:
    """Write PNGs plus metadata.csv; returns (metadata_path, image_dir)."""
    out_dir = os.fspath(out_dir)
    image_dir = os.path.join(out_dir, "images")
    os.makedirs(image_dir, exist_ok=True)
    n_pos = int(round(malignant_fraction * n_images))
    rows = ["lesion_id,image_id,dx,dx_type,age,sex,localization"]
    for i in range(n_images):
        positive = i < n_pos
        gen = rng.stream(seed, rng.FIXTURE, i)
        img = blob_image(image_size, positive, gen, brightness, noise)
        image_id = f"SYN_{i:07d}"
        save_image(img, os.path.join(image_dir, image_id + ".png"))
        dx = "mel" if positive else "nv"
        rows.append(f"LES_{i:07d},{image_id},{dx},synthetic,50,unknown,arm")
    metadata_path = os.path.join(out_dir, "metadata.csv")
    with open(metadata_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    return metadata_path, image_dir
