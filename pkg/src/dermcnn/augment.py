"""Stochastic training-set augmentation and minority-class balancing.

One combined affine transform (flip, rotate, shear, zoom, translate, all
about the image center) is sampled per synthetic image, followed by a
per-channel intensity shift and an optional PCA color shift.  Parameter
draws come from counter-based streams keyed by (seed, sample index), so the
augmented stream is reproducible regardless of evaluation order or thread
count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .dataset import DatasetManifest, Label
from .errors import EmptyClass, NotRGB
from .image import check_image


@dataclass
class AugmentConfig:
    rotation_range: float = 10.0         # degrees
    height_shift_range: float = 0.2      # fraction of height
    width_shift_range: float = 0.2       # fraction of width
    shear_range: float = 0.2             # shear factor
    zoom_range: float = 0.2              # zoom in [1 - r, 1 + r]
    channel_shift_range: float = 10.0    # on the 0-255 intensity scale
    horizontal_flip: bool = True
    fill_mode: str = "nearest"
    pca_sigma: float = 0.1

    def __post_init__(self):
        if self.fill_mode != "nearest":
            raise ValueError(f"only 'nearest' fill is supported, got {self.fill_mode!r}")


@dataclass(frozen=True)
class AugmentParams:
    angle: float
    dy: float
    dx: float
    shear: float
    zoom: float
    channel_delta: tuple[float, float, float]
    flip: bool


IDENTITY_PARAMS = AugmentParams(0.0, 0.0, 0.0, 0.0, 1.0, (0.0, 0.0, 0.0), False)


def sample_params(cfg: AugmentConfig, seed: int, index: int = 0) -> AugmentParams:
    """Draw one parameter set from the stream keyed by (seed, index)."""
    gen = rng.stream(seed, rng.AUGMENT, index)
    angle = gen.uniform(-cfg.rotation_range, cfg.rotation_range)
    dy = gen.uniform(-cfg.height_shift_range, cfg.height_shift_range)
    dx = gen.uniform(-cfg.width_shift_range, cfg.width_shift_range)
    shear = gen.uniform(-cfg.shear_range, cfg.shear_range)
    zoom = gen.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range)
    r = cfg.channel_shift_range / 255.0
    delta = tuple(float(d) for d in gen.uniform(-r, r, size=3))
    flip = bool(gen.integers(0, 2)) if cfg.horizontal_flip else False
    return AugmentParams(angle, dy, dx, shear, zoom, delta, flip)


def _affine_matrix(p: AugmentParams, h: int, w: int) -> np.ndarray:
    # Forward map, applied in order: flip, rotate, shear, zoom (about the
    # center), then translate.  Coordinates are (x, y, 1) with y down.
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    flip = np.array([[-1.0 if p.flip else 1.0, 0, 0], [0, 1, 0], [0, 0, 1]])
    theta = math.radians(p.angle)
    rot = np.array(
        [[math.cos(theta), -math.sin(theta), 0], [math.sin(theta), math.cos(theta), 0], [0, 0, 1]]
    )
    shear = np.array([[1.0, p.shear, 0], [0, 1, 0], [0, 0, 1]])
    zoom = np.array([[p.zoom, 0, 0], [0, p.zoom, 0], [0, 0, 1]])
    to_center = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1.0]])
    from_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1.0]])
    translate = np.array([[1, 0, p.dx * w], [0, 1, p.dy * h], [0, 0, 1.0]])
    return translate @ to_center @ zoom @ shear @ rot @ flip @ from_center


def apply(img: np.ndarray, p: AugmentParams) -> np.ndarray:
    """Apply one sampled transform; output stays inside [0, 1]."""
    img = check_image(img)
    if p == IDENTITY_PARAMS:
        return img.copy()
    h, w, c = img.shape
    matrix = _affine_matrix(p, h, w)
    inverse = np.linalg.inv(matrix)
    xs, ys = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    src_x = inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]
    src_y = inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]
    # nearest-neighbor sampling; out-of-support coordinates clamp to the edge
    ix = np.clip(np.rint(src_x), 0, w - 1).astype(np.intp)
    iy = np.clip(np.rint(src_y), 0, h - 1).astype(np.intp)
    out = img[iy, ix]
    delta = np.asarray(p.channel_delta[:c], dtype=img.dtype)
    if np.any(delta != 0.0):
        out = np.clip(out + delta, 0.0, 1.0)
    return out


def pca_color_shift(img: np.ndarray, alpha_seed: int, sigma: float = 0.1) -> np.ndarray:
    """Shift every pixel along the eigenvectors of the image's RGB covariance.

    Component magnitudes are a_i * lambda_i with a_i ~ Normal(0, sigma),
    drawn once per image from the stream keyed by alpha_seed.
    """
    img = check_image(img)
    if img.shape[2] != 3:
        raise NotRGB(f"PCA color shift needs RGB, got {img.shape[2]} channel(s)")
    pixels = img.reshape(-1, 3).astype(np.float64)
    cov = np.cov(pixels, rowvar=False)
    eigvals, eigvecs = np.linalg.eigh(cov)
    alphas = rng.stream(alpha_seed, rng.PCA).normal(0.0, sigma, size=3)
    shift = eigvecs @ (alphas * eigvals)
    return np.clip(img + shift.astype(img.dtype), 0.0, 1.0)


def balance(manifest: DatasetManifest, cfg: AugmentConfig, seed: int) -> list[tuple[str, int]]:
    """Plan minority oversampling for the training split.

    Returns (source image_id, seed index) pairs; rendering entry i applies
    sample_params(cfg, seed, i) to its source image.  Sources cycle through
    the minority class in seeded shuffled order; validation and test images
    are never used.
    """
    train_ids: dict[Label, list[str]] = {Label.BENIGN: [], Label.MALIGNANT: []}
    for record in manifest.records:
        if record.label != Label.UNDETERMINED and manifest.split_of.get(record.image_id) == "train":
            train_ids[record.label].append(record.image_id)
    for label, ids in train_ids.items():
        if not ids:
            raise EmptyClass(f"training split has no {label.name.lower()} samples")

    n_benign, n_malignant = len(train_ids[Label.BENIGN]), len(train_ids[Label.MALIGNANT])
    if n_benign == n_malignant:
        return []
    minority = Label.MALIGNANT if n_malignant < n_benign else Label.BENIGN
    need = abs(n_benign - n_malignant)
    pool = sorted(train_ids[minority])
    gen = rng.stream(seed, rng.BALANCE)
    order = [pool[i] for i in gen.permutation(len(pool))]
    return [(order[i % len(order)], i) for i in range(need)]


def render_entry(img: np.ndarray, cfg: AugmentConfig, seed: int, index: int) -> np.ndarray:
    """Render one plan entry: sampled affine + channel shift + PCA color shift."""
    out = apply(img, sample_params(cfg, seed, index))
    if cfg.pca_sigma > 0 and out.shape[2] == 3:
        out = pca_color_shift(out, alpha_seed=_pca_seed(seed, index), sigma=cfg.pca_sigma)
    return out


def _pca_seed(seed: int, index: int) -> int:
    # fold the entry index into a distinct 64-bit key for the alpha draw
    return (int(seed) ^ (index * 0x9E3779B97F4A7C15)) & ((1 << 64) - 1)


def render_plan(
    images_by_id: dict[str, np.ndarray],
    cfg: AugmentConfig,
    seed: int,
    plan: list[tuple[str, int]],
    threads: int = 1,
) -> list[np.ndarray]:
    """Render a whole plan; output order is the plan order for any thread count."""
    def job(entry: tuple[str, int]) -> np.ndarray:
        source_id, index = entry
        return render_entry(images_by_id[source_id], cfg, seed, index)

    if threads <= 1:
        return [job(entry) for entry in plan]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, plan))


def write_plan(plan: list[tuple[str, int]], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for source_id, index in plan:
            fh.write(f"{source_id},{index}\n")


def read_plan(path: str | os.PathLike) -> list[tuple[str, int]]:
    plan: list[tuple[str, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            source_id, index = line.rsplit(",", 1)
            plan.append((source_id, int(index)))
    return plan
