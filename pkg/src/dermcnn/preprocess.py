"""Per-image preprocessing: specular-reflection removal, denoising,
normalization, and resizing.

Reflection artifacts are bright speckles left by dermoscopy gel and lighting.
A pixel is flagged when it is both absolutely bright and far above its local
neighborhood mean; flagged pixels are then filled from their unflagged
neighbors.  All operations are pure and deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DimensionMismatch,
    EmptyImage,
    EvenKernel,
    KernelLargerThanImage,
    MaskTooLarge,
    WindowLargerThanImage,
)
from .image import check_grayscale, check_image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class Median:
    k: int = 3


@dataclass(frozen=True)
class Gaussian:
    k: int = 5
    sigma: float = 1.0


@dataclass
class PreprocessConfig:
    """Pipeline settings; the reflection thresholds operate on [0,1] grayscale."""

    t_r1: float = 0.87
    t_r2: float = 0.096
    mean_window: int = 12
    denoise: Median | Gaussian | None = field(default_factory=Median)
    normalize: str = "minmax"  # minmax | zscore | decimal
    target_size: tuple[int, int] = (64, 64)

    def __post_init__(self):
        if not 0.0 < self.t_r2 < self.t_r1 < 1.0:
            raise ValueError(f"thresholds must satisfy 0 < t_r2 < t_r1 < 1, got {self.t_r1}, {self.t_r2}")
        if self.mean_window < 1:
            raise ValueError("mean_window must be >= 1")
        if self.normalize not in ("minmax", "zscore", "decimal"):
            raise ValueError(f"unknown normalization {self.normalize!r}")


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Collapse RGB to luminance (0.299/0.587/0.114); pass 1-channel through."""
    img = check_image(img)
    if img.shape[2] == 1:
        return img
    return (img @ LUMA_WEIGHTS.astype(img.dtype))[:, :, None]


def _pad_amounts(window: int) -> tuple[int, int]:
    # Even windows anchor on the top-left of the center pair, so the window
    # spans offsets [-(w-1)//2, w//2] around each pixel.
    return (window - 1) // 2, window // 2


def local_mean(gray: np.ndarray, window: int) -> np.ndarray:
    """Mean over the window x window neighborhood, borders edge-replicated."""
    gray = check_grayscale(gray)
    h, w = gray.shape[:2]
    if window < 1:
        raise WindowLargerThanImage("window must be >= 1")
    if window > min(h, w):
        raise WindowLargerThanImage(f"window {window} exceeds image size {h}x{w}")
    if window == 1:
        return gray.copy()
    lo, hi = _pad_amounts(window)
    padded = np.pad(gray[:, :, 0], ((lo, hi), (lo, hi)), mode="edge")
    tiles = sliding_window_view(padded, (window, window))
    return tiles.mean(axis=(2, 3))[:, :, None].astype(gray.dtype, copy=False)


def detect_reflection(gray: np.ndarray, cfg: PreprocessConfig | None = None) -> np.ndarray:
    """Boolean (H, W) mask of reflection-artifact pixels.

    A pixel is flagged iff intensity > t_r1 and (intensity - local mean) > t_r2,
    both inequalities strict.
    """
    cfg = cfg or PreprocessConfig()
    gray = check_grayscale(gray)
    avg = local_mean(gray, cfg.mean_window)
    vals = gray[:, :, 0]
    return (vals > cfg.t_r1) & ((vals - avg[:, :, 0]) > cfg.t_r2)


def inpaint(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill flagged pixels by iterated medians of their unflagged 8-neighbors.

    Each sweep reads only the previous sweep's values, so results are
    schedule-independent; filled pixels become unflagged for later sweeps.
    Unflagged pixels are returned bit-identical.
    """
    img = check_image(img)
    mask = np.asarray(mask, dtype=bool)
    h, w, c = img.shape
    if mask.shape != (h, w):
        raise DimensionMismatch(f"mask {mask.shape} does not match image {(h, w)}")
    if not mask.any():
        return img.copy()
    if mask.mean() > 0.5:
        raise MaskTooLarge(f"{mask.mean():.1%} of pixels flagged; limit is 50%")

    offsets = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
    out = img.astype(np.float64, copy=True)
    flagged = mask.copy()
    while flagged.any():
        stack = np.full((8, h, w, c), np.nan)
        padded = np.pad(out, ((1, 1), (1, 1), (0, 0)), mode="constant", constant_values=np.nan)
        valid = np.pad(~flagged, ((1, 1), (1, 1)), mode="constant", constant_values=False)
        for i, (dy, dx) in enumerate(offsets):
            vals = padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            ok = valid[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
            stack[i][ok] = vals[ok]
        fillable = flagged & np.isfinite(stack).any(axis=(0, 3))
        medians = np.nanmedian(stack[:, fillable, :], axis=0)
        out[fillable] = medians
        flagged &= ~fillable
    return out.astype(img.dtype, copy=False)


def _check_kernel(k: int, h: int, w: int) -> None:
    if k % 2 == 0:
        raise EvenKernel(f"kernel size must be odd, got {k}")
    if k > min(h, w):
        raise KernelLargerThanImage(f"kernel {k} exceeds image size {h}x{w}")


def gaussian_kernel(k: int, sigma: float) -> np.ndarray:
    """k x k Gaussian, normalized to sum exactly 1."""
    ax = np.arange(k, dtype=np.float64) - (k - 1) / 2.0
    g1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    kernel = np.outer(g1, g1)
    return kernel / kernel.sum()


def denoise(img: np.ndarray, method: Median | Gaussian | None) -> np.ndarray:
    """Median or Gaussian smoothing, per channel, borders edge-replicated."""
    img = check_image(img)
    if method is None:
        return img.copy()
    h, w, c = img.shape
    _check_kernel(method.k, h, w)
    k = method.k
    r = (k - 1) // 2
    padded = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
    if isinstance(method, Median):
        tiles = sliding_window_view(padded, (k, k), axis=(0, 1))
        return np.median(tiles, axis=(3, 4)).astype(img.dtype, copy=False)
    kernel = gaussian_kernel(k, method.sigma)
    out = np.zeros((h, w, c), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out += kernel[i, j] * padded[i:i + h, j:j + w]
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def normalize(img: np.ndarray, method: str = "minmax") -> np.ndarray:
    """Rescale pixel values per image; every method lands back in [0, 1]."""
    img = check_image(img)
    if method == "minmax":
        lo, hi = img.min(), img.max()
        if hi == lo:
            return np.zeros_like(img)
        return np.clip((img - lo) / (hi - lo), 0.0, 1.0)
    if method == "zscore":
        mu, sd = img.mean(), img.std()
        if sd == 0:
            return np.zeros_like(img)
        z = (img - mu) / sd
        # remap affinely so the output honors the [0,1] image contract
        return np.clip((z - z.min()) / (z.max() - z.min()), 0.0, 1.0)
    if method == "decimal":
        peak = np.abs(img).max()
        j = 0
        while peak / (10.0**j) > 1.0:
            j += 1
        if j == 0:
            return img.copy()
        return img / (10.0**j)
    raise ValueError(f"unknown normalization {method!r}")


def resize(img: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resize with half-pixel-centered sampling."""
    img = check_image(img)
    if h < 1 or w < 1:
        raise EmptyImage(f"target size must be positive, got {h}x{w}")
    hi, wi = img.shape[:2]
    if (hi, wi) == (h, w):
        return img.copy()
    ys = np.clip((np.arange(h) + 0.5) * (hi / h) - 0.5, 0.0, hi - 1.0)
    xs = np.clip((np.arange(w) + 0.5) * (wi / w) - 0.5, 0.0, wi - 1.0)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, hi - 1)
    x1 = np.minimum(x0 + 1, wi - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bottom = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(out, 0.0, 1.0).astype(img.dtype, copy=False)


def run_pipeline(img: np.ndarray, cfg: PreprocessConfig | None = None) -> tuple[np.ndarray, int]:
    """Full preprocessing chain; returns (processed image, flagged pixel count)."""
    cfg = cfg or PreprocessConfig()
    img = check_image(img)
    mask = detect_reflection(to_grayscale(img), cfg)
    n_flagged = int(mask.sum())
    if n_flagged:
        img = inpaint(img, mask)
    img = denoise(img, cfg.denoise)
    img = normalize(img, cfg.normalize)
    img = resize(img, cfg.target_size[0], cfg.target_size[1])
    return img, n_flagged
