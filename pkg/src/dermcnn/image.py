"""Image conventions and validation helpers.

An image is a ``float`` ndarray of shape ``(H, W, C)`` with ``C`` in {1, 3},
row-major, channel-interleaved, every value finite and inside ``[0, 1]``.
Grayscale masks are boolean ``(H, W)`` arrays.
"""
from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import DataError, EmptyImage, NonFiniteValue, UnsupportedChannelCount


def check_image(img: np.ndarray, channels: int | None = None, name: str = "image") -> np.ndarray:
    """Validate the (H, W, C) float contract and return the array unchanged."""
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise UnsupportedChannelCount(f"{name}: expected (H, W, C) array, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise EmptyImage(f"{name}: zero-sized image {img.shape}")
    if img.shape[2] not in (1, 3):
        raise UnsupportedChannelCount(f"{name}: channels must be 1 or 3, got {img.shape[2]}")
    if channels is not None and img.shape[2] != channels:
        raise UnsupportedChannelCount(f"{name}: expected {channels} channel(s), got {img.shape[2]}")
    if not np.issubdtype(img.dtype, np.floating):
        raise DataError(f"{name}: expected float dtype, got {img.dtype}")
    if not np.isfinite(img).all():
        raise NonFiniteValue(f"{name}: contains NaN or Inf")
    lo, hi = img.min(), img.max()
    if lo < -1e-9 or hi > 1.0 + 1e-9:
        raise DataError(f"{name}: values outside [0, 1] (min {lo}, max {hi})")
    return img


def check_grayscale(img: np.ndarray, name: str = "image") -> np.ndarray:
    from .errors import NotGrayscale

    img = check_image(img, name=name)
    if img.shape[2] != 1:
        raise NotGrayscale(f"{name}: expected single channel, got {img.shape[2]}")
    return img


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Load a JPEG/PNG (via Pillow) or a .dct tensor file as a [0,1] float image."""
    path = os.fspath(path)
    if path.endswith(".dct"):
        from .serialize import read_tensor_file

        _, arrays = read_tensor_file(path)
        img = np.asarray(next(iter(arrays.values())), dtype=np.float32)
        return check_image(img, name=path)
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    """Write a [0,1] image as an 8-bit PNG/JPEG."""
    img = check_image(img)
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    Image.fromarray(data).save(os.fspath(path))


def resolve_image_path(data_dir: str | os.PathLike, image_id: str) -> str:
    """Join data_dir/image_id with the first extension that exists (.jpg default)."""
    for ext in (".jpg", ".jpeg", ".png", ".dct"):
        candidate = os.path.join(os.fspath(data_dir), image_id + ext)
        if os.path.exists(candidate):
            return candidate
    return os.path.join(os.fspath(data_dir), image_id + ".jpg")
