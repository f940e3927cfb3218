"""Occlusion-sensitivity saliency maps.

Each grid cell records how much the model's probability drops when the
corresponding input patch is replaced by a fill value, so high cells mark
regions the prediction depends on.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import PatchLargerThanImage
from .image import check_image
from .nn.model import Parameters, forward
from .nn.spec import ModelSpec


@dataclass
class SaliencyMap:
    height: int
    width: int
    values: np.ndarray  # (height, width) probability drops
    patch: int
    stride: int


def occlusion_saliency(
    model: tuple[ModelSpec, Parameters] | str | os.PathLike,
    image: np.ndarray,
    patch: int = 8,
    stride: int = 4,
    fill: float | None = None,
    batch_size: int = 64,
) -> SaliencyMap:
    """Slide a patch x patch occluder over the image (step = stride).

    ``model`` is either a (spec, params) pair or a checkpoint path.  The fill
    value defaults to the image's mean pixel.  Cell (i, j) holds
    baseline_probability - probability(image with patch at (i*stride, j*stride)
    occluded), so values lie in [-1, 1].
    """
    if not isinstance(model, tuple):
        from .nn.checkpoint import load_checkpoint

        spec, params, _, _, _ = load_checkpoint(model)
    else:
        spec, params = model
    image = check_image(image)
    h, w, c = image.shape
    if patch > min(h, w):
        raise PatchLargerThanImage(f"patch {patch} exceeds image {h}x{w}")
    if stride < 1:
        raise PatchLargerThanImage(f"stride must be >= 1, got {stride}")
    fill_value = float(image.mean()) if fill is None else float(fill)

    grid_h = (h - patch) // stride + 1
    grid_w = (w - patch) // stride + 1
    base_chw = np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32)
    baseline = float(forward(spec, params, base_chw[None], mode="infer")[0][0])

    cells = [(i, j) for i in range(grid_h) for j in range(grid_w)]
    values = np.zeros((grid_h, grid_w), dtype=np.float64)
    for lo in range(0, len(cells), batch_size):
        chunk = cells[lo:lo + batch_size]
        batch = np.repeat(base_chw[None], len(chunk), axis=0)
        for n, (i, j) in enumerate(chunk):
            y0, x0 = i * stride, j * stride
            batch[n, :, y0:y0 + patch, x0:x0 + patch] = fill_value
        probs, _ = forward(spec, params, batch, mode="infer")
        for n, (i, j) in enumerate(chunk):
            values[i, j] = baseline - float(probs[n])
    return SaliencyMap(height=grid_h, width=grid_w, values=values, patch=patch, stride=stride)


def saliency_to_image(saliency: SaliencyMap) -> np.ndarray:
    """Normalize map values to a [0, 1] grayscale (H, W, 1) image."""
    vals = saliency.values
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        return np.zeros((saliency.height, saliency.width, 1))
    return ((vals - lo) / (hi - lo))[:, :, None]


def write_saliency_csv(saliency: SaliencyMap, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# patch={saliency.patch} stride={saliency.stride}\n")
        fh.write("row,col,value\n")
        for i in range(saliency.height):
            for j in range(saliency.width):
                fh.write(f"{i},{j},{saliency.values[i, j]}\n")
