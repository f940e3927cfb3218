"""Parameter initialization and whole-network forward/backward passes.

Parameters are a list aligned with the spec's layers; entries for layers
without weights are empty dicts.  The backward pass fuses the sigmoid head
with binary cross-entropy, propagating dz = (p - y) / N from the head.
"""
from __future__ import annotations

import math

import numpy as np

from .. import rng
from ..errors import DermError, NonFiniteValue, ShapeMismatch
from . import ops
from .spec import Conv2D, Dense, Dropout, Flatten, MaxPool2D, ModelSpec, ReLU, SigmoidHead

Parameters = list[dict[str, np.ndarray]]


def init_params(spec: ModelSpec, seed: int, dtype=np.float32) -> Parameters:
    """He-normal weights (std = sqrt(2 / fan_in)), zero biases, seeded per layer."""
    params: Parameters = []
    shape: tuple[int, ...] = (spec.in_channels, *spec.input_hw)
    shapes = spec.layer_shapes()
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Conv2D):
            fan_in = shape[0] * layer.kernel * layer.kernel
            gen = rng.stream(seed, rng.INIT, i)
            w = gen.normal(0.0, math.sqrt(2.0 / fan_in), size=(layer.out_channels, shape[0], layer.kernel, layer.kernel))
            params.append({"w": w.astype(dtype), "b": np.zeros(layer.out_channels, dtype=dtype)})
        elif isinstance(layer, Dense):
            fan_in = shape[0]
            gen = rng.stream(seed, rng.INIT, i)
            w = gen.normal(0.0, math.sqrt(2.0 / fan_in), size=(layer.units, fan_in))
            params.append({"w": w.astype(dtype), "b": np.zeros(layer.units, dtype=dtype)})
        else:
            params.append({})
        shape = shapes[i]
    return params


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteValue(f"non-finite values in {where}")


def forward(spec: ModelSpec, params: Parameters, x: np.ndarray, mode: str = "infer", rng_seed: int = 0):
    """Run the network; returns (probabilities shaped (N,), caches for backward)."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.ndim != 4 or x.shape[1:] != (spec.in_channels, *spec.input_hw):
        raise ShapeMismatch(
            f"batch shape {x.shape} does not match spec input (N, {spec.in_channels}, "
            f"{spec.input_hw[0]}, {spec.input_hw[1]})"
        )
    training = mode == "train"
    out = x
    caches: list = []
    for i, layer in enumerate(spec.layers):
        try:
            if isinstance(layer, Conv2D):
                out, cache = ops.conv2d_forward(out, params[i]["w"], params[i]["b"], layer.stride, layer.pad)
            elif isinstance(layer, MaxPool2D):
                out, cache = ops.maxpool_forward(out, layer.size, layer.stride)
            elif isinstance(layer, Dense):
                out, cache = ops.dense_forward(out, params[i]["w"], params[i]["b"])
            elif isinstance(layer, ReLU):
                out, cache = ops.relu(out)
            elif isinstance(layer, Dropout):
                out, cache = ops.dropout(out, layer.rate, seed=_fold(rng_seed, i), training=training)
            elif isinstance(layer, Flatten):
                cache = out.shape
                out = out.reshape(out.shape[0], -1)
            elif isinstance(layer, SigmoidHead):
                out, cache = ops.sigmoid(out)
                out = np.clip(out, ops.PROB_EPS, 1.0 - ops.PROB_EPS)
            _check_finite(out, f"layer {i} ({type(layer).__name__}) output")
        except DermError as exc:
            raise type(exc)(f"layer {i} ({type(layer).__name__}): {exc}") from exc
        caches.append(cache)
    probs = out.reshape(-1)
    return probs, (spec, params, caches, probs)


def backward(cache, labels: np.ndarray):
    """Gradients of mean BCE w.r.t. every parameter tensor (same layout as params)."""
    spec, params, caches, probs = cache
    y = np.asarray(labels).reshape(-1)
    if y.shape != probs.shape:
        raise ShapeMismatch(f"labels {y.shape} do not match probabilities {probs.shape}")
    if not np.isin(y, (0, 1)).all():
        from ..errors import LabelNotBinary

        raise LabelNotBinary(f"labels must be 0/1, got {np.unique(y)[:5]}")
    n = probs.size
    grads: list[dict[str, np.ndarray]] = [{} for _ in spec.layers]
    # fused sigmoid + BCE head: d loss / d z = (p - y) / N
    dy = ((probs - y.astype(probs.dtype)) / n).reshape(n, 1).astype(probs.dtype)
    for i in range(len(spec.layers) - 2, -1, -1):
        layer = spec.layers[i]
        try:
            if isinstance(layer, Conv2D):
                dy, dw, db = ops.conv2d_backward(caches[i], dy)
                grads[i] = {"w": dw, "b": db}
            elif isinstance(layer, MaxPool2D):
                dy = ops.maxpool_backward(caches[i], dy)
            elif isinstance(layer, Dense):
                dy, dw, db = ops.dense_backward(caches[i], dy)
                grads[i] = {"w": dw, "b": db}
            elif isinstance(layer, ReLU):
                dy = ops.relu_backward(caches[i], dy)
            elif isinstance(layer, Dropout):
                dy = ops.dropout_backward(caches[i], dy)
            elif isinstance(layer, Flatten):
                dy = dy.reshape(caches[i])
            _check_finite(dy, f"layer {i} ({type(layer).__name__}) gradient")
        except DermError as exc:
            raise type(exc)(f"layer {i} ({type(layer).__name__}): {exc}") from exc
    return grads


def predict_proba(spec: ModelSpec, params: Parameters, x: np.ndarray) -> np.ndarray:
    probs, _ = forward(spec, params, x, mode="infer")
    return probs


def _fold(seed: int, layer_index: int) -> int:
    # distinct dropout stream per layer within one forward pass
    return (int(seed) * 1000003 + layer_index) & ((1 << 64) - 1)
