"""Checkpoint round-trip on top of the shared tensor container.

A checkpoint holds the model spec text, every parameter tensor, the Adam
moments, and enough bookkeeping (epoch, seed, best validation loss, global
iteration) to resume training bit-exactly.
"""
from __future__ import annotations

import os

import numpy as np

from ..errors import CorruptHeader
from ..serialize import read_tensor_file, write_tensor_file
from .adam import AdamState
from .model import Parameters
from .spec import ModelSpec, format_spec, parse_spec

_PARAM_KEY_ORDER = ("w", "b")


def _named_arrays(params: Parameters, state: AdamState) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for prefix, source in (("p", params), ("m", state.m), ("v", state.v)):
        for i, entry in enumerate(source):
            for key in _PARAM_KEY_ORDER:
                if key in entry:
                    arrays[f"{prefix}{i}.{key}"] = entry[key]
    return arrays


def save_checkpoint(
    path: str | os.PathLike,
    spec: ModelSpec,
    params: Parameters,
    state: AdamState,
    epoch: int,
    seed: int,
    extra: dict | None = None,
) -> None:
    header = {
        "kind": "checkpoint",
        "spec": format_spec(spec),
        "dtype": "float32",
        "seed": int(seed),
        "epoch": int(epoch),
        "adam": {"t": state.t, "lr": state.lr, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
        "extra": extra or {},
    }
    write_tensor_file(path, header, _named_arrays(params, state))


def load_checkpoint(path: str | os.PathLike) -> tuple[ModelSpec, Parameters, AdamState, int, dict]:
    header, arrays = read_tensor_file(path)
    if header.get("kind") != "checkpoint":
        raise CorruptHeader(f"{path}: not a checkpoint (kind={header.get('kind')!r})")
    try:
        spec = parse_spec(header["spec"])
        adam_meta = header["adam"]
        epoch = int(header["epoch"])
    except KeyError as exc:
        raise CorruptHeader(f"{path}: checkpoint header is missing {exc}") from exc

    n_layers = len(spec.layers)
    buckets: dict[str, Parameters] = {p: [{} for _ in range(n_layers)] for p in ("p", "m", "v")}
    for name, arr in arrays.items():
        try:
            tag, key = name.split(".", 1)
            prefix, idx = tag[0], int(tag[1:])
            buckets[prefix][idx][key] = arr
        except (KeyError, ValueError, IndexError) as exc:
            raise CorruptHeader(f"{path}: unexpected array name {name!r}") from exc
    state = AdamState(
        t=int(adam_meta["t"]),
        m=buckets["m"],
        v=buckets["v"],
        lr=float(adam_meta["lr"]),
        beta1=float(adam_meta["beta1"]),
        beta2=float(adam_meta["beta2"]),
        eps=float(adam_meta["eps"]),
    )
    return spec, buckets["p"], state, epoch, header.get("extra", {})
