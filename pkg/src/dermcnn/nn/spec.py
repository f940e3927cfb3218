"""Network description: an ordered list of layer specs plus the input size.

The text form is line-oriented, one layer per line::

    input h=64 w=64 c=3
    conv2d out=32 k=3 stride=1 pad=1
    relu
    maxpool2d size=2 stride=2
    flatten
    dense units=128
    dropout rate=0.5
    dense units=1
    sigmoid_head
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from ..errors import SpecInvalid


@dataclass(frozen=True)
class Conv2D:
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class MaxPool2D:
    size: int
    stride: int


@dataclass(frozen=True)
class Dense:
    units: int


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Dropout:
    rate: float


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class SigmoidHead:
    pass


LayerSpec = Conv2D | MaxPool2D | Dense | ReLU | Dropout | Flatten | SigmoidHead


@dataclass
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    input_hw: tuple[int, int] = (64, 64)
    in_channels: int = 3

    def __post_init__(self):
        self.layers = tuple(self.layers)
        self.validate()

    def validate(self) -> None:
        if len(self.layers) < 2:
            raise SpecInvalid("model needs at least a Dense(1) and a SigmoidHead")
        if not isinstance(self.layers[-1], SigmoidHead):
            raise SpecInvalid("last layer must be sigmoid_head")
        if not (isinstance(self.layers[-2], Dense) and self.layers[-2].units == 1):
            raise SpecInvalid("sigmoid_head must be preceded by dense units=1")
        self.layer_shapes()  # raises if spatial dims collapse

    def layer_shapes(self) -> list[tuple[int, ...]]:
        """Per-layer output shapes (without the batch axis) for the configured input."""
        shape: tuple[int, ...] = (self.in_channels, *self.input_hw)
        shapes = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, Conv2D):
                if len(shape) != 3:
                    raise SpecInvalid(f"layer {i}: conv2d after flatten")
                c, h, w = shape
                ho, rh = divmod(h + 2 * layer.pad - layer.kernel, layer.stride)
                wo, rw = divmod(w + 2 * layer.pad - layer.kernel, layer.stride)
                if rh or rw:
                    raise SpecInvalid(f"layer {i}: conv2d output size is not integral for input {h}x{w}")
                shape = (layer.out_channels, ho + 1, wo + 1)
            elif isinstance(layer, MaxPool2D):
                if len(shape) != 3:
                    raise SpecInvalid(f"layer {i}: maxpool2d after flatten")
                c, h, w = shape
                shape = (c, (h - layer.size) // layer.stride + 1, (w - layer.size) // layer.stride + 1)
            elif isinstance(layer, Flatten):
                shape = (int(math.prod(shape)),)
            elif isinstance(layer, Dense):
                if len(shape) != 1:
                    raise SpecInvalid(f"layer {i}: dense needs flattened input")
                shape = (layer.units,)
            elif isinstance(layer, Dropout):
                if not 0.0 <= layer.rate < 1.0:
                    raise SpecInvalid(f"layer {i}: dropout rate {layer.rate} outside [0, 1)")
            elif isinstance(layer, (ReLU, SigmoidHead)):
                pass
            if len(shape) == 3 and (shape[1] < 1 or shape[2] < 1):
                raise SpecInvalid(f"layer {i}: spatial dimensions collapsed to {shape[1]}x{shape[2]}")
            shapes.append(shape)
        return shapes


def default_spec(input_hw: tuple[int, int] = (64, 64), in_channels: int = 3) -> ModelSpec:
    """Three conv blocks, a 128-unit dense layer with dropout, sigmoid output."""
    return ModelSpec(
        layers=(
            Conv2D(32, 3, 1, 1),
            ReLU(),
            MaxPool2D(2, 2),
            Conv2D(64, 3, 1, 1),
            ReLU(),
            MaxPool2D(2, 2),
            Conv2D(128, 3, 1, 1),
            ReLU(),
            MaxPool2D(2, 2),
            Flatten(),
            Dense(128),
            ReLU(),
            Dropout(0.5),
            Dense(1),
            SigmoidHead(),
        ),
        input_hw=input_hw,
        in_channels=in_channels,
    )


def _parse_kv(tokens: list[str], line_no: int) -> dict[str, str]:
    out = {}
    for token in tokens:
        if "=" not in token:
            raise SpecInvalid(f"line {line_no}: expected key=value, got {token!r}")
        key, value = token.split("=", 1)
        out[key] = value
    return out


def parse_spec(text: str) -> ModelSpec:
    layers: list[LayerSpec] = []
    input_hw = (64, 64)
    in_channels = 3
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, *rest = line.split()
        kv = _parse_kv(rest, line_no)
        try:
            if name == "input":
                input_hw = (int(kv["h"]), int(kv["w"]))
                in_channels = int(kv.get("c", 3))
            elif name == "conv2d":
                layers.append(Conv2D(int(kv["out"]), int(kv["k"]), int(kv.get("stride", 1)), int(kv.get("pad", 0))))
            elif name == "maxpool2d":
                layers.append(MaxPool2D(int(kv["size"]), int(kv.get("stride", kv["size"]))))
            elif name == "dense":
                layers.append(Dense(int(kv["units"])))
            elif name == "relu":
                layers.append(ReLU())
            elif name == "dropout":
                layers.append(Dropout(float(kv["rate"])))
            elif name == "flatten":
                layers.append(Flatten())
            elif name == "sigmoid_head":
                layers.append(SigmoidHead())
            else:
                raise SpecInvalid(f"line {line_no}: unknown layer {name!r}")
        except KeyError as exc:
            raise SpecInvalid(f"line {line_no}: {name} is missing field {exc}") from exc
        except ValueError as exc:
            raise SpecInvalid(f"line {line_no}: {exc}") from exc
    return ModelSpec(tuple(layers), input_hw=input_hw, in_channels=in_channels)


def format_spec(spec: ModelSpec) -> str:
    lines = [f"input h={spec.input_hw[0]} w={spec.input_hw[1]} c={spec.in_channels}"]
    for layer in spec.layers:
        if isinstance(layer, Conv2D):
            lines.append(f"conv2d out={layer.out_channels} k={layer.kernel} stride={layer.stride} pad={layer.pad}")
        elif isinstance(layer, MaxPool2D):
            lines.append(f"maxpool2d size={layer.size} stride={layer.stride}")
        elif isinstance(layer, Dense):
            lines.append(f"dense units={layer.units}")
        elif isinstance(layer, ReLU):
            lines.append("relu")
        elif isinstance(layer, Dropout):
            lines.append(f"dropout rate={layer.rate}")
        elif isinstance(layer, Flatten):
            lines.append("flatten")
        elif isinstance(layer, SigmoidHead):
            lines.append("sigmoid_head")
    return "\n".join(lines) + "\n"
