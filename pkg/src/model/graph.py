"""Model graph: an ordered chain of layers plus conv weights."""
from dataclasses import dataclass, field, replace

import numpy as np

from src.core.ops import DTYPE, output_size
from src.errors import UnknownLayerError, ValidationError

LAYER_KINDS = ("conv", "relu", "maxpool", "avgpool", "softmax")
POOL_KINDS = ("maxpool", "avgpool")


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    in_channels: int = None
    out_channels: int = None
    kernel_size: int = None
    stride: int = 1
    pad: int = 0

    @property
    def is_conv(self):
        return self.kind == "conv"

    def kernel_dims(self):
        return (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)

    def geometry(self):
        """Manifest fields describing this layer (weights excluded)"""
        entry = {"name": self.name, "kind": self.kind}
        if self.kind == "conv":
            entry.update(
                in_channels=self.in_channels,
                out_channels=self.out_channels,
                kernel_size=self.kernel_size,
                stride=self.stride,
                pad=self.pad,
            )
        elif self.kind in POOL_KINDS:
            entry.update(kernel_size=self.kernel_size, stride=self.stride, pad=self.pad)
        return entry


def conv(name, in_channels, out_channels, kernel_size, stride=1, pad=0):
    return LayerSpec(name, "conv", in_channels, out_channels, kernel_size, stride, pad)


def pool(name, kind, kernel_size, stride=None, pad=0):
    return LayerSpec(name, kind, kernel_size=kernel_size, stride=stride or kernel_size, pad=pad)


@dataclass(frozen=True)
class ModelGraph:
    layers: tuple
    weights: dict = field(default_factory=dict)
    input_dims: tuple = (3, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_dims", tuple(int(d) for d in self.input_dims))

    @property
    def names(self):
        return [layer.name for layer in self.layers]

    def index(self, name):
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise UnknownLayerError(f"unknown layer '{name}'")

    def layer(self, name):
        return self.layers[self.index(name)]

    def conv_layers(self):
        return [layer for layer in self.layers if layer.is_conv]

    def with_layers(self, layers, weights):
        """Return a new graph with replaced layers and weights, validated"""
        graph = replace(self, layers=tuple(layers), weights=dict(weights))
        graph.validate()
        return graph

    def shapes(self):
        """Symbolic output dims [C,H,W] of every layer, in order"""
        dims = self.input_dims
        out = []
        for layer in self.layers:
            dims = _propagate(layer, dims)
            out.append(dims)
        return out

    def input_shape_of(self, name):
        i = self.index(name)
        return self.input_dims if i == 0 else self.shapes()[i - 1]

    def validate(self):
        if len(self.input_dims) != 3 or any(d < 1 for d in self.input_dims):
            raise ValidationError(f"input_dims must be three positive integers, got {list(self.input_dims)}")

        seen = set()
        for layer in self.layers:
            if layer.name in seen:
                raise ValidationError(f"duplicate layer name '{layer.name}'")
            seen.add(layer.name)
            if layer.kind not in LAYER_KINDS:
                raise ValidationError(f"layer '{layer.name}': unknown kind '{layer.kind}'")

        conv_names = {layer.name for layer in self.layers if layer.is_conv}
        orphans = set(self.weights) - conv_names
        if orphans:
            raise ValidationError(f"weights without a conv layer: {sorted(orphans)}")

        for layer in self.layers:
            if not layer.is_conv:
                continue
            if layer.name not in self.weights:
                raise ValidationError(f"layer '{layer.name}': conv layer has no weights")
            kernel, bias = self.weights[layer.name]
            if tuple(kernel.shape) != layer.kernel_dims():
                raise ValidationError(
                    f"layer '{layer.name}': kernel dims {list(kernel.shape)} != {list(layer.kernel_dims())}"
                )
            if tuple(bias.shape) != (layer.out_channels,):
                raise ValidationError(
                    f"layer '{layer.name}': bias length {bias.size} != out_channels {layer.out_channels}"
                )

        # Raises ValidationError naming the offending layer
        self.shapes()
        return self


def _propagate(layer, dims):
    channels, height, width = dims
    if layer.kind == "conv":
        for attr in ("in_channels", "out_channels", "kernel_size"):
            value = getattr(layer, attr)
            if value is None or value < 1:
                raise ValidationError(f"layer '{layer.name}': {attr} must be >= 1")
        if layer.in_channels != channels:
            raise ValidationError(
                f"layer '{layer.name}': in_channels {layer.in_channels} but producer yields {channels} channels"
            )
        channels = layer.out_channels
    if layer.kind in ("conv",) + POOL_KINDS:
        out_h = output_size(height, layer.kernel_size or 0, layer.stride, layer.pad)
        out_w = output_size(width, layer.kernel_size or 0, layer.stride, layer.pad)
        if out_h is None or out_w is None:
            raise ValidationError(
                f"layer '{layer.name}': window {layer.kernel_size}, stride {layer.stride}, "
                f"pad {layer.pad} is invalid for input {height}x{width}"
            )
        height, width = out_h, out_w
    return (channels, height, width)


def capture_index(graph, name):
    """Index of the layer whose output is recorded for ``name``.

    A conv layer followed by a relu is captured after the relu.
    """
    i = graph.index(name)
    layer = graph.layers[i]
    if layer.is_conv and i + 1 < len(graph.layers) and graph.layers[i + 1].kind == "relu":
        return i + 1
    return i


def random_weights(layer, rng, scale=None):
    """He-scaled random kernel and small bias for a conv layer"""
    fan_in = layer.in_channels * layer.kernel_size * layer.kernel_size
    scale = np.sqrt(2.0 / fan_in) if scale is None else scale
    kernel = (rng.standard_normal(layer.kernel_dims()) * scale).astype(DTYPE)
    bias = (rng.standard_normal(layer.out_channels) * 0.01).astype(DTYPE)
    return kernel, bias
