import sys
from pathlib import Path

import numpy as np
import pytest

# Add the project root to path so we can import our modules
sys.path.insert(0, str(Path(__file__).parent))

from src.data.cifar import RECORD_BYTES
from src.model.graph import LayerSpec, ModelGraph, conv, random_weights


def make_rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def conv_chain(rng, channels=(3, 5, 4), kernel_sizes=(3, 1), size=6, relu=True):
    """conv -> relu -> conv -> ... on [channels[0], size, size] inputs"""
    layers = []
    for i, k in enumerate(kernel_sizes):
        layers.append(conv(f"conv{i + 1}", channels[i], channels[i + 1], k, pad=k // 2))
        if relu:
            layers.append(LayerSpec(f"relu{i + 1}", "relu"))
    weights = {layer.name: random_weights(layer, rng) for layer in layers if layer.is_conv}
    return ModelGraph(layers, weights, (channels[0], size, size)).validate()


def write_cifar(path, labels, seed=0):
    """Write a CIFAR-100 style binary file with random pixels"""
    rng = make_rng(seed)
    buf = bytearray()
    for coarse, fine in labels:
        buf += bytes([coarse, fine])
        buf += rng.integers(0, 256, size=RECORD_BYTES - 2, dtype=np.uint8).tobytes()
    Path(path).write_bytes(bytes(buf))
    return path


@pytest.fixture
def rng():
    return make_rng(1234)
