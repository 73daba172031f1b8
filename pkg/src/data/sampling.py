"""Activation sampling into solver data matrices."""
from dataclasses import dataclass

import numpy as np

from src.core.ops import DTYPE
from src.errors import DomainError, ShapeError, TopologyError
from src.model.forward import forward
from src.utils.logging import log_debug, log_info


def make_rng(seed):
    """The toolkit's RNG: numpy Generator over PCG64 (64-bit state)"""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class DataMatrix:
    """Activations of one layer as an (N*H*W) x C matrix.

    Row ``n*H*W + y*W + x``, column ``j`` holds channel ``j`` at (y, x) of
    sampled image ``n``.
    """

    values: np.ndarray
    layer: str
    n_images: int
    height: int
    width: int
    channels: int
    seed: int = None

    @classmethod
    def from_values(cls, values, layer="synthetic", seed=None):
        values = np.asarray(values, dtype=DTYPE)
        rows, cols = values.shape
        return cls(values, layer, rows, 1, 1, cols, seed).check()

    @property
    def rows(self):
        return self.values.shape[0]

    @property
    def cols(self):
        return self.values.shape[1]

    def check(self):
        expected = (self.n_images * self.height * self.width, self.channels)
        if self.values.ndim != 2 or self.values.shape != expected:
            raise ShapeError(f"data matrix shape {self.values.shape} does not match N*H*W x C = {expected}")
        return self

    def sidecar(self):
        return {
            "layer": self.layer,
            "N": self.n_images,
            "H": self.height,
            "W": self.width,
            "C": self.channels,
            "seed": self.seed,
        }


def activation_block(activation):
    """Reshape a captured [C,H,W] map to its (H*W) x C block"""
    c, h, w = activation.shape
    return activation.reshape(c, h * w).T


def build_data_matrix(graph, layer, images, n_sample, seed):
    """Sample ``n_sample`` images without replacement and stack activations"""
    if not graph.layer(layer).is_conv:
        raise TopologyError(f"layer '{layer}' is not a conv layer")
    if n_sample < 1 or n_sample > len(images):
        raise DomainError(f"cannot sample {n_sample} images from a set of {len(images)}")

    rng = make_rng(seed)
    picks = rng.choice(len(images), size=n_sample, replace=False)

    blocks = [None] * n_sample
    for slot, index in enumerate(picks):
        _, captured = forward(graph, images[int(index)], capture=[layer])
        blocks[slot] = activation_block(captured[layer])
        if (slot + 1) % 64 == 0:
            log_debug(f"Captured {slot + 1}/{n_sample} activations at {layer}")

    c, h, w = graph.shapes()[graph.index(layer)]
    values = np.ascontiguousarray(np.concatenate(blocks, axis=0), dtype=DTYPE)
    log_info(f"Built data matrix for {layer}: {values.shape[0]} x {values.shape[1]} from {n_sample} images")
    return DataMatrix(values, layer, n_sample, h, w, c, seed).check()
