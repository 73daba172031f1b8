"""NIN-style CIFAR-100 network with random weights.

Shape and cost accounting only: the weights are NOT a trained model.
Dropout is omitted (identity at inference time).
"""
import numpy as np

from src.model.graph import LayerSpec, ModelGraph, conv, pool, random_weights

DEFAULT_WIDTHS = {
    "conv1": 192,
    "cccp1": 160,
    "cccp2": 96,
    "conv2": 192,
    "cccp3": 192,
    "cccp4": 192,
    "conv3": 192,
    "cccp5": 192,
}

# The three spatial conv blocks the pruning experiments target
PRUNABLE_CONVS = ("conv1", "conv2", "conv3")


def nin_layers(num_classes=100, widths=None):
    w = dict(DEFAULT_WIDTHS, **(widths or {}))
    layers = []

    def block(name, c_in, c_out, k, pad):
        layers.append(conv(name, c_in, c_out, k, pad=pad))
        layers.append(LayerSpec(f"{name}_relu", "relu"))

    block("conv1", 3, w["conv1"], 5, 2)
    block("cccp1", w["conv1"], w["cccp1"], 1, 0)
    block("cccp2", w["cccp1"], w["cccp2"], 1, 0)
    layers.append(pool("pool1", "maxpool", 3, stride=2, pad=1))
    block("conv2", w["cccp2"], w["conv2"], 5, 2)
    block("cccp3", w["conv2"], w["cccp3"], 1, 0)
    block("cccp4", w["cccp3"], w["cccp4"], 1, 0)
    layers.append(pool("pool2", "avgpool", 3, stride=2, pad=1))
    block("conv3", w["cccp4"], w["conv3"], 3, 1)
    block("cccp5", w["conv3"], w["cccp5"], 1, 0)
    block("cccp6", w["cccp5"], num_classes, 1, 0)
    layers.append(pool("pool3", "avgpool", 8, stride=1))
    layers.append(LayerSpec("prob", "softmax"))
    return layers


def build_nin_style(num_classes=100, seed=0, widths=None):
    """Build the NIN-style chain on 3x32x32 inputs"""
    rng = np.random.Generator(np.random.PCG64(seed))
    layers = nin_layers(num_classes, widths)
    weights = {layer.name: random_weights(layer, rng) for layer in layers if layer.is_conv}
    return ModelGraph(layers, weights, (3, 32, 32)).validate()
