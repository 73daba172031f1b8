import numpy as np

from src.core import ops
from src.errors import DomainError, ShapeError
from src.model.graph import capture_index


def run_layer(graph, layer, x):
    """Apply one layer to activation ``x``"""
    if layer.kind == "conv":
        kernel, bias = graph.weights[layer.name]
        return ops.conv2d(x, kernel, bias, stride=layer.stride, pad=layer.pad)
    if layer.kind == "relu":
        return ops.relu(x)
    if layer.kind == "maxpool":
        return ops.maxpool2d(x, layer.kernel_size, layer.stride, layer.pad)
    if layer.kind == "avgpool":
        return ops.avgpool2d(x, layer.kernel_size, layer.stride, layer.pad)
    if layer.kind == "softmax":
        return ops.softmax(x)
    raise ShapeError(f"layer '{layer.name}': cannot execute kind '{layer.kind}'")


def forward(graph, x, capture=()):
    """Run the chain on one input.

    Returns ``(output, captured)`` where ``captured`` maps each requested
    layer name to the activation recorded for it (see ``capture_index``).
    """
    x = ops.as_tensor(x, ndim=3, name="model input")
    if tuple(x.shape) != graph.input_dims:
        raise ShapeError(f"input shape {x.shape} does not match model input_dims {graph.input_dims}")

    # Unknown names raise before any work is done
    points = {}
    for name in capture:
        points.setdefault(capture_index(graph, name), []).append(name)

    captured = {}
    for i, layer in enumerate(graph.layers):
        x = run_layer(graph, layer, x)
        for name in points.get(i, ()):
            captured[name] = x
    return x, captured


def predict(graph, x):
    """Class index with the highest score; ties go to the lowest index"""
    scores, _ = forward(graph, x)
    return int(np.argmax(scores.reshape(-1)))


def eval_classifier(graph, dataset):
    """Top-1 accuracy of ``graph`` over an iterable of (image, label)"""
    total = 0
    correct = 0
    for image, label in dataset:
        total += 1
        if predict(graph, image) == int(label):
            correct += 1
    if total == 0:
        raise DomainError("eval_classifier: dataset is empty")
    return correct / total
