"""Remove channels from a conv layer and fold the repair into its consumer."""
from dataclasses import dataclass, replace

import numpy as np

from src.core.ops import DTYPE, as_tensor, solve_spd64
from src.errors import DomainError, ShapeError, TopologyError, ValidationError
from src.model.graph import capture_index
from src.utils.logging import log_info

MODES = ("bottom", "top")

# Layers allowed between a pruned layer's captured output and its consumer:
# they act per channel and linearly, so channel mixing commutes with them.
PASS_THROUGH = ("avgpool",)


@dataclass(frozen=True)
class PruneSpec:
    layer: str
    K: int
    mode: str
    report: object

    def __post_init__(self):
        if self.mode not in MODES:
            raise DomainError(f"mode must be one of {MODES}, got '{self.mode}'")
        if self.report.layer != self.layer:
            raise DomainError(f"importance report is for '{self.report.layer}', not '{self.layer}'")
        check_k(self.K, self.report.factors.size)


@dataclass
class PruneResult:
    layer: str
    consumer: str
    kept: list
    removed: list
    V: np.ndarray
    model: object
    recon_error: float

    def summary(self, mode, lambda_rel=None, seed=None):
        return {
            "layer": self.layer,
            "K": len(self.removed),
            "mode": mode,
            "kept": [int(i) for i in self.kept],
            "recon_error": float(self.recon_error),
            "lambda_rel": lambda_rel,
            "seed": seed,
        }


def check_k(k, channels):
    if not 1 <= k < channels:
        raise DomainError(f"K must satisfy 1 <= K < {channels}, got {k}")


def select_channels(report, k, mode="bottom"):
    """Split channels into (kept, removed), both sorted ascending"""
    channels = report.ranking.size
    check_k(k, channels)
    if mode == "bottom":
        removed = report.ranking[channels - k:]
    elif mode == "top":
        removed = report.ranking[:k]
    else:
        raise DomainError(f"mode must be one of {MODES}, got '{mode}'")
    removed = sorted(int(i) for i in removed)
    kept = sorted(set(range(channels)) - set(removed))
    return kept, removed


def slice_kernel(kernel, bias, kept):
    """Keep output slices ``kept`` of a conv kernel and its bias"""
    kernel = as_tensor(kernel, ndim=4, name="kernel")
    bias = np.asarray(bias, dtype=DTYPE)
    kept = np.asarray(kept, dtype=np.intp)
    if kept.size == 0 or np.any(kept < 0) or np.any(kept >= kernel.shape[0]):
        raise DomainError(f"kept indices {kept.tolist()} out of range for {kernel.shape[0]} channels")
    if np.any(np.diff(kept) <= 0):
        raise DomainError("kept indices must be sorted and unique")
    return kernel[kept].copy(), bias[kept].copy()


def fit_reconstruction(data, kept):
    """Least-squares V minimizing ||D - D[:, kept] V||_F.

    Returns ``(V, recon_error)`` with V of shape len(kept) x C and
    recon_error the Frobenius residual relative to ||D||_F.
    """
    d = np.asarray(getattr(data, "values", data), dtype=np.float64)
    kept = list(kept)
    if d.shape[0] < len(kept):
        raise DomainError(f"data matrix has {d.shape[0]} rows, fewer than {len(kept)} kept channels")
    d_kept = d[:, kept]
    v = solve_spd64(d_kept.T @ d_kept, d_kept.T @ d)

    total = np.linalg.norm(d)
    residual = np.linalg.norm(d - d_kept @ v)
    recon_error = residual / total if total > 0 else 0.0
    return v.astype(DTYPE), float(recon_error)


def fold_upper_kernel(kernel_next, v):
    """Contract the consumer kernel's input channels with V^T"""
    kernel_next = as_tensor(kernel_next, ndim=4, name="consumer kernel")
    v = as_tensor(v, ndim=2, name="V")
    if v.shape[1] != kernel_next.shape[1]:
        raise ShapeError(
            f"fold: V shape {v.shape} does not match consumer kernel shape {kernel_next.shape}"
        )
    folded = np.einsum("oikl,ji->ojkl", kernel_next.astype(np.float64), v.astype(np.float64))
    return folded.astype(DTYPE)


def find_consumer(graph, name):
    """Name of the conv layer fed by ``name``'s captured output"""
    layer = graph.layer(name)
    if not layer.is_conv:
        raise TopologyError(f"layer '{name}' is not a conv layer")
    for following in graph.layers[capture_index(graph, name) + 1:]:
        if following.is_conv:
            return following.name
        if following.kind not in PASS_THROUGH:
            raise TopologyError(
                f"layer '{name}' has no direct conv consumer: '{following.name}' ({following.kind}) intervenes"
            )
    raise TopologyError(f"layer '{name}' has no downstream conv consumer")


def prune_layer(graph, spec, data):
    """Prune ``spec.K`` channels of ``spec.layer`` and repair its consumer"""
    layer = graph.layer(spec.layer)
    consumer_name = find_consumer(graph, spec.layer)
    if data.channels != layer.out_channels or data.layer != spec.layer:
        raise ValidationError(
            f"data matrix ({data.layer}, {data.channels} channels) does not match "
            f"layer '{spec.layer}' with {layer.out_channels} channels"
        )

    kept, removed = select_channels(spec.report, spec.K, spec.mode)
    kernel, bias = graph.weights[spec.layer]
    new_kernel, new_bias = slice_kernel(kernel, bias, kept)
    v, recon_error = fit_reconstruction(data, kept)

    consumer = graph.layer(consumer_name)
    next_kernel, next_bias = graph.weights[consumer_name]
    folded = fold_upper_kernel(next_kernel, v)

    layers = []
    for existing in graph.layers:
        if existing.name == spec.layer:
            existing = replace(existing, out_channels=len(kept))
        elif existing.name == consumer_name:
            existing = replace(consumer, in_channels=len(kept))
        layers.append(existing)
    weights = dict(graph.weights)
    weights[spec.layer] = (new_kernel, new_bias)
    weights[consumer_name] = (folded, np.array(next_bias, dtype=DTYPE))

    model = graph.with_layers(layers, weights)
    log_info(
        f"Pruned {len(removed)} {spec.mode} channels of {spec.layer} "
        f"({len(kept)} kept), folded into {consumer_name}; recon_error={recon_error:.4g}"
    )
    return PruneResult(spec.layer, consumer_name, kept, removed, v, model, recon_error)


def ablation_curve(data, report, ks):
    """Reconstruction error of bottom- vs top-ranked removal for each K"""
    rows = []
    for k in ks:
        row = {"K": int(k)}
        for mode in MODES:
            kept, _ = select_channels(report, k, mode)
            row[f"recon_error_{mode}"] = fit_reconstruction(data, kept)[1]
        rows.append(row)
    return rows
