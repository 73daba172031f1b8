"""CIFAR-100 binary records and image preprocessing (GCN, ZCA)."""
from collections.abc import Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import linalg

from src.config import ZCA_EPSILON_REL
from src.core.ops import DTYPE, as_tensor
from src.errors import DomainError, FormatError, NumericError
from src.utils.logging import log_debug

RECORD_BYTES = 3074
PIXEL_BYTES = 3072
IMAGE_SHAPE = (3, 32, 32)
N_COARSE = 20
N_FINE = 100
SPLITS = ("train", "test")
GCN_EPS = 1e-8


@dataclass(frozen=True)
class ImageRecord:
    coarse_label: int
    fine_label: int
    raw: np.ndarray  # uint8 [3,32,32], planar R,G,B

    @property
    def pixels(self):
        return self.raw.astype(DTYPE)


def split_path(path, split):
    """Resolve a split file: ``path`` may be the file or its directory"""
    if split not in SPLITS:
        raise DomainError(f"unknown split '{split}', expected one of {SPLITS}")
    path = Path(path)
    return path / f"{split}.bin" if path.is_dir() else path


def read_cifar100(path, split="train"):
    """Parse a CIFAR-100 binary split into ImageRecords"""
    path = split_path(path, split)
    if not path.exists():
        raise FormatError(f"CIFAR-100 file not found: {path}")
    buf = np.fromfile(path, dtype=np.uint8)
    if buf.size % RECORD_BYTES:
        position = (buf.size // RECORD_BYTES) * RECORD_BYTES
        raise FormatError(
            f"{path}: truncated record at byte {position} "
            f"(file is {buf.size} bytes, not a multiple of {RECORD_BYTES})"
        )
    table = buf.reshape(-1, RECORD_BYTES)

    bad_coarse = np.flatnonzero(table[:, 0] >= N_COARSE)
    bad_fine = np.flatnonzero(table[:, 1] >= N_FINE)
    if bad_coarse.size or bad_fine.size:
        index = int(min(np.concatenate([bad_coarse, bad_fine])))
        raise FormatError(
            f"{path}: label out of range in record {index} at byte {index * RECORD_BYTES} "
            f"(coarse={table[index, 0]}, fine={table[index, 1]})"
        )

    pixels = table[:, 2:].reshape(-1, *IMAGE_SHAPE)
    records = [
        ImageRecord(int(coarse), int(fine), image)
        for coarse, fine, image in zip(table[:, 0], table[:, 1], pixels)
    ]
    log_debug(f"Read {len(records)} {split} records from {path}")
    return records


def gcn(pixels, eps=GCN_EPS):
    """Global contrast normalization over every value of one image"""
    x = np.asarray(pixels, dtype=np.float64)
    centered = x - x.mean()
    return (centered / max(centered.std(), eps)).astype(DTYPE)


@dataclass(frozen=True)
class ZcaTransform:
    mean: np.ndarray
    whitening: np.ndarray
    epsilon: float
    shape: tuple = IMAGE_SHAPE

    @property
    def dim(self):
        return self.mean.size

    @cached_property
    def whitening64(self):
        return self.whitening.astype(np.float64)


def default_epsilon(eigenvalues, relative=ZCA_EPSILON_REL):
    return float(relative * np.mean(np.clip(eigenvalues, 0.0, None)))


def fit_zca(images, epsilon=None, relative_epsilon=ZCA_EPSILON_REL):
    """Fit W = E diag((lambda + eps)^-1/2) E^T on flattened images.

    ``epsilon`` is absolute; when omitted it is ``relative_epsilon`` times the
    mean eigenvalue of the sample covariance.
    """
    images = list(images)
    if len(images) < 2:
        raise DomainError(f"fit_zca needs at least 2 images, got {len(images)}")
    shape = tuple(np.shape(images[0]))
    x = np.stack([np.asarray(im, dtype=np.float64).reshape(-1) for im in images])
    mean = x.mean(axis=0)
    centered = x - mean
    covariance = centered.T @ centered / x.shape[0]

    try:
        eigenvalues, vectors = linalg.eigh(covariance)
    except linalg.LinAlgError as e:
        raise NumericError(f"fit_zca: eigendecomposition failed ({e})") from e
    eigenvalues = np.clip(eigenvalues, 0.0, None)
    if epsilon is None:
        epsilon = default_epsilon(eigenvalues, relative_epsilon)
    shifted = eigenvalues + epsilon
    if np.any(shifted <= 0):
        raise NumericError(f"fit_zca: covariance is singular and epsilon={epsilon} does not regularize it")

    whitening = (vectors * shifted ** -0.5) @ vectors.T
    whitening = 0.5 * (whitening + whitening.T)
    log_debug(f"Fitted ZCA on {x.shape[0]} images, d={x.shape[1]}, epsilon={epsilon:.3g}")
    return ZcaTransform(mean.astype(DTYPE), whitening.astype(DTYPE), float(epsilon), shape)


def apply_zca(transform, image):
    x = np.asarray(image, dtype=np.float64).reshape(-1)
    if x.size != transform.dim:
        raise DomainError(f"apply_zca: image has {x.size} values, transform expects {transform.dim}")
    out = transform.whitening64 @ (x - transform.mean)
    return out.reshape(np.shape(image)).astype(DTYPE)


def preprocess(pixels, zca=None):
    x = gcn(pixels)
    return apply_zca(zca, x) if zca is not None else x


class PreprocessedImages(Sequence):
    """Lazy view over records yielding GCN (+ZCA) images on access"""

    def __init__(self, records, zca=None):
        self.records = records
        self.zca = zca

    def __len__(self):
        return len(self.records)

    def __getitem__(self, index):
        if isinstance(index, slice):
            return [self[i] for i in range(*index.indices(len(self)))]
        return as_tensor(preprocess(self.records[index].pixels, self.zca), ndim=3)

    def labelled(self):
        """Iterate (image, fine_label) pairs"""
        for i, record in enumerate(self.records):
            yield self[i], record.fine_label
