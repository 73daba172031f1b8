"""Dense tensor kernels.

Tensors and matrices are plain ``numpy`` arrays stored as float32. Reductions
(dot products, convolution sums, the SPD factorization) accumulate in float64
and the result is rounded back to float32.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import linalg

from src.config import RIDGE_EPS
from src.errors import ShapeError, SingularityError

DTYPE = np.float32


def as_tensor(values, ndim=None, name="tensor"):
    """Return ``values`` as a float32 array, checking rank and positive dims"""
    t = np.asarray(values, dtype=DTYPE)
    if ndim is not None and t.ndim != ndim:
        raise ShapeError(f"{name} must have {ndim} dims, got shape {t.shape}")
    if t.ndim == 0 or any(d < 1 for d in t.shape):
        raise ShapeError(f"{name} dims must all be >= 1, got shape {t.shape}")
    return t


def as_matrix(values, name="matrix"):
    return as_tensor(values, ndim=2, name=name)


def output_size(size, k, stride, pad):
    """Spatial output length of a sliding window, or None if not positive"""
    if stride < 1 or pad < 0 or k < 1:
        return None
    span = size + 2 * pad - k
    if span < 0:
        return None
    return span // stride + 1


def _window_geometry(shape, kh, kw, stride, pad, what):
    _, height, width = shape
    out_h = output_size(height, kh, stride, pad)
    out_w = output_size(width, kw, stride, pad)
    if out_h is None or out_w is None:
        raise ShapeError(
            f"{what}: invalid geometry for input {tuple(shape)} with window "
            f"{kh}x{kw}, stride={stride}, pad={pad}"
        )
    return out_h, out_w


def _windows(x, kh, kw, stride, pad, fill=0.0):
    # [C, H', W', kh, kw] view of every window position
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)), constant_values=fill)
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    return windows[:, ::stride, ::stride]


def conv2d(x, kernel, bias=None, stride=1, pad=0):
    """Cross-correlate ``x`` [C_in,H,W] with ``kernel`` [C_out,C_in,kh,kw]"""
    x = as_tensor(x, ndim=3, name="conv2d input")
    kernel = as_tensor(kernel, ndim=4, name="conv2d kernel")
    c_out, c_in, kh, kw = kernel.shape
    if c_in != x.shape[0]:
        raise ShapeError(
            f"conv2d: kernel shape {kernel.shape} expects {c_in} input channels, "
            f"input shape is {x.shape}"
        )
    if bias is None:
        bias = np.zeros(c_out, dtype=DTYPE)
    bias = np.asarray(bias, dtype=DTYPE)
    if bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match kernel shape {kernel.shape}")
    out_h, out_w = _window_geometry(x.shape, kh, kw, stride, pad, "conv2d")

    windows = _windows(x.astype(np.float64), kh, kw, stride, pad)
    out = np.tensordot(kernel.astype(np.float64), windows, axes=([1, 2, 3], [0, 3, 4]))
    out += bias.astype(np.float64)[:, None, None]
    return out[:, :out_h, :out_w].astype(DTYPE)


def relu(x):
    x = np.asarray(x, dtype=DTYPE)
    return np.maximum(x, DTYPE(0))


def maxpool2d(x, k, stride=None, pad=0):
    """Window maximum; padded cells never win"""
    x = as_tensor(x, ndim=3, name="maxpool2d input")
    stride = stride or k
    out_h, out_w = _window_geometry(x.shape, k, k, stride, pad, "maxpool2d")
    windows = _windows(x, k, k, stride, pad, fill=-np.inf)
    return windows.max(axis=(3, 4))[:, :out_h, :out_w].astype(DTYPE)


def avgpool2d(x, k, stride=None, pad=0):
    """Window mean over k*k cells, zero padding included"""
    x = as_tensor(x, ndim=3, name="avgpool2d input")
    stride = stride or k
    out_h, out_w = _window_geometry(x.shape, k, k, stride, pad, "avgpool2d")
    windows = _windows(x.astype(np.float64), k, k, stride, pad)
    return (windows.sum(axis=(3, 4)) / (k * k))[:, :out_h, :out_w].astype(DTYPE)


def softmax(x):
    """Softmax over the channel axis at every spatial position"""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=0, keepdims=True)).astype(DTYPE)


def matmul(a, b):
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(DTYPE)


def transpose(a):
    return np.ascontiguousarray(as_matrix(a).T)


def ridge(a, eps=RIDGE_EPS):
    """Diagonal shift eps * trace(A) / n"""
    n = a.shape[0]
    return eps * float(np.trace(a)) / n


def solve_spd64(a, b, eps=RIDGE_EPS):
    """Solve A X = B for symmetric positive-definite A in float64"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"solve_spd: A must be square, got shape {a.shape}")
    if b.ndim not in (1, 2) or b.shape[0] != a.shape[0]:
        raise ShapeError(f"solve_spd: shapes {a.shape} and {b.shape} are not conformable")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularityError("solve_spd: non-finite values in system")

    shifted = a + ridge(a, eps) * np.eye(a.shape[0])
    try:
        factor = linalg.cho_factor(shifted, lower=False, check_finite=False)
    except linalg.LinAlgError as e:
        raise SingularityError(f"solve_spd: factorization broke down after ridge ({e})") from e
    return linalg.cho_solve(factor, b, check_finite=False)


def solve_spd(a, b, eps=RIDGE_EPS):
    a = as_matrix(a, "solve_spd A")
    b = as_matrix(b, "solve_spd B")
    return solve_spd64(a, b, eps).astype(DTYPE)
