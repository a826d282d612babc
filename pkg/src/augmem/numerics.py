"""Dense numeric kernels shared by the model modules.

A ``Matrix`` is a C-contiguous 2-D ``numpy.float32`` array.  The public
operations validate shapes and finiteness; the lower-case helpers further
down skip validation and are what the model code calls in its inner loops.
All arithmetic is dispatched to the active backend (see ``augmem.backend``).
"""

from __future__ import annotations

import numpy as np

from . import backend
from .errors import InsufficientFramesError, ShapeError

DTYPE = np.float32
SUBSAMPLE_RATIO = 4
MIN_CONV_FRAMES = SUBSAMPLE_RATIO


def as_matrix(x, name="matrix") -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=DTYPE)


def _check_finite(arr, what):
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"{what} produced non-finite values")
    return arr


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape[0]}x{a.shape[1]} @ {b.shape[0]}x{b.shape[1]}")
    return _check_finite(backend.kernels.matmul(a, b), "matmul")


def softmax_row(v) -> np.ndarray:
    """Numerically stable softmax of a single vector (max-subtracted)."""
    arr = np.ascontiguousarray(v, dtype=DTYPE).reshape(-1)
    if arr.size == 0:
        raise ValueError("softmax_row needs a non-empty vector")
    if not np.isfinite(arr).all():
        raise ValueError("softmax_row input must be finite")
    return backend.kernels.softmax_rows(arr.reshape(1, -1))[0]


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=DTYPE).reshape(-1)
    gain = np.ascontiguousarray(gain, dtype=DTYPE).reshape(-1)
    bias = np.ascontiguousarray(bias, dtype=DTYPE).reshape(-1)
    if not (x.shape == gain.shape == bias.shape):
        raise ShapeError(f"layer_norm length mismatch: x={x.shape[0]}, gain={gain.shape[0]}, bias={bias.shape[0]}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    return backend.kernels.layer_norm_rows(x.reshape(1, -1), gain, bias, eps)[0]


def subsampled_length(n_frames: int) -> int:
    """Encoder positions produced from ``n_frames`` by two same-padded stride-2 layers."""
    return -(-(-(-n_frames // 2)) // 2)


def conv_subsample(features, weights) -> np.ndarray:
    """Run the two-layer convolutional front end over a whole utterance.

    ``weights`` is any mapping holding the ``frontend.*`` tensors of a
    WeightSet.  Returns ``ceil(ceil(T/2)/2)`` rows of width ``d_model``.
    """
    feats = as_matrix(features, "features")
    t = feats.shape[0]
    if t < MIN_CONV_FRAMES:
        raise InsufficientFramesError(t, MIN_CONV_FRAMES)
    w1 = weights["frontend.conv1.weight"]
    if w1.shape[1] != 9:
        raise ShapeError(f"conv1 weight must have 9 columns per output channel, got {w1.shape}")
    k = backend.kernels
    h1 = k.conv2d_s2(feats.reshape(1, t, -1), w1, weights["frontend.conv1.bias"][0], 0, t, 0, -(-t // 2))
    t1 = h1.shape[1]
    h2 = k.conv2d_s2(h1, weights["frontend.conv2.weight"], weights["frontend.conv2.bias"][0], 0, t1, 0, -(-t1 // 2))
    out = project_conv_output(h2, weights)
    return _check_finite(out, "conv_subsample")


def project_conv_output(h2, weights) -> np.ndarray:
    """Flatten (channels, time, freq) conv output channel-major and map to d_model."""
    c, t, f = h2.shape
    flat = np.ascontiguousarray(h2.transpose(1, 0, 2).reshape(t, c * f))
    proj = weights["frontend.proj.weight"]
    if proj.shape[0] != c * f:
        raise ShapeError(f"frontend.proj expects {proj.shape[0]} inputs, conv produced {c}x{f}={c * f}")
    return backend.kernels.linear(flat, proj, weights["frontend.proj.bias"][0])


# -- unchecked helpers used by the model code ------------------------------


def linear(x, w, b=None):
    return backend.kernels.linear(x, w, None if b is None else b[0])


def relu(x):
    return backend.kernels.relu(x)


def layer_norm_rows(x, gain, bias, eps):
    return backend.kernels.layer_norm_rows(x, gain[0], bias[0], eps)


def attention(q, k, v, n_heads, scale, limits=None):
    return backend.kernels.attention(q, k, v, n_heads, scale, limits)
