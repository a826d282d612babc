"""NumPy implementations of the dense kernels.

Selected when the compiled ``_kernels`` extension is unavailable or when
``AUGMEM_BACKEND=python``.  Every function mirrors the signature of its
compiled twin and works on C-contiguous float32 arrays.
"""

import numpy as np

NAME = "python"


def matmul(a, b):
    return np.matmul(a, b).astype(np.float32, copy=False)


def linear(x, w, b):
    out = np.matmul(x, w)
    if b is not None:
        out += b
    return out.astype(np.float32, copy=False)


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted, dtype=np.float32)
    return (e / e.sum(axis=1, keepdims=True, dtype=np.float32)).astype(np.float32, copy=False)


def layer_norm_rows(x, gain, bias, eps):
    mean = x.mean(axis=1, keepdims=True, dtype=np.float32)
    centered = x - mean
    var = (centered * centered).mean(axis=1, keepdims=True, dtype=np.float32)
    out = centered / np.sqrt(var + np.float32(eps)) * gain + bias
    return out.astype(np.float32, copy=False)


def relu(x):
    return np.maximum(x, np.float32(0.0))


def attention(q, k, v, n_heads, scale, limits=None):
    """Multi-head scaled dot-product attention on pre-projected rows.

    ``limits[j]`` (if given) restricts query row ``j`` to keys ``[0, limits[j])``.
    """
    nq, d = q.shape
    nk = k.shape[0]
    dh = d // n_heads
    qh = q.reshape(nq, n_heads, dh).transpose(1, 0, 2)
    kh = k.reshape(nk, n_heads, dh).transpose(1, 2, 0)
    vh = v.reshape(nk, n_heads, dh).transpose(1, 0, 2)
    scores = np.matmul(qh, kh) * np.float32(scale)
    if limits is not None:
        blocked = np.arange(nk)[None, :] >= np.asarray(limits)[:, None]
        scores = np.where(blocked[None, :, :], -np.inf, scores).astype(np.float32)
    scores = scores - scores.max(axis=2, keepdims=True)
    p = np.exp(scores, dtype=np.float32)
    p /= p.sum(axis=2, keepdims=True, dtype=np.float32)
    ctx = np.matmul(p, vh)
    return np.ascontiguousarray(ctx.transpose(1, 0, 2).reshape(nq, d), dtype=np.float32)


def conv2d_s2(x, w, b, in_start, in_len, t0, t1):
    """3x3 stride-2 convolution with unit zero padding, followed by ReLU.

    ``x`` holds absolute input rows ``[in_start, in_start + x.shape[1])``; rows
    outside ``[0, in_len)`` read as zero.  Returns output rows ``[t0, t1)``.
    """
    cin, tbuf, f_in = x.shape
    cout = w.shape[0]
    f_out = (f_in + 1) // 2
    n = t1 - t0
    if n <= 0:
        return np.zeros((cout, 0, f_out), dtype=np.float32)
    lo = 2 * t0 - 1
    span = 2 * n + 1
    padded = np.zeros((cin, span, f_in + 2), dtype=np.float32)
    src_lo = max(lo, 0, in_start)
    src_hi = min(lo + span, in_len, in_start + tbuf)
    if src_hi > src_lo:
        padded[:, src_lo - lo:src_hi - lo, 1:f_in + 1] = x[:, src_lo - in_start:src_hi - in_start, :]
    w4 = w.reshape(cout, cin, 3, 3)
    out = np.zeros((cout, n, f_out), dtype=np.float32)
    for dt in range(3):
        rows = padded[:, dt:dt + 2 * n:2, :]
        for df in range(3):
            tap = rows[:, :, df:df + 2 * f_out:2]
            out += np.einsum("oc,cnf->onf", w4[:, :, dt, df], tap, dtype=np.float32)
    out += b[:, None, None]
    return np.maximum(out, np.float32(0.0))
