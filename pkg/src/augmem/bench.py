"""Timing comparison of the compiled kernels against the NumPy fallback."""

from __future__ import annotations

import time

import numpy as np

from . import backend
from .encoder import AugMemEncoder
from .io_ingest import synth_stream
from .model_core import ModelConfig, SegmentSpec, init_weights


def _best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def _kernel_cases(d_model, rows, rng):
    x = rng.standard_normal((rows, d_model)).astype(np.float32)
    w = rng.standard_normal((d_model, d_model)).astype(np.float32)
    b = rng.standard_normal(d_model).astype(np.float32)
    g = np.ones(d_model, dtype=np.float32)
    feats = rng.standard_normal((4, 4 * rows, 40)).astype(np.float32)
    cw = rng.standard_normal((8, 4 * 9)).astype(np.float32)
    cb = np.zeros(8, dtype=np.float32)
    return {
        "linear": lambda k: k.linear(x, w, b),
        "softmax_rows": lambda k: k.softmax_rows(x),
        "layer_norm_rows": lambda k: k.layer_norm_rows(x, g, b, 1e-5),
        "attention": lambda k: k.attention(x, x, x, 4, 0.125, None),
        "conv2d_s2": lambda k: k.conv2d_s2(feats, cw, cb, 0, 4 * rows, 0, 2 * rows),
    }


def _encode_stream(d_model, n_frames):
    config = ModelConfig(d_model=d_model, n_heads=4, n_enc_layers=2, n_dec_layers=1, d_ffn=4 * d_model,
                         vocab_size=16, conv_channels=4, segment=SegmentSpec(4, 8, 4))
    weights = init_weights(config, 0)
    frames = synth_stream("seeded-noise", n_frames, config.d_feat, 0).frames

    def run():
        enc = AugMemEncoder(weights, config)
        enc.feed(frames, closed=True)
        while not enc.exhausted:
            enc.step()
    return run


def compare_backends(d_model: int = 128, rows: int = 64, repeat: int = 5, stream_frames: int = 800) -> dict:
    """Best-of-``repeat`` milliseconds per kernel and for a short streaming encode."""
    rng = np.random.default_rng(0)
    cases = _kernel_cases(d_model, rows, rng)
    cases["augmem_encode"] = None
    encode = _encode_stream(d_model, stream_frames)
    result = {"d_model": d_model, "rows": rows, "backends": backend.available(), "timings_ms": {}}
    for name in backend.available():
        with backend.use_backend(name) as active:
            timings = {}
            for case, fn in cases.items():
                if fn is None:
                    timings[case] = _best_of(encode, max(1, repeat // 2))
                else:
                    timings[case] = _best_of(lambda: fn(backend.kernels), repeat)
            result["timings_ms"][active] = timings
    if "compiled" in result["timings_ms"]:
        c, p = result["timings_ms"]["compiled"], result["timings_ms"]["python"]
        result["time_ratio_python_over_compiled"] = {k: p[k] / c[k] for k in c}
    return result
