"""Feature files, vocabularies and synthetic feature streams.

Feature file layout: ``FBANK001`` magic, a one-line UTF-8 JSON header
``{"n_frames", "d_feat", "frame_shift_ms"}``, then ``n_frames * d_feat``
little-endian float32 values in row-major order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    MalformedHeaderError,
    TruncatedPayloadError,
)
from .model_core import _read_header

FEATURE_MAGIC = b"FBANK001"
RESERVED_TOKENS = ("<pad>", "<s>", "</s>")


@dataclass
class FeatureStream:
    frames: np.ndarray
    frame_shift_ms: float = 10.0
    source_id: str = "stream"

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2:
            raise DimensionMismatchError(f"frames must be 2-D (T x d_feat), got shape {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise ValueError(f"feature stream {self.source_id} contains non-finite values")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def d_feat(self):
        return self.frames.shape[1]

    @property
    def duration_ms(self):
        return self.n_frames * self.frame_shift_ms

    def check_dim(self, d_feat):
        if self.d_feat != d_feat:
            raise DimensionMismatchError(f"stream {self.source_id} has d_feat={self.d_feat}, model expects {d_feat}")


def write_features(path, stream: FeatureStream) -> None:
    header = {"n_frames": stream.n_frames, "d_feat": stream.d_feat, "frame_shift_ms": stream.frame_shift_ms}
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(stream.frames.astype("<f4", copy=False).tobytes())


def _parse_feature_header(header):
    try:
        n_frames = int(header["n_frames"])
        d_feat = int(header["d_feat"])
        shift = float(header["frame_shift_ms"])
    except (TypeError, KeyError, ValueError):
        raise MalformedHeaderError("feature header needs integer n_frames, d_feat and numeric frame_shift_ms") from None
    if n_frames < 0 or d_feat < 1 or not shift > 0:
        raise MalformedHeaderError(f"implausible feature header {header!r}")
    return n_frames, d_feat, shift


class FeatureReader:
    """Incremental reader: holds at most one block of frames in memory.

    ``max_resident_frames`` records the largest block ever materialized.
    """

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "rb")
        try:
            header = _read_header(self._fh, FEATURE_MAGIC)
            self.n_frames, self.d_feat, self.frame_shift_ms = _parse_feature_header(header)
        except Exception:
            self._fh.close()
            raise
        self._payload_start = self._fh.tell()
        self._check_size()
        self.position = 0
        self.max_resident_frames = 0
        self.source_id = self.path.stem

    def _check_size(self):
        size = self.path.stat().st_size - self._payload_start
        expected = self.n_frames * self.d_feat * 4
        if size > expected:
            raise DimensionMismatchError(
                f"{self.path}: payload has {size} bytes, header declares {self.n_frames}x{self.d_feat} float32 ({expected})"
            )

    @property
    def done(self):
        return self.position >= self.n_frames

    def read(self, n: int) -> np.ndarray:
        n = max(0, min(n, self.n_frames - self.position))
        raw = self._fh.read(n * self.d_feat * 4)
        if len(raw) != n * self.d_feat * 4:
            raise TruncatedPayloadError(
                f"{self.path}: payload ends inside frame {self.position + len(raw) // (4 * self.d_feat)}"
            )
        self.position += n
        self.max_resident_frames = max(self.max_resident_frames, n)
        return np.frombuffer(raw, dtype="<f4").astype(np.float32).reshape(n, self.d_feat)

    def __iter__(self):
        while not self.done:
            yield self.read(1)[0]

    def blocks(self, size: int):
        while not self.done:
            yield self.read(size)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def load_features(path) -> FeatureStream:
    with FeatureReader(path) as reader:
        frames = reader.read(reader.n_frames)
        return FeatureStream(frames, reader.frame_shift_ms, reader.source_id)


def synth_stream(kind: str, n_frames: int, d_feat: int = 80, seed: int = 0, frame_shift_ms: float = 10.0) -> FeatureStream:
    """Deterministic synthetic features: ``constant``, ``sine`` or ``seeded-noise``."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "constant":
        frames = np.tile(rng.standard_normal(d_feat), (n_frames, 1))
    elif kind == "sine":
        t = np.arange(n_frames)[:, None]
        f = np.arange(d_feat)[None, :]
        frames = np.sin(2 * math.pi * (t / 32 + f / d_feat))
    elif kind in ("seeded-noise", "noise"):
        frames = rng.standard_normal((n_frames, d_feat))
    else:
        raise ValueError(f"unknown synthetic stream kind {kind!r}")
    return FeatureStream(frames.astype(np.float32), frame_shift_ms, f"synth-{kind}-{n_frames}-{seed}")


class Vocab:
    """Token list with the reserved ids 0=<pad>, 1=<s>, 2=</s>."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tuple(tokens[:3]) != RESERVED_TOKENS:
            raise ValueError(f"vocabulary must start with {RESERVED_TOKENS}, got {tokens[:3]}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens = tokens
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def id(self, token):
        return self._ids[token]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    @classmethod
    def synthetic(cls, size: int) -> "Vocab":
        return cls(list(RESERVED_TOKENS) + [f"w{i}" for i in range(3, size)])

    @classmethod
    def load(cls, path) -> "Vocab":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.splitlines())

    def save(self, path):
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")
