"""Transformer encoders over conv-subsampled features.

Three variants share one layer definition (post-norm residual blocks):

* ``AugMemEncoder`` - streaming, segment-wise attention with per-layer memory
  banks.  Only center rows of each segment are emitted, and emitted rows are
  never revisited.
* ``encode_full`` - ordinary bidirectional attention over the whole input;
  the reference the segment encoder is checked against.
* ``RecomputeEncoder`` / ``encode_unidirectional`` - causal-mask baseline that
  re-encodes the whole prefix every ``recompute_chunk`` new positions.

No positional encodings are added: temporal order comes from the conv front end.
"""

from __future__ import annotations

import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError, ShapeError
from .frontend import StreamingSubsampler
from .model_core import ModelConfig, SegmentSpec
from .numerics import attention, conv_subsample, layer_norm_rows, linear, relu

SUBSAMPLE = 4


# -- layer parameters --------------------------------------------------------


@dataclass(frozen=True)
class AttnParams:
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray

    @classmethod
    def from_weights(cls, weights, prefix):
        g = lambda p, t: weights[f"{prefix}.{p}.{t}"]  # noqa: E731
        return cls(g("q", "weight"), g("q", "bias"), g("k", "weight"), g("k", "bias"),
                   g("v", "weight"), g("v", "bias"), g("o", "weight"), g("o", "bias"))


@dataclass(frozen=True)
class EncoderLayer:
    attn: AttnParams
    norm1: tuple
    fc1: tuple
    fc2: tuple
    norm2: tuple

    @classmethod
    def from_weights(cls, weights, i):
        p = f"encoder.layers.{i}"
        return cls(
            AttnParams.from_weights(weights, f"{p}.attn"),
            (weights[f"{p}.norm1.gain"], weights[f"{p}.norm1.bias"]),
            (weights[f"{p}.ffn.fc1.weight"], weights[f"{p}.ffn.fc1.bias"]),
            (weights[f"{p}.ffn.fc2.weight"], weights[f"{p}.ffn.fc2.bias"]),
            (weights[f"{p}.norm2.gain"], weights[f"{p}.norm2.bias"]),
        )


def encoder_layers(weights, config):
    return [EncoderLayer.from_weights(weights, i) for i in range(config.n_enc_layers)]


def _block(x, ctx, layer, eps):
    """Output projection, residual + norm, feed-forward, residual + norm."""
    a = linear(ctx, layer.attn.wo, layer.attn.bo)
    h = layer_norm_rows(x + a, *layer.norm1, eps)
    f = linear(relu(linear(h, *layer.fc1)), *layer.fc2)
    return layer_norm_rows(h + f, *layer.norm2, eps)


def _scale(config_or_dhead):
    d_head = config_or_dhead if isinstance(config_or_dhead, int) else config_or_dhead.d_head
    return 1.0 / math.sqrt(d_head)


# -- segments ------------------------------------------------------------------


class _NotEnoughInput:
    def __repr__(self):
        return "NOT_ENOUGH_INPUT"

    def __bool__(self):
        return False


NOT_ENOUGH_INPUT = _NotEnoughInput()


@dataclass
class Segment:
    index: int
    left: np.ndarray
    center: np.ndarray
    right: np.ndarray
    abs_start: int
    final: bool = False

    @property
    def rows(self) -> np.ndarray:
        return np.ascontiguousarray(np.concatenate([self.left, self.center, self.right], axis=0))

    def __len__(self):
        return len(self.left) + len(self.center) + len(self.right)


def segment_stream(positions, n: int, spec: SegmentSpec, closed: bool, offset: int = 0):
    """Cut segment ``n`` out of buffered encoder-rate rows.

    ``positions`` holds absolute rows ``[offset, offset + len(positions))``.
    Returns a ``Segment``, ``NOT_ENOUGH_INPUT`` when the stream is open and the
    right context has not arrived yet, or ``None`` once a closed stream has no
    center rows left.
    """
    total = offset + len(positions)
    c0 = n * spec.center
    c1 = c0 + spec.center
    if closed:
        if c0 >= total:
            return None
    elif total < c1 + spec.right:
        return NOT_ENOUGH_INPUT
    l0 = max(0, c0 - spec.left)
    if l0 < offset:
        raise PreconditionError(f"left context for segment {n} starts at {l0}, buffer starts at {offset}")
    c1 = min(c1, total)
    r1 = min(c1 + spec.right, total)
    take = lambda a, b: positions[a - offset:b - offset]  # noqa: E731
    return Segment(n, take(l0, c0), take(c0, c1), take(c1, r1), c0, final=closed and r1 >= total and c1 >= total)


def summarize_segment(segment) -> np.ndarray:
    """Elementwise sum of every row in the segment (left, center and right)."""
    rows = segment.rows if isinstance(segment, Segment) else np.asarray(segment, dtype=np.float32)
    if len(rows) == 0:
        raise PreconditionError("cannot summarize an empty segment")
    acc = np.zeros(rows.shape[1], dtype=np.float32)
    for row in rows:
        acc += row
    return acc


# -- memory banks ----------------------------------------------------------------


class MemoryState:
    """Per-layer FIFO of memory-bank vectors, each capped at ``capacity`` (None = unbounded)."""

    def __init__(self, n_layers: int, capacity: int | None):
        self.capacity = capacity
        self.banks = [deque(maxlen=capacity) for _ in range(n_layers)]

    def layer(self, i) -> list:
        return list(self.banks[i])

    def push(self, i, bank):
        self.banks[i].append(np.asarray(bank, dtype=np.float32))

    def lengths(self):
        return [len(b) for b in self.banks]

    @property
    def retained_rows(self):
        return sum(self.lengths())


def _segment_attention(rows, memory, attn: AttnParams, n_heads):
    """Attention core over one segment.

    Queries are the segment rows followed by the summary row; keys and values
    are the memory banks followed by the segment rows.  Returns the context for
    every query row (summary last) and the key count.
    """
    sigma = summarize_segment(rows)
    q_in = np.concatenate([rows, sigma[None, :]], axis=0)
    kv_in = np.concatenate([np.stack(memory), rows], axis=0) if memory else rows
    q = linear(q_in, attn.wq, attn.bq)
    k = linear(kv_in, attn.wk, attn.bk)
    v = linear(kv_in, attn.wv, attn.bv)
    ctx = attention(q, k, v, n_heads, _scale(q.shape[1] // n_heads))
    return ctx, k.shape[0]


def augmem_attention(segment: Segment, memory, attn: AttnParams, n_heads: int):
    """Segment attention returning (center context rows, new memory bank).

    The memory bank is the attention output of the summary query.  Both
    results are pre-output-projection context vectors.
    """
    rows = segment.rows
    d = rows.shape[1]
    if d % n_heads:
        raise ShapeError(f"row width {d} is not divisible by {n_heads} heads")
    for m in memory:
        if np.shape(m) != (d,):
            raise ShapeError(f"memory bank shape {np.shape(m)} does not match row width {d}")
    ctx, _ = _segment_attention(rows, list(memory), attn, n_heads)
    lo = len(segment.left)
    return ctx[lo:lo + len(segment.center)], ctx[-1]


@dataclass
class EncoderCounters:
    segments: int = 0
    max_key_len: int = 0
    key_lens: list = field(default_factory=list)
    segment_ms: list = field(default_factory=list)
    max_retained_rows: int = 0
    recomputes: int = 0
    rows_computed: int = 0

    def as_dict(self):
        return {
            "segments": self.segments,
            "max_key_len": self.max_key_len,
            "max_retained_rows": self.max_retained_rows,
            "recomputes": self.recomputes,
            "rows_computed": self.rows_computed,
        }


def encode_segment(segment: Segment, memory: MemoryState, layers, config: ModelConfig, counters=None):
    """Run all layers over one segment.

    Each layer reads its own memory list and then appends its new bank
    (``memory`` is updated in place and also returned).  Returns the final-layer
    center rows.
    """
    x = segment.rows
    lo, n_center = len(segment.left), len(segment.center)
    for i, layer in enumerate(layers):
        ctx, n_keys = _segment_attention(x, memory.layer(i), layer.attn, config.n_heads)
        memory.push(i, ctx[-1])
        x = _block(x, np.ascontiguousarray(ctx[:-1]), layer, config.ln_eps)
        if counters is not None:
            counters.key_lens.append(n_keys)
            counters.max_key_len = max(counters.max_key_len, n_keys)
    return np.ascontiguousarray(x[lo:lo + n_center]), memory


# -- encoder output --------------------------------------------------------------


class EncoderOutput:
    """Growing matrix of encoder states.

    ``generation`` changes whenever existing rows are replaced (recompute
    encoders); append-only encoders never bump it.
    """

    def __init__(self, d_model: int):
        self._data = np.zeros((64, d_model), dtype=np.float32)
        self._n = 0
        self.generation = 0

    def __len__(self):
        return self._n

    @property
    def states(self) -> np.ndarray:
        return self._data[: self._n]

    @property
    def positions(self) -> np.ndarray:
        return np.arange(self._n)

    def rows(self, start, stop=None):
        return self._data[start: self._n if stop is None else stop]

    def append(self, rows):
        rows = np.asarray(rows, dtype=np.float32)
        need = self._n + len(rows)
        if need > len(self._data):
            grown = np.zeros((max(need, 2 * len(self._data)), self._data.shape[1]), dtype=np.float32)
            grown[: self._n] = self._data[: self._n]
            self._data = grown
        self._data[self._n:need] = rows
        self._n = need

    def replace(self, rows):
        self._n = 0
        self.append(rows)
        self.generation += 1

    @classmethod
    def from_rows(cls, rows):
        out = cls(rows.shape[1])
        out.append(rows)
        return out


# -- offline encoders ----------------------------------------------------------


def _full_layers(x, layers, config, causal):
    n = x.shape[0]
    limits = np.arange(1, n + 1) if causal else None
    for layer in layers:
        a = layer.attn
        q = linear(x, a.wq, a.bq)
        k = linear(x, a.wk, a.bk)
        v = linear(x, a.wv, a.bv)
        ctx = attention(q, k, v, config.n_heads, _scale(config), limits)
        x = _block(x, ctx, layer, config.ln_eps)
    return x


def encode_full(features, weights, config: ModelConfig) -> EncoderOutput:
    """Bidirectional encoder over the entire utterance."""
    x = conv_subsample(features, weights)
    return EncoderOutput.from_rows(_full_layers(x, encoder_layers(weights, config), config, causal=False))


def encode_unidirectional(features, weights, config: ModelConfig, recompute_chunk: int = 1):
    """Causal-mask encoder, replaying the streaming recompute schedule.

    Returns ``(EncoderOutput, EncoderCounters)``; the counters record how many
    full-prefix recomputations the streaming baseline would perform.
    """
    enc = RecomputeEncoder(weights, config, recompute_chunk, causal=True)
    frames = np.asarray(features, dtype=np.float32)
    step = SUBSAMPLE * recompute_chunk
    if len(frames) == 0:
        enc.feed(frames, closed=True)
    for start in range(0, len(frames), step):
        enc.feed(frames[start:start + step], closed=start + step >= len(frames))
        enc.step()
    while not enc.exhausted:
        enc.step()
    return enc.output, enc.counters


# -- streaming encoders ----------------------------------------------------------


class AugMemEncoder:
    """Streaming segment encoder with memory banks.

    Drive it with ``frames_wanted`` / ``feed`` / ``step``: ``frames_wanted`` is
    the total number of frames that must have been fed before the next segment
    can be encoded.
    """

    variant = "augmem"
    timer = staticmethod(time.perf_counter)

    def __init__(self, weights, config: ModelConfig):
        self.config = config
        self.spec = config.segment
        self.layers = encoder_layers(weights, config)
        self.frontend = StreamingSubsampler(weights, config)
        self.memory = MemoryState(config.n_enc_layers, config.max_memory)
        self.output = EncoderOutput(config.d_model)
        self.counters = EncoderCounters()
        self._buf = np.zeros((0, config.d_model), dtype=np.float32)
        self._buf_start = 0
        self.n_segments = 0
        self.frames_read = 0
        self.closed = False
        self.exhausted = False

    def frames_wanted(self) -> int:
        return SUBSAMPLE * ((self.n_segments + 1) * self.spec.center + self.spec.right)

    def feed(self, frames, closed=False):
        frames = np.asarray(frames, dtype=np.float32)
        self.frames_read += len(frames)
        rows = self.frontend.push(frames, closed=closed)
        if closed:
            self.closed = True
        if len(rows):
            self._buf = np.concatenate([self._buf, rows], axis=0)
        self._note_retained()

    def step(self) -> int:
        """Encode at most one segment; returns the number of rows appended."""
        seg = segment_stream(self._buf, self.n_segments, self.spec, self.closed, self._buf_start)
        if seg is None:
            self.exhausted = True
            return 0
        if seg is NOT_ENOUGH_INPUT:
            return 0
        t0 = self.timer()
        rows, _ = encode_segment(seg, self.memory, self.layers, self.config, self.counters)
        self.counters.segment_ms.append((self.timer() - t0) * 1e3)
        self.counters.segments += 1
        self.output.append(rows)
        self.n_segments += 1
        self._trim()
        if seg.final:
            self.exhausted = True
        return len(rows)

    def _trim(self):
        keep_from = max(0, self.n_segments * self.spec.center - self.spec.left)
        drop = keep_from - self._buf_start
        if drop > 0:
            self._buf = np.ascontiguousarray(self._buf[drop:])
            self._buf_start = keep_from

    def _note_retained(self):
        self.counters.max_retained_rows = max(self.counters.max_retained_rows, self.retained_rows)

    @property
    def retained_rows(self) -> int:
        """Encoder-side rows kept between segments (input carry plus memory banks)."""
        return len(self._buf) + self.memory.retained_rows


class RecomputeEncoder:
    """Prefix re-encoding baseline.

    Every ``recompute_chunk`` new encoder positions the transformer layers are
    rerun over the whole prefix (causal mask when ``causal``; plain
    bidirectional attention otherwise).  The conv front end is streamed.
    """

    timer = staticmethod(time.perf_counter)

    def __init__(self, weights, config: ModelConfig, recompute_chunk: int = 1, causal: bool = True):
        if recompute_chunk < 1:
            raise ValueError("recompute_chunk must be >= 1")
        self.config = config
        self.recompute_chunk = recompute_chunk
        self.causal = causal
        self.variant = "unidirectional" if causal else "full"
        self.layers = encoder_layers(weights, config)
        self.frontend = StreamingSubsampler(weights, config)
        self.output = EncoderOutput(config.d_model)
        self.counters = EncoderCounters()
        self._positions = np.zeros((0, config.d_model), dtype=np.float32)
        self.frames_read = 0
        self.closed = False
        self.exhausted = False

    def frames_wanted(self) -> int:
        return SUBSAMPLE * (len(self.output) + self.recompute_chunk)

    def feed(self, frames, closed=False):
        frames = np.asarray(frames, dtype=np.float32)
        self.frames_read += len(frames)
        rows = self.frontend.push(frames, closed=closed)
        if closed:
            self.closed = True
        if len(rows):
            self._positions = np.concatenate([self._positions, rows], axis=0)
        self.counters.max_retained_rows = max(self.counters.max_retained_rows, self.retained_rows)

    def step(self) -> int:
        n_have, n_avail = len(self.output), len(self._positions)
        due = n_avail - n_have >= self.recompute_chunk or (self.closed and n_avail > n_have)
        if not due:
            if self.closed:
                self.exhausted = True
            return 0
        t0 = self.timer()
        states = _full_layers(self._positions, self.layers, self.config, self.causal)
        self.counters.segment_ms.append((self.timer() - t0) * 1e3)
        self.counters.recomputes += 1
        self.counters.rows_computed += n_avail
        self.output.replace(states)
        if self.closed and len(self.output) == len(self._positions):
            self.exhausted = True
        return n_avail - n_have

    @property
    def retained_rows(self) -> int:
        return len(self._positions)


def make_stream_encoder(variant: str, weights, config: ModelConfig, recompute_chunk: int = 8):
    if variant == "augmem":
        return AugMemEncoder(weights, config)
    if variant == "unidirectional":
        return RecomputeEncoder(weights, config, recompute_chunk, causal=True)
    if variant == "full":
        return RecomputeEncoder(weights, config, recompute_chunk, causal=False)
    raise ValueError(f"unknown encoder variant {variant!r}; expected augmem, unidirectional or full")
