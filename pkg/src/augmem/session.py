"""The streaming read/write loop with a simulated real-time clock.

Frame ``j`` (1-based) of the source becomes available at ``j * frame_shift_ms``.
Whenever the encoder needs frames that have not arrived, the clock jumps to
their arrival time; every encoder and decoder call then adds its measured
compute time.  A token's speech-read delay is the number of frames consumed
when it is written times the frame shift; its computation-aware delay is the
clock value at emission.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .decoder import DecoderParams, DecoderState, decode_step, reset_on_eos
from .encoder import make_stream_encoder
from .errors import ConfigError, DimensionMismatchError
from .io_ingest import FeatureReader, FeatureStream
from .metrics import al_report
from .model_core import EOS, ModelConfig
from .policy import ChunkCursor, Decision, Policy, summarize_chunk

log = logging.getLogger(__name__)


@dataclass
class DelayRecord:
    index: int
    sentence: int
    token: int
    speech_read_ms: float
    clock_ms: float
    compute_ms: float
    capped: bool = False


class FrameSource:
    """Uniform ``read(n)`` access over an in-memory stream, a file reader or an array."""

    def __init__(self, features, frame_shift_ms=None):
        if isinstance(features, FeatureReader):
            self._reader = features
            self._frames = None
            self.n_frames = features.n_frames
            self.d_feat = features.d_feat
            self.frame_shift_ms = features.frame_shift_ms
            self.source_id = features.source_id
        else:
            if not isinstance(features, FeatureStream):
                features = FeatureStream(np.asarray(features, dtype=np.float32), frame_shift_ms or 10.0)
            self._reader = None
            self._frames = features.frames
            self.n_frames = features.n_frames
            self.d_feat = features.d_feat
            self.frame_shift_ms = features.frame_shift_ms
            self.source_id = features.source_id
        self.position = 0

    @property
    def done(self):
        return self.position >= self.n_frames

    def read(self, n):
        n = max(0, min(n, self.n_frames - self.position))
        if self._reader is not None:
            block = self._reader.read(n)
        else:
            block = self._frames[self.position:self.position + n]
        self.position += n
        return block


@dataclass
class SessionResult:
    tokens: list
    records: list
    sentences: list
    source_frames: int
    frame_shift_ms: float
    source_id: str
    variant: str
    policy: dict
    recompute_chunk: int | None
    chunk_size: int = 8
    instrumentation: dict = field(default_factory=dict)

    @property
    def source_ms(self):
        return self.source_frames * self.frame_shift_ms

    @property
    def paced_ref_len(self) -> int:
        """Target length of a system writing one token per pre-decision chunk."""
        return max(1, -(-self.instrumentation["encoder_states"] // self.chunk_size))

    def streaming_records(self):
        """Records written before the whole source had been read."""
        return [r for r in self.records if r.speech_read_ms < self.source_ms]

    def report(self, ref_len=None, bleu=None):
        return al_report(self.records, self.source_frames, self.frame_shift_ms, ref_len, bleu)

    def to_log(self, config: ModelConfig, vocab=None, report=None) -> dict:
        log_ = {
            "config": config.to_dict(),
            "run": {
                "source_id": self.source_id,
                "variant": self.variant,
                "policy": self.policy,
                "recompute_chunk": self.recompute_chunk,
                "source_frames": self.source_frames,
                "frame_shift_ms": self.frame_shift_ms,
            },
            "tokens": list(self.tokens),
            "surface": vocab.decode(self.tokens) if vocab is not None else None,
            "delays": [asdict(r) for r in self.records],
            "instrumentation": self.instrumentation,
        }
        if report is not None:
            log_["report"] = report.as_dict()
        return log_


def run_streaming(
    features,
    weights,
    config: ModelConfig,
    policy: Policy,
    *,
    variant: str = "augmem",
    recompute_chunk: int = 8,
    timer=time.perf_counter,
    decoder_params: DecoderParams | None = None,
) -> SessionResult:
    """Simultaneous translation of one stream.

    ``timer=None`` charges zero compute time, which makes the clock (and so
    the computation-aware delays) deterministic.
    """
    source = features if isinstance(features, FrameSource) else FrameSource(features)
    if source.d_feat != config.d_feat:
        raise DimensionMismatchError(f"stream {source.source_id} has d_feat={source.d_feat}, model expects {config.d_feat}")
    if config.segment.center * config.subsample_ratio < 1:
        raise ConfigError("segment center times subsample ratio must be >= 1")
    shift = source.frame_shift_ms
    enc = make_stream_encoder(variant, weights, config, recompute_chunk)
    params = decoder_params or DecoderParams(weights, config)
    z = enc.output
    tick = timer if timer is not None else (lambda: 0.0)
    enc.timer = tick

    clock = 0.0
    pending = 0.0  # compute since the last emitted token
    cursor = ChunkCursor(1, 0, config.predecision_chunk)
    state = DecoderState()
    written, sentence = 0, 0
    records, tokens, sentences = [], [], [[]]
    per_token_ms, encode_ms, decode_ms = [], 0.0, 0.0

    while True:
        # encode until the current chunk is covered (or the source runs out)
        while len(z) < cursor.end and not enc.exhausted:
            if not enc.closed:
                want = max(enc.frames_wanted() - enc.frames_read, 1)
                block = source.read(want)
                clock = max(clock, (enc.frames_read + len(block)) * shift)
                t0 = tick()
                enc.feed(block, closed=source.done)
            else:
                t0 = tick()
            enc.step()
            dt = (tick() - t0) * 1e3
            clock += dt
            pending += dt
            encode_ms += dt
        source_done = enc.exhausted and cursor.end >= len(z)

        summary = None
        if policy.needs_summary and cursor.start < len(z):
            summary = summarize_chunk(z.rows(cursor.start, min(cursor.end, len(z))))
        decision = policy.decide(cursor.k, written, summary, source_done)

        if decision is Decision.READ:
            cursor = cursor.advance()
            continue

        t0 = tick()
        token, _, state = decode_step(state, z, params, config)
        dt = (tick() - t0) * 1e3
        clock += dt
        decode_ms += dt
        capped = False
        if token != EOS and len(state.tokens) >= config.max_target_len:
            token, capped = EOS, True
            state.tokens[-1] = EOS
        written += 1
        records.append(DelayRecord(written, sentence, token, enc.frames_read * shift, clock, pending + dt, capped))
        per_token_ms.append(pending + dt)
        pending = 0.0
        tokens.append(token)
        sentences[-1].append(token)
        if token == EOS:
            if source_done:
                break
            state = reset_on_eos(state)
            sentence += 1
            sentences.append([])

    instrumentation = enc.counters.as_dict()
    instrumentation.update({
        "frames_read": enc.frames_read,
        "encoder_states": len(z),
        "encode_ms": encode_ms,
        "decode_ms": decode_ms,
        "per_token_compute_ms": per_token_ms,
        "segment_ms": list(enc.counters.segment_ms),
    })
    log.debug("session %s: %d tokens, %d sentences", source.source_id, len(tokens), len(sentences))
    return SessionResult(
        tokens=tokens,
        records=records,
        sentences=[s for s in sentences if s],
        source_frames=source.n_frames,
        frame_shift_ms=shift,
        source_id=source.source_id,
        variant=enc.variant,
        policy=policy.describe(),
        recompute_chunk=None if variant == "augmem" else recompute_chunk,
        chunk_size=config.predecision_chunk,
        instrumentation=instrumentation,
    )
