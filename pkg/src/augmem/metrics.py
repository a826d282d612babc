"""Average Lagging (speech-read and computation-aware) and a small corpus BLEU."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ALInput:
    delays: tuple  # per-token delay in ms
    source_frames: int
    frame_ms: float
    ref_len: int


def _tau(delays, source_ms):
    for i, d in enumerate(delays, start=1):
        if d >= source_ms:
            return i
    return len(delays)


def average_lagging(delays, source_frames: int, frame_ms: float, ref_len: int, tau: int | None = None) -> float:
    """AL in ms.

    Averages ``d_i - (i - 1) * source_ms / ref_len`` over tokens up to tau, the
    first token emitted once the whole source (``source_frames * frame_ms``)
    has been read; tau is the last token if that never happens. An explicit
    ``tau`` overrides the cutoff found from ``delays``.
    """
    if isinstance(delays, ALInput):
        delays, source_frames, frame_ms, ref_len = delays.delays, delays.source_frames, delays.frame_ms, delays.ref_len
    delays = [float(d) for d in delays]
    if not delays:
        raise ValueError("average_lagging needs at least one delay")
    if source_frames < 1 or ref_len < 1:
        raise ValueError("source_frames and ref_len must be >= 1")
    source_ms = source_frames * frame_ms
    if tau is None:
        tau = _tau(delays, source_ms)
    elif not 1 <= tau <= len(delays):
        raise ValueError(f"tau={tau} outside 1..{len(delays)}")
    rate = source_frames / ref_len * frame_ms
    return sum(delays[i] - rate * i for i in range(tau)) / tau


@dataclass(frozen=True)
class ALReport:
    al_nca_ms: float
    al_ca_ms: float
    n_tokens: int
    source_ms: float
    bleu: float | None = None

    def as_dict(self):
        d = asdict(self)
        return {
            "AL_NCA_ms": d["al_nca_ms"],
            "AL_CA_ms": d["al_ca_ms"],
            "BLEU": d["bleu"],
            "n_tokens": d["n_tokens"],
            "source_ms": d["source_ms"],
        }


def _field(rec, name):
    return rec[name] if isinstance(rec, dict) else getattr(rec, name)


def al_report(records, source_frames: int, frame_ms: float, ref_len: int | None = None, bleu=None) -> ALReport:
    """NCA AL from ``speech_read_ms``, CA AL from ``clock_ms``; ``ref_len`` defaults to the token count.

    Both use the same tau: the first token written after the whole source was
    read, which is a property of the read schedule and not of the clock.
    """
    nca = [_field(r, "speech_read_ms") for r in records]
    ca = [_field(r, "clock_ms") for r in records]
    if not nca:
        raise ValueError("al_report needs at least one record")
    ref_len = ref_len or len(records)
    tau = _tau(nca, source_frames * frame_ms)
    return ALReport(
        al_nca_ms=average_lagging(nca, source_frames, frame_ms, ref_len, tau),
        al_ca_ms=average_lagging(ca, source_frames, frame_ms, ref_len, tau),
        n_tokens=len(records),
        source_ms=source_frames * frame_ms,
        bleu=bleu,
    )


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(hypotheses, references, max_order: int = 4) -> float:
    """Corpus BLEU in [0, 1].

    Clipped n-gram counts are pooled over the corpus.  Orders for which the
    hypotheses contain no n-grams at all are left out of the geometric mean;
    any included order with zero matches gives 0.
    """
    hypotheses, references = list(hypotheses), list(references)
    if not hypotheses:
        raise ValueError("corpus_bleu needs a non-empty corpus")
    if len(hypotheses) != len(references):
        raise ValueError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            h, r = _ngrams(hyp, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += sum(h.values())
    if hyp_len == 0:
        return 0.0
    log_p = []
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        log_p.append(math.log(m / t))
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return bp * math.exp(sum(log_p) / len(log_p))
