"""Read/write policies over fixed-size chunks of encoder states."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError


class Decision(enum.Enum):
    READ = "read"
    WRITE = "write"


def waitk_decide(chunks_read: int, tokens_written: int, k: int, source_done: bool) -> Decision:
    """Wait-k over pre-decision chunks: lag the target by ``k`` chunks, then alternate."""
    if source_done or chunks_read - tokens_written >= k:
        return Decision.WRITE
    return Decision.READ


def summarize_chunk(encoder_rows) -> np.ndarray:
    """Mean of the chunk's encoder states."""
    rows = np.asarray(encoder_rows, dtype=np.float32)
    if rows.ndim != 2 or len(rows) == 0:
        raise PreconditionError("summarize_chunk needs at least one encoder row")
    return rows.mean(axis=0, dtype=np.float64).astype(np.float32)


@dataclass(frozen=True)
class ChunkCursor:
    """Chunk ``k`` (1-based) covers encoder states ``[start, end)``."""

    k: int
    start: int
    size: int

    @property
    def end(self) -> int:
        return self.start + self.size

    def advance(self) -> "ChunkCursor":
        return ChunkCursor(self.k + 1, self.end, self.size)


class Policy:
    """Interface for chunk-level policies.

    ``decide`` sees the chunk summary so content-based policies can plug in;
    its result plays the role of thresholding a write probability at 0.5.
    """

    name = "policy"
    needs_summary = False

    def decide(self, chunks_read: int, tokens_written: int, summary, source_done: bool) -> Decision:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name}


class WaitK(Policy):
    name = "waitk"

    def __init__(self, k: int):
        if k < 1:
            raise ValueError(f"wait-k needs k >= 1, got {k}")
        self.k = k

    def decide(self, chunks_read, tokens_written, summary, source_done):
        return waitk_decide(chunks_read, tokens_written, self.k, source_done)

    def describe(self):
        return {"name": self.name, "k": self.k}


class WaitUntilEnd(Policy):
    """Reads the whole source before writing anything (offline behaviour)."""

    name = "wait-inf"

    def decide(self, chunks_read, tokens_written, summary, source_done):
        return Decision.WRITE if source_done else Decision.READ


def make_policy(name: str, k: int | None = None) -> Policy:
    name = name.lower()
    if name in ("waitk", "wait-k"):
        if k is None:
            raise ValueError("waitk policy needs k")
        return WaitK(k)
    if name in ("wait-inf", "waitinf", "offline"):
        return WaitUntilEnd()
    raise ValueError(f"unknown policy {name!r}; expected waitk or wait-inf")
