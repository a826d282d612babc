"""Incremental version of the convolutional subsampling front end.

Each conv layer only emits an output row once its whole 3-row receptive
field has arrived, so rows never change after they are produced.  Closing the
stream flushes the tail with zero padding, giving exactly the rows
``numerics.conv_subsample`` computes on the full utterance.
"""

import numpy as np

from . import backend
from .errors import InsufficientFramesError, ShapeError
from .numerics import MIN_CONV_FRAMES, project_conv_output


class _ConvStage:
    """One stride-2 conv layer with a trimmed input buffer."""

    def __init__(self, weight, bias, channels_in, width):
        self.weight = weight
        self.bias = bias[0]
        self.buf = np.zeros((channels_in, 0, width), dtype=np.float32)
        self.buf_start = 0  # absolute index of buf row 0
        self.n_in = 0
        self.n_out = 0

    def push(self, rows, closed):
        """Append input rows (channels, n, width); return newly final output rows."""
        if rows.shape[1]:
            self.buf = np.concatenate([self.buf, rows], axis=1)
            self.n_in += rows.shape[1]
        ready = -(-self.n_in // 2) if closed else self.n_in // 2
        out = backend.kernels.conv2d_s2(
            self.buf, self.weight, self.bias, self.buf_start, self.n_in, self.n_out, ready
        )
        self.n_out = max(self.n_out, ready)
        # next output row reads input rows from 2*n_out - 1 onwards
        keep_from = max(0, 2 * self.n_out - 1)
        drop = keep_from - self.buf_start
        if drop > 0:
            self.buf = np.ascontiguousarray(self.buf[:, drop:, :])
            self.buf_start = keep_from
        return out

    @property
    def retained_rows(self):
        return self.buf.shape[1]


class StreamingSubsampler:
    """Feed frames in any block sizes; receive encoder-rate rows as they become final."""

    def __init__(self, weights, config):
        c = config.conv_channels
        self.d_feat = config.d_feat
        self.weights = weights
        self.stage1 = _ConvStage(weights["frontend.conv1.weight"], weights["frontend.conv1.bias"], 1, config.d_feat)
        f1 = -(-config.d_feat // 2)
        self.stage2 = _ConvStage(weights["frontend.conv2.weight"], weights["frontend.conv2.bias"], c, f1)
        self.frames_in = 0
        self.positions_out = 0
        self.closed = False

    def push(self, frames, closed=False):
        if self.closed:
            raise RuntimeError("subsampler already closed")
        frames = np.ascontiguousarray(frames, dtype=np.float32).reshape(-1, self.d_feat)
        if frames.shape[1] != self.d_feat:
            raise ShapeError(f"frame width {frames.shape[1]} != d_feat {self.d_feat}")
        self.frames_in += frames.shape[0]
        if closed:
            if self.frames_in < MIN_CONV_FRAMES:
                raise InsufficientFramesError(self.frames_in, MIN_CONV_FRAMES)
            self.closed = True
        h1 = self.stage1.push(frames.reshape(1, -1, self.d_feat), closed)
        h2 = self.stage2.push(h1, closed)
        self.positions_out += h2.shape[1]
        return project_conv_output(h2, self.weights)

    def close(self):
        return self.push(np.zeros((0, self.d_feat), dtype=np.float32), closed=True)

    @property
    def retained_rows(self):
        return self.stage1.retained_rows + self.stage2.retained_rows
