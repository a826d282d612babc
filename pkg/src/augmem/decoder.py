"""Incremental greedy transformer decoder.

Self-attention keys/values are cached per layer and cleared when a sentence
ends.  Cross-attention keys/values are projections of encoder rows; they are
extended as the encoder output grows and rebuilt only if the encoder replaced
rows it had already produced (prefix re-encoding baselines).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import AttnParams, EncoderOutput
from .errors import ContractError, PreconditionError
from .model_core import BOS, EOS, PAD, ModelConfig
from .numerics import attention, layer_norm_rows, linear, relu

# never produced by greedy search
_BLOCKED = (PAD, BOS)


def sinusoid(position: int, d_model: int) -> np.ndarray:
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = position / np.power(10000.0, i / d_model)
    pe = np.zeros(d_model, dtype=np.float64)
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle[: d_model // 2])
    return pe.astype(np.float32)


@dataclass(frozen=True)
class DecoderLayer:
    self_attn: AttnParams
    norm1: tuple
    cross_attn: AttnParams
    norm2: tuple
    fc1: tuple
    fc2: tuple
    norm3: tuple


class DecoderParams:
    """Decoder tensors pulled out of a WeightSet once per session."""

    def __init__(self, weights, config: ModelConfig):
        self.config = config
        self.embed = weights["decoder.embed.weight"]
        self.out_w = weights["decoder.out.weight"]
        self.out_b = weights["decoder.out.bias"]
        self.layers = []
        for i in range(config.n_dec_layers):
            p = f"decoder.layers.{i}"
            norm = lambda n: (weights[f"{p}.{n}.gain"], weights[f"{p}.{n}.bias"])  # noqa: E731
            self.layers.append(DecoderLayer(
                AttnParams.from_weights(weights, f"{p}.self_attn"),
                norm("norm1"),
                AttnParams.from_weights(weights, f"{p}.cross_attn"),
                norm("norm2"),
                (weights[f"{p}.ffn.fc1.weight"], weights[f"{p}.ffn.fc1.bias"]),
                (weights[f"{p}.ffn.fc2.weight"], weights[f"{p}.ffn.fc2.bias"]),
                norm("norm3"),
            ))
        self.scale = 1.0 / math.sqrt(config.d_head)
        self.embed_scale = np.float32(math.sqrt(config.d_model))

    def embed_tokens(self, tokens, start_pos=0):
        rows = [self.embed[t] * self.embed_scale + sinusoid(start_pos + j, self.config.d_model)
                for j, t in enumerate(tokens)]
        return np.ascontiguousarray(np.stack(rows), dtype=np.float32)


def _params(weights, config):
    return weights if isinstance(weights, DecoderParams) else DecoderParams(weights, config)


@dataclass
class CrossCache:
    generation: int = -1
    n_rows: int = 0
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def sync(self, params: DecoderParams, enc: EncoderOutput):
        if enc.generation != self.generation:
            self.generation, self.n_rows = enc.generation, 0
            self.keys = [np.zeros((0, params.config.d_model), np.float32) for _ in params.layers]
            self.values = [np.zeros((0, params.config.d_model), np.float32) for _ in params.layers]
        if len(enc) > self.n_rows:
            new = np.ascontiguousarray(enc.rows(self.n_rows))
            for i, layer in enumerate(params.layers):
                a = layer.cross_attn
                self.keys[i] = np.concatenate([self.keys[i], linear(new, a.wk, a.bk)])
                self.values[i] = np.concatenate([self.values[i], linear(new, a.wv, a.bv)])
            self.n_rows = len(enc)


@dataclass
class DecoderState:
    """Tokens emitted in the current sentence plus per-layer self-attention cache."""

    tokens: list = field(default_factory=list)
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)
    cross: CrossCache = field(default_factory=CrossCache)

    @property
    def step(self) -> int:
        """1-based index of the next token to generate."""
        return len(self.tokens) + 1

    @property
    def cache_len(self) -> int:
        return 0 if not self.keys else len(self.keys[0])


def _select(logits):
    masked = logits.copy()
    masked[list(_BLOCKED)] = -np.inf
    # argmax returns the lowest index among ties
    return int(np.argmax(masked))


def decode_step(state: DecoderState, encoder_states: EncoderOutput, weights, config: ModelConfig):
    """Generate one token greedily.  Returns ``(token, logits, state)``; ``state`` is updated in place."""
    if len(encoder_states) == 0:
        raise PreconditionError("decode_step needs at least one encoder state")
    p = _params(weights, config)
    state.cross.sync(p, encoder_states)
    prev = state.tokens[-1] if state.tokens else BOS
    x = p.embed_tokens([prev], start_pos=len(state.tokens))
    if not state.keys:
        state.keys = [np.zeros((0, config.d_model), np.float32) for _ in p.layers]
        state.values = [np.zeros((0, config.d_model), np.float32) for _ in p.layers]
    eps = config.ln_eps
    for i, layer in enumerate(p.layers):
        a = layer.self_attn
        q = linear(x, a.wq, a.bq)
        state.keys[i] = np.concatenate([state.keys[i], linear(x, a.wk, a.bk)])
        state.values[i] = np.concatenate([state.values[i], linear(x, a.wv, a.bv)])
        ctx = attention(q, state.keys[i], state.values[i], config.n_heads, p.scale)
        h = layer_norm_rows(x + linear(ctx, a.wo, a.bo), *layer.norm1, eps)
        c = layer.cross_attn
        qc = linear(h, c.wq, c.bq)
        ctx = attention(qc, state.cross.keys[i], state.cross.values[i], config.n_heads, p.scale)
        h = layer_norm_rows(h + linear(ctx, c.wo, c.bo), *layer.norm2, eps)
        f = linear(relu(linear(h, *layer.fc1)), *layer.fc2)
        x = layer_norm_rows(h + f, *layer.norm3, eps)
    logits = linear(x, p.out_w, p.out_b)[0]
    token = _select(logits)
    state.tokens.append(token)
    return token, logits, state


def reset_on_eos(state: DecoderState) -> DecoderState:
    """Fresh sentence state after EOS; encoder-derived cross cache is kept."""
    if not state.tokens or state.tokens[-1] != EOS:
        raise ContractError("reset_on_eos called but the last emitted token is not EOS")
    return DecoderState(cross=state.cross)


def decode_teacher_forced(tokens, encoder_states, weights, config: ModelConfig) -> np.ndarray:
    """Non-incremental decoder pass: logits for every position of ``[BOS] + tokens[:-1]``.

    Row ``j`` of the result is what ``decode_step`` should produce when it
    generates ``tokens[j]``.
    """
    p = _params(weights, config)
    z = encoder_states.states if isinstance(encoder_states, EncoderOutput) else np.asarray(encoder_states, np.float32)
    z = np.ascontiguousarray(z)
    inputs = [BOS] + list(tokens[:-1])
    x = p.embed_tokens(inputs)
    n = len(inputs)
    limits = np.arange(1, n + 1)
    eps = config.ln_eps
    for layer in p.layers:
        a = layer.self_attn
        ctx = attention(linear(x, a.wq, a.bq), linear(x, a.wk, a.bk), linear(x, a.wv, a.bv),
                        config.n_heads, p.scale, limits)
        h = layer_norm_rows(x + linear(ctx, a.wo, a.bo), *layer.norm1, eps)
        c = layer.cross_attn
        ctx = attention(linear(h, c.wq, c.bq), linear(z, c.wk, c.bk), linear(z, c.wv, c.bv),
                        config.n_heads, p.scale)
        h = layer_norm_rows(h + linear(ctx, c.wo, c.bo), *layer.norm2, eps)
        f = linear(relu(linear(h, *layer.fc1)), *layer.fc2)
        x = layer_norm_rows(h + f, *layer.norm3, eps)
    return linear(x, p.out_w, p.out_b)


def greedy_decode(encoder_states, weights, config: ModelConfig, max_len: int | None = None) -> list[int]:
    """Offline greedy translation of a fully encoded input (ends with EOS)."""
    p = _params(weights, config)
    cap = max_len or config.max_target_len
    state = DecoderState()
    while True:
        tok, _, state = decode_step(state, encoder_states, p, config)
        if tok == EOS:
            break
        if len(state.tokens) >= cap:
            state.tokens[-1] = EOS
            break
    return list(state.tokens)
