import math

import numpy as np
import pytest

from augmem import decoder
from augmem.decoder import (
    CrossCache,
    DecoderParams,
    DecoderState,
    decode_step,
    decode_teacher_forced,
    greedy_decode,
    reset_on_eos,
    sinusoid,
)
from augmem.encoder import EncoderOutput
from augmem.errors import ContractError, PreconditionError
from augmem.model_core import BOS, EOS, PAD, init_weights

from tests.conftest import tiny_config


def enc_rows(rng, n, d):
    return EncoderOutput.from_rows(rng.standard_normal((n, d)).astype(np.float32))


def test_sinusoid_closed_form():
    v = sinusoid(0, 8)
    assert np.allclose(v, [0, 1, 0, 1, 0, 1, 0, 1])
    v = sinusoid(3, 4)
    expected = [math.sin(3), math.cos(3), math.sin(3 / 100), math.cos(3 / 100)]
    assert np.allclose(v, expected, atol=1e-6)


@pytest.mark.parametrize("length", [1, 2, 5, 17, 32])
def test_incremental_matches_full_redecode(cfg, weights, rng, length, each_backend):
    enc = enc_rows(rng, 9, cfg.d_model)
    params = DecoderParams(weights, cfg)
    state = DecoderState()
    step_logits = []
    for _ in range(length):
        _, logits, state = decode_step(state, enc, params, cfg)
        step_logits.append(logits)
    full = decode_teacher_forced(state.tokens, enc, weights, cfg)
    assert full.shape == (length, cfg.vocab_size)
    for j in range(length):
        assert np.abs(step_logits[j] - full[j]).max() < 1e-5


def test_cache_grows_one_row_per_step(cfg, weights, rng):
    enc = enc_rows(rng, 4, cfg.d_model)
    state = DecoderState()
    for i in range(1, 6):
        _, _, state = decode_step(state, enc, weights, cfg)
        assert state.cache_len == i and state.step == i + 1


def _with_fresh_cross(state):
    return DecoderState(tokens=list(state.tokens), keys=list(state.keys), values=list(state.values),
                        cross=CrossCache())


def test_cross_cache_follows_growing_encoder(cfg, weights, rng):
    rows = rng.standard_normal((12, cfg.d_model)).astype(np.float32)
    enc = EncoderOutput(cfg.d_model)
    enc.append(rows[:4])
    state = DecoderState()
    decode_step(state, enc, weights, cfg)
    enc.append(rows[4:])
    rebuilt = _with_fresh_cross(state)
    _, logits, state = decode_step(state, enc, weights, cfg)
    _, ref, _ = decode_step(rebuilt, enc, weights, cfg)
    assert state.cross.n_rows == 12
    assert np.abs(logits - ref).max() < 1e-6


def test_cross_cache_invalidated_on_replace(cfg, weights, rng):
    enc = enc_rows(rng, 6, cfg.d_model)
    state = DecoderState()
    decode_step(state, enc, weights, cfg)
    enc.replace(rng.standard_normal((6, cfg.d_model)).astype(np.float32))
    rebuilt = _with_fresh_cross(state)
    _, logits, state = decode_step(state, enc, weights, cfg)
    _, ref, _ = decode_step(rebuilt, enc, weights, cfg)
    assert np.array_equal(logits, ref)


def test_reserved_tokens_never_emitted(cfg, weights, rng):
    enc = enc_rows(rng, 5, cfg.d_model)
    state = DecoderState()
    for _ in range(30):
        tok, _, state = decode_step(state, enc, weights, cfg)
        assert tok not in (PAD, BOS)


def test_argmax_tie_breaks_low():
    logits = np.array([9.0, 9.0, 1.0, 5.0, 5.0], dtype=np.float32)
    assert decoder._select(logits) == 3


def test_empty_encoder_precondition(cfg, weights):
    with pytest.raises(PreconditionError):
        decode_step(DecoderState(), EncoderOutput(cfg.d_model), weights, cfg)


def test_reset_requires_eos():
    with pytest.raises(ContractError):
        reset_on_eos(DecoderState(tokens=[5, 6]))
    with pytest.raises(ContractError):
        reset_on_eos(DecoderState())


def test_reset_gives_sentence_independence(cfg, weights, rng):
    enc = enc_rows(rng, 7, cfg.d_model)
    params = DecoderParams(weights, cfg)
    # first sentence: force EOS after three steps
    state = DecoderState()
    for _ in range(3):
        decode_step(state, enc, params, cfg)
    state.tokens[-1] = EOS
    state = reset_on_eos(state)
    assert state.tokens == [] and state.cache_len == 0
    second, second_logits = [], []
    for _ in range(6):
        tok, logits, state = decode_step(state, enc, params, cfg)
        second.append(tok)
        second_logits.append(logits)
    fresh = DecoderState()
    for j in range(6):
        tok, logits, fresh = decode_step(fresh, enc, params, cfg)
        assert tok == second[j]
        assert np.array_equal(logits, second_logits[j])


def test_greedy_decode_ends_with_eos(rng):
    config = tiny_config(max_target_len=12)
    w = init_weights(config, 3)
    toks = greedy_decode(enc_rows(rng, 5, config.d_model), w, config)
    assert toks[-1] == EOS and 1 <= len(toks) <= 12
