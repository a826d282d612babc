import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augmem.encoder import (
    NOT_ENOUGH_INPUT,
    AttnParams,
    AugMemEncoder,
    EncoderCounters,
    EncoderOutput,
    MemoryState,
    RecomputeEncoder,
    Segment,
    augmem_attention,
    encode_full,
    encode_segment,
    encode_unidirectional,
    encoder_layers,
    make_stream_encoder,
    segment_stream,
    summarize_segment,
)
from augmem.errors import PreconditionError, ShapeError
from augmem.model_core import SegmentSpec, init_weights
from augmem.numerics import conv_subsample

from tests.conftest import tiny_config


# -- float64 oracles --------------------------------------------------------------


def mha_oracle(q_in, kv_in, attn, n_heads):
    """Multi-head scaled dot-product attention, head by head, in float64 (pre output projection)."""
    f = lambda a: np.asarray(a, dtype=np.float64)  # noqa: E731
    q = f(q_in) @ f(attn.wq) + f(attn.bq)
    k = f(kv_in) @ f(attn.wk) + f(attn.bk)
    v = f(kv_in) @ f(attn.wv) + f(attn.bv)
    d = q.shape[1]
    dh = d // n_heads
    out = np.zeros((q.shape[0], d))
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(q.shape[0]):
            s = np.array([q[i, sl] @ k[j, sl] for j in range(k.shape[0])]) / np.sqrt(dh)
            p = np.exp(s - s.max())
            p /= p.sum()
            out[i, sl] = p @ v[:, sl]
    return out


def ln64(x, g, b, eps):
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * np.asarray(g, np.float64) + np.asarray(b, np.float64)


def layer_oracle(x, layer, n_heads, eps):
    x = np.asarray(x, np.float64)
    ctx = mha_oracle(x, x, layer.attn, n_heads)
    h = ln64(x + ctx @ np.asarray(layer.attn.wo, np.float64) + layer.attn.bo, *layer.norm1, eps)
    f = np.maximum(h @ np.asarray(layer.fc1[0], np.float64) + layer.fc1[1], 0)
    f = f @ np.asarray(layer.fc2[0], np.float64) + layer.fc2[1]
    return ln64(h + f, *layer.norm2, eps)


def full_oracle(features, weights, config):
    x = conv_subsample(features, weights).astype(np.float64)
    for layer in encoder_layers(weights, config):
        x = layer_oracle(x, layer, config.n_heads, config.ln_eps)
    return x


def drive(enc, frames, block):
    for start in range(0, len(frames), block):
        chunk = frames[start:start + block]
        enc.feed(chunk, closed=start + block >= len(frames))
        while True:
            if enc.step() == 0:
                break
    while not enc.exhausted:
        enc.step()
    return enc.output.states.copy()


# -- segmentation -----------------------------------------------------------------


def test_segment_stream_closed_fixture():
    pos = np.arange(10, dtype=np.float32)[:, None]
    spec = SegmentSpec(2, 4, 2)
    segs = [segment_stream(pos, n, spec, closed=True) for n in range(3)]
    assert [s.center[:, 0].tolist() for s in segs] == [[0, 1, 2, 3], [4, 5, 6, 7], [8, 9]]
    assert segs[1].left[:, 0].tolist() == [2, 3]
    assert segs[1].right[:, 0].tolist() == [8, 9]
    assert segs[0].left.shape[0] == 0
    assert segs[2].right.shape[0] == 0 and segs[2].final
    assert segment_stream(pos, 3, spec, closed=True) is None


def test_segment_stream_not_enough_input():
    pos = np.zeros((5, 1), dtype=np.float32)
    assert segment_stream(pos, 0, SegmentSpec(2, 4, 2), closed=False) is NOT_ENOUGH_INPUT
    assert isinstance(segment_stream(np.zeros((6, 1)), 0, SegmentSpec(2, 4, 2), closed=False), Segment)


def test_segment_stream_offset_and_missing_left():
    pos = np.arange(6, dtype=np.float32)[:, None]
    seg = segment_stream(pos, 1, SegmentSpec(2, 4, 0), closed=True, offset=2)
    assert seg.left[:, 0].tolist() == [0, 1] and seg.center[:, 0].tolist() == [2, 3, 4, 5]
    with pytest.raises(PreconditionError):
        segment_stream(pos, 1, SegmentSpec(2, 4, 0), closed=True, offset=3)


@given(st.integers(1, 60), st.integers(0, 5), st.integers(1, 8), st.integers(0, 5))
def test_segments_partition_the_stream(total, left, center, right):
    pos = np.arange(total, dtype=np.float32)[:, None]
    spec = SegmentSpec(left, center, right)
    centers, n = [], 0
    while (seg := segment_stream(pos, n, spec, closed=True)) is not None:
        assert len(seg.left) <= left and len(seg.right) <= right
        assert len(seg) <= spec.span
        centers += seg.center[:, 0].tolist()
        n += 1
    assert centers == list(range(total))


# -- summary ------------------------------------------------------------------------


def test_summary_equal_rows():
    e = np.array([1.5, -2.0, 0.25], dtype=np.float32)
    assert np.array_equal(summarize_segment(np.tile(e, (7, 1))), 7 * e)


def test_summary_single_row():
    r = np.array([[3.0, 4.0]], dtype=np.float32)
    assert np.array_equal(summarize_segment(r), r[0])


def test_summary_matches_loop(rng):
    rows = rng.standard_normal((9, 5)).astype(np.float32)
    expected = [np.float32(0)] * 5
    for i in range(9):
        for j in range(5):
            expected[j] = np.float32(expected[j] + rows[i, j])
    assert summarize_segment(rows).tolist() == [float(v) for v in expected]


def test_summary_empty():
    with pytest.raises(PreconditionError):
        summarize_segment(np.zeros((0, 3), dtype=np.float32))


# -- augmented-memory attention ---------------------------------------------------


def _seg(rows, left=0, right=0):
    n = len(rows)
    return Segment(0, rows[:left], rows[left:n - right], rows[n - right:], 0)


def test_zero_query_gives_uniform_mean(weights, cfg, rng):
    attn = encoder_layers(weights, cfg)[0].attn
    attn = dataclasses.replace(attn, wq=np.zeros_like(attn.wq), bq=np.zeros_like(attn.bq))
    rows = rng.standard_normal((6, cfg.d_model)).astype(np.float32)
    center, bank = augmem_attention(_seg(rows, 1, 1), [], attn, cfg.n_heads)
    mean_v = (rows.astype(np.float64) @ attn.wv + attn.bv).mean(axis=0)
    assert np.allclose(center, np.tile(mean_v, (4, 1)), atol=1e-5)
    assert np.allclose(bank, mean_v, atol=1e-5)


def test_single_segment_equals_full_attention(weights, cfg, rng, each_backend):
    attn = encoder_layers(weights, cfg)[1].attn
    rows = rng.standard_normal((7, cfg.d_model)).astype(np.float32)
    center, _ = augmem_attention(_seg(rows), [], attn, cfg.n_heads)
    assert np.allclose(center, mha_oracle(rows, rows, attn, cfg.n_heads), atol=1e-5)


def test_memory_and_summary_oracle(weights, cfg, rng, each_backend):
    attn = encoder_layers(weights, cfg)[0].attn
    rows = rng.standard_normal((8, cfg.d_model)).astype(np.float32)
    memory = [rng.standard_normal(cfg.d_model).astype(np.float32) for _ in range(2)]
    center, bank = augmem_attention(_seg(rows, 2, 2), memory, attn, cfg.n_heads)
    q_in = np.concatenate([rows, rows.astype(np.float64).sum(axis=0)[None]])
    kv_in = np.concatenate([np.stack(memory), rows])
    ref = mha_oracle(q_in, kv_in, attn, cfg.n_heads)
    assert np.allclose(center, ref[2:6], atol=1e-5)
    assert np.allclose(bank, ref[-1], atol=1e-5)


def test_key_and_query_counts(weights, cfg, rng):
    # memory 2, L=2, C=4, R=2 -> 10 keys and 8 + 1 queries
    layers = encoder_layers(weights, cfg)
    rows = rng.standard_normal((8, cfg.d_model)).astype(np.float32)
    mem = MemoryState(cfg.n_enc_layers, None)
    for i in range(cfg.n_enc_layers):
        for _ in range(2):
            mem.push(i, np.zeros(cfg.d_model))
    counters = EncoderCounters()
    out, mem = encode_segment(_seg(rows, 2, 2), mem, layers, cfg, counters)
    assert counters.key_lens == [10, 10]
    assert out.shape == (4, cfg.d_model)
    assert mem.lengths() == [3, 3]


def test_augmem_attention_shape_errors(weights, cfg, rng):
    attn = encoder_layers(weights, cfg)[0].attn
    rows = rng.standard_normal((4, cfg.d_model)).astype(np.float32)
    with pytest.raises(ShapeError):
        augmem_attention(_seg(rows), [np.zeros(cfg.d_model + 1)], attn, cfg.n_heads)
    with pytest.raises(ShapeError):
        augmem_attention(_seg(rows), [], attn, 3)


def test_memory_fifo_cap():
    mem = MemoryState(1, 2)
    for i in range(5):
        mem.push(0, np.full(3, i))
    assert [m[0] for m in mem.layer(0)] == [3, 4]
    unbounded = MemoryState(1, None)
    for i in range(5):
        unbounded.push(0, np.zeros(3))
    assert unbounded.lengths() == [5]
    zero = MemoryState(1, 0)
    zero.push(0, np.zeros(3))
    assert zero.lengths() == [0]


# -- segment encoder -------------------------------------------------------------


def test_memory_only_affects_later_segments(rng):
    frames = rng.standard_normal((32, 12)).astype(np.float32)  # 8 positions = 2 segments of 4
    outs = {}
    for n in (0, 3):
        config = tiny_config(segment=SegmentSpec(0, 4, 0), max_memory=n)
        w = init_weights(config, 4)
        enc = AugMemEncoder(w, config)
        outs[n] = drive(enc, frames, 32)
    assert np.array_equal(outs[0][:4], outs[3][:4])
    assert not np.allclose(outs[0][4:], outs[3][4:])


def test_streaming_block_size_irrelevant(cfg, weights, rng):
    frames = rng.standard_normal((203, cfg.d_feat)).astype(np.float32)
    ref = drive(AugMemEncoder(weights, cfg), frames, len(frames))
    for block in (1, 3, 16, 50):
        assert np.array_equal(drive(AugMemEncoder(weights, cfg), frames, block), ref)


def test_segment_by_segment_replay(cfg, weights, rng):
    frames = rng.standard_normal((120, cfg.d_feat)).astype(np.float32)
    streamed = drive(AugMemEncoder(weights, cfg), frames, 7)
    x = conv_subsample(frames, weights)
    layers = encoder_layers(weights, cfg)
    mem = MemoryState(cfg.n_enc_layers, cfg.max_memory)
    rows, n = [], 0
    while (seg := segment_stream(x, n, cfg.segment, closed=True)) is not None:
        out, mem = encode_segment(seg, mem, layers, cfg)
        rows.append(out)
        n += 1
    assert np.allclose(np.concatenate(rows), streamed, atol=1e-6)


def test_emitted_rows_never_change(cfg, weights, rng):
    frames = rng.standard_normal((160, cfg.d_feat)).astype(np.float32)
    enc = AugMemEncoder(weights, cfg)
    seen = np.zeros((0, cfg.d_model), dtype=np.float32)
    for start in range(0, 160, 8):
        enc.feed(frames[start:start + 8], closed=start + 8 >= 160)
        while enc.step():
            pass
        now = enc.output.states
        assert np.array_equal(now[:len(seen)], seen)
        seen = now.copy()


def test_single_segment_matches_full_encoder(rng, each_backend):
    config = tiny_config(segment=SegmentSpec(0, 16, 0), max_memory=0)
    w = init_weights(config, 11)
    frames = rng.standard_normal((60, config.d_feat)).astype(np.float32)  # 15 positions <= C
    got = drive(AugMemEncoder(w, config), frames, 60)
    full = encode_full(frames, w, config).states
    assert np.allclose(got, full, rtol=1e-5, atol=1e-5)
    assert np.allclose(full, full_oracle(frames, w, config), atol=1e-4)


def test_encode_full_single_position(cfg, weights, rng):
    frames = rng.standard_normal((4, cfg.d_feat)).astype(np.float32)
    x = conv_subsample(frames, weights).astype(np.float64)
    for layer in encoder_layers(weights, cfg):
        a = layer.attn
        value_path = (x @ a.wv + a.bv) @ a.wo + a.bo  # one key: softmax weight 1
        h = ln64(x + value_path, *layer.norm1, cfg.ln_eps)
        f = np.maximum(h @ layer.fc1[0] + layer.fc1[1], 0) @ layer.fc2[0] + layer.fc2[1]
        x = ln64(h + f, *layer.norm2, cfg.ln_eps)
    assert np.allclose(encode_full(frames, weights, cfg).states, x, atol=1e-5)


@settings(max_examples=15)
@given(st.integers(0, 3), st.integers(1, 5), st.integers(0, 3), st.one_of(st.none(), st.integers(0, 3)),
       st.integers(20, 140))
def test_key_length_bound(left, center, right, n_mem, n_frames):
    config = tiny_config(segment=SegmentSpec(left, center, right), max_memory=n_mem)
    w = init_weights(config, 2)
    frames = np.random.default_rng(n_frames).standard_normal((n_frames, config.d_feat)).astype(np.float32)
    enc = AugMemEncoder(w, config)
    drive(enc, frames, 9)
    n_segments = enc.counters.segments
    cap = n_segments if n_mem is None else min(n_mem, n_segments)
    assert enc.counters.max_key_len <= cap + left + center + right
    assert len(enc.output) == -(-(-(-n_frames // 2)) // 2)


# -- recompute baseline ----------------------------------------------------------


def test_unidirectional_chunk_invariance(cfg, weights, rng):
    frames = rng.standard_normal((256, cfg.d_feat)).astype(np.float32)  # 64 positions
    out1, c1 = encode_unidirectional(frames, weights, cfg, 1)
    out8, c8 = encode_unidirectional(frames, weights, cfg, 8)
    assert np.allclose(out1.states, out8.states, atol=1e-6)
    assert c8.recomputes == 8
    assert c1.recomputes == 64
    assert c1.rows_computed > c8.rows_computed


def test_unidirectional_is_causal(cfg, weights, rng):
    frames = rng.standard_normal((128, cfg.d_feat)).astype(np.float32)
    other = frames.copy()
    other[100:] = rng.standard_normal((28, cfg.d_feat))
    a, _ = encode_unidirectional(frames, weights, cfg, 4)
    b, _ = encode_unidirectional(other, weights, cfg, 4)
    # position p sees frames up to 4p + 3; rows below 24 never touch frame 100+
    assert np.allclose(a.states[:24], b.states[:24], atol=1e-6)


def test_recompute_generation_bumps(cfg, weights, rng):
    enc = RecomputeEncoder(weights, cfg, 2)
    frames = rng.standard_normal((40, cfg.d_feat)).astype(np.float32)
    drive(enc, frames, 8)
    assert enc.output.generation == enc.counters.recomputes > 1


def test_full_variant_matches_offline(cfg, weights, rng):
    frames = rng.standard_normal((64, cfg.d_feat)).astype(np.float32)
    enc = make_stream_encoder("full", weights, cfg, 4)
    got = drive(enc, frames, 64)
    assert np.allclose(got, encode_full(frames, weights, cfg).states, atol=1e-6)
    with pytest.raises(ValueError):
        make_stream_encoder("bidirectional", weights, cfg)


def test_encoder_output_growth():
    out = EncoderOutput(3)
    for i in range(100):
        out.append(np.full((1, 3), i))
    assert len(out) == 100 and out.rows(98).tolist() == [[98] * 3, [99] * 3]
    out.replace(np.zeros((2, 3)))
    assert len(out) == 2 and out.generation == 1
