import json
import math
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from augmem.metrics import ALInput, al_report, average_lagging, corpus_bleu

FIXTURES = Path(__file__).parent / "fixtures"


def test_al_fully_offline():
    assert average_lagging([100.0] * 5, 10, 10.0, 5) == pytest.approx(100.0, abs=1e-9)


def test_al_ideal_synchronous():
    # d_i = i * (|X|/|Y*|) * T  ->  AL = (|X|/|Y*|) * T
    x, y, t = 12, 4, 10.0
    delays = [i * x / y * t for i in range(1, y + 1)]
    assert average_lagging(delays, x, t, y) == pytest.approx(x / y * t, abs=1e-9)
    assert average_lagging([i * 10.0 for i in range(1, 7)], 6, 10.0, 6) == pytest.approx(10.0, abs=1e-9)


def test_al_hand_fixture():
    # (1/3) * (30 + (40 - 16.667) + (50 - 33.333))
    expected = (30 + (40 - 50 / 3) + (50 - 100 / 3)) / 3
    assert average_lagging([30.0, 40.0, 50.0], 5, 10.0, 3) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(23.333, abs=1e-3)


def test_al_accepts_record():
    assert average_lagging(ALInput((100.0,) * 3, 10, 10.0, 5), None, None, None) == pytest.approx(100.0)


def test_al_tau_tie_is_first_reaching_source():
    # second token reaches exactly |X|*T = 50: tau = 2, third token ignored
    assert average_lagging([10.0, 50.0, 999.0], 5, 10.0, 5) == pytest.approx((10 + 40) / 2)


def test_al_errors():
    with pytest.raises(ValueError):
        average_lagging([], 5, 10.0, 3)
    with pytest.raises(ValueError):
        average_lagging([1.0], 5, 10.0, 0)


@given(st.lists(st.floats(0, 1000), min_size=1, max_size=20), st.floats(-50, 50), st.integers(1, 30))
def test_al_translation_invariance(delays, c, ref_len):
    delays = sorted(delays)
    source_frames = 200  # 2000 ms: no token reaches the source end even after shifting
    shifted = [d + c + 100 for d in delays]
    base = [d + 100 for d in delays]
    a = average_lagging(base, source_frames, 10.0, ref_len)
    b = average_lagging(shifted, source_frames, 10.0, ref_len)
    assert b - a == pytest.approx(c, abs=1e-6)


def test_run_log_fixture():
    doc = json.loads((FIXTURES / "runlog.json").read_text())
    rep = al_report(doc["delays"], doc["run"]["source_frames"], doc["run"]["frame_shift_ms"], ref_len=4)
    # source 200 ms, rate 200/4 = 50 ms per target token
    # NCA tau = 4: (40 + (80-50) + (120-100) + (200-150)) / 4
    assert rep.al_nca_ms == pytest.approx(35.0, abs=1e-9)
    # CA tau = 4 (210 >= 200): (45.5 + (90-50) + (150-100) + (210-150)) / 4
    assert rep.al_ca_ms == pytest.approx(48.875, abs=1e-9)
    assert rep.al_ca_ms >= rep.al_nca_ms
    assert rep.n_tokens == 5 and rep.source_ms == 200.0


def test_report_default_ref_len_is_token_count():
    doc = json.loads((FIXTURES / "runlog.json").read_text())
    rep = al_report(doc["delays"], 20, 10.0)
    # rate 200/5 = 40: (40 + 40 + 40 + 80) / 4
    assert rep.al_nca_ms == pytest.approx(50.0)
    assert set(rep.as_dict()) == {"AL_NCA_ms", "AL_CA_ms", "BLEU", "n_tokens", "source_ms"}


def test_report_zero_compute_equal():
    recs = [{"speech_read_ms": d, "clock_ms": d} for d in (30.0, 60.0, 90.0)]
    rep = al_report(recs, 9, 10.0, 3)
    assert rep.al_ca_ms == rep.al_nca_ms


# -- BLEU ------------------------------------------------------------------------


def test_bleu_identity():
    assert corpus_bleu([[3, 4, 5, 6, 7]], [[3, 4, 5, 6, 7]]) == pytest.approx(1.0)


def test_bleu_empty_hypothesis():
    assert corpus_bleu([[]], [[3, 4, 5]]) == 0.0


def test_bleu_short_hypothesis_fixture():
    # "the cat" vs "the cat sat": p1 = p2 = 1, orders 3 and 4 skipped, BP = exp(1 - 3/2)
    assert corpus_bleu([["the", "cat"]], [["the", "cat", "sat"]]) == pytest.approx(0.6065, abs=1e-4)
    assert corpus_bleu([["the", "cat"]], [["the", "cat", "sat"]]) == pytest.approx(math.exp(-0.5), abs=1e-12)


def test_bleu_partial_fixture():
    # p = 4/5, 3/4, 2/3, 1/2 -> (0.2)^(1/4); equal lengths so BP = 1
    got = corpus_bleu([list("abcde")], [list("abcdf")])
    assert got == pytest.approx(0.2 ** 0.25, abs=1e-12)


def test_bleu_zero_match_order():
    assert corpus_bleu([list("abcd")], [list("abce")]) == 0.0


def test_bleu_corpus_pooling():
    # pooled counts: p1 = 4/4, p2 = 2/2, orders 3+ absent; c = 4, r = 5
    got = corpus_bleu([["a", "b"], ["c", "d"]], [["a", "b"], ["c", "d", "e"]])
    assert got == pytest.approx(math.exp(1 - 5 / 4), abs=1e-12)


def test_bleu_errors():
    with pytest.raises(ValueError):
        corpus_bleu([], [])
    with pytest.raises(ValueError):
        corpus_bleu([[1]], [[1], [2]])


@given(st.lists(st.integers(0, 5), max_size=12), st.lists(st.integers(0, 5), min_size=1, max_size=12))
def test_bleu_range(hyp, ref):
    assert 0.0 <= corpus_bleu([hyp], [ref]) <= 1.0 + 1e-12


def test_report_uses_read_schedule_tau():
    # clock reaches the source end at token 1, speech read only at token 3
    recs = [{"speech_read_ms": 100.0, "clock_ms": 300.0},
            {"speech_read_ms": 150.0, "clock_ms": 310.0},
            {"speech_read_ms": 200.0, "clock_ms": 320.0}]
    rep = al_report(recs, 20, 10.0, ref_len=4)
    # tau = 3 for both; rate 50 ms
    assert rep.al_nca_ms == pytest.approx((100 + 100 + 100) / 3, abs=1e-9)
    assert rep.al_ca_ms == pytest.approx((300 + 260 + 220) / 3, abs=1e-9)


def test_explicit_tau_bounds():
    assert average_lagging([10.0, 20.0], 5, 10.0, 2, tau=1) == 10.0
    with pytest.raises(ValueError):
        average_lagging([10.0, 20.0], 5, 10.0, 2, tau=3)


@st.composite
def run_logs(draw):
    source_frames = draw(st.integers(1, 300))
    n = draw(st.integers(1, 40))
    reads = sorted(draw(st.lists(st.integers(0, source_frames), min_size=n, max_size=n)))
    extra = draw(st.lists(st.floats(0, 500), min_size=n, max_size=n))
    recs, clock = [], 0.0
    for r, e in zip(reads, extra):
        clock = max(clock, r * 10.0) + e
        recs.append({"speech_read_ms": r * 10.0, "clock_ms": clock})
    return recs, source_frames, draw(st.one_of(st.none(), st.integers(1, 400)))


@given(run_logs())
def test_ca_never_below_nca(log):
    recs, source_frames, ref_len = log
    rep = al_report(recs, source_frames, 10.0, ref_len)
    assert rep.al_ca_ms >= rep.al_nca_ms - 1e-9
