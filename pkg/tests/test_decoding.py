import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from lipvsr.config import DecodeConfig
from lipvsr.decoding import (
    Hypothesis,
    attention_rescore,
    ctc_greedy_search,
    ctc_prefix_beam_search,
    read_hyp_file,
    recognize,
    rescore,
    score_with_decoders,
    write_hyp_file,
)
from lipvsr.frontend import FeatureSequence
from lipvsr.model import VSRModel

from conftest import tiny_model_config
from oracles import alignment_sums, best_label_bruteforce


def _posteriors(seed, t, v, scale=2.0):
    rng = np.random.default_rng(seed)
    return torch.log_softmax(torch.from_numpy(rng.normal(size=(t, v)) * scale), -1).numpy()


def test_one_hot_spelling():
    path = [1, 1, 0, 2]
    lp = np.full((4, 3), -1e9)
    lp[np.arange(4), path] = 0.0
    nbest = ctc_prefix_beam_search(lp, DecodeConfig(beam_size=4))
    assert nbest[0].tokens == (1, 2)
    assert nbest[0].ctc_score == pytest.approx(0.0, abs=1e-9)
    assert ctc_greedy_search(lp) == (1, 2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.integers(1, 5), v=st.integers(2, 3))
def test_full_beam_matches_enumeration(seed, t, v):
    lp = _posteriors(seed, t, v)
    nbest = ctc_prefix_beam_search(lp, DecodeConfig(beam_size=64))
    sums = alignment_sums(lp.tolist())
    label, score = best_label_bruteforce(lp.tolist())
    assert nbest[0].tokens == label
    assert abs(nbest[0].ctc_score - score) <= 1e-8 * max(1.0, abs(score))
    # every reachable label is present with its exact score
    assert len(nbest) == len(sums)
    for h in nbest:
        assert math.exp(h.ctc_score) == pytest.approx(sums[h.tokens], rel=1e-9)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.integers(1, 10), v=st.integers(2, 6))
def test_beam_one_is_greedy(seed, t, v):
    lp = _posteriors(seed, t, v)
    assert ctc_prefix_beam_search(lp, DecodeConfig(beam_size=1))[0].tokens == ctc_greedy_search(lp)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), t=st.integers(1, 5), v=st.integers(2, 3), beam=st.integers(1, 63))
def test_exact_beam_dominates_pruned_beams(seed, t, v, beam):
    lp = _posteriors(seed, t, v)
    exact = ctc_prefix_beam_search(lp, DecodeConfig(beam_size=64))[0].ctc_score
    pruned = ctc_prefix_beam_search(lp, DecodeConfig(beam_size=beam))
    assert len(pruned) <= beam
    assert pruned[0].ctc_score <= exact + 1e-12


def test_nbest_is_sorted_and_blank_free():
    nbest = ctc_prefix_beam_search(_posteriors(0, 12, 6), DecodeConfig(beam_size=10))
    scores = [h.ctc_score for h in nbest]
    assert scores == sorted(scores, reverse=True)
    assert all(0 not in h.tokens for h in nbest)
    assert len({h.tokens for h in nbest}) == len(nbest)


def test_beam_search_is_deterministic():
    lp = np.log(np.full((6, 4), 0.25))  # all ties
    a = ctc_prefix_beam_search(lp, DecodeConfig(beam_size=5))
    b = ctc_prefix_beam_search(lp, DecodeConfig(beam_size=5))
    assert a == b


def test_beam_search_rejects_empty_input():
    with pytest.raises(ValueError):
        ctc_prefix_beam_search(np.zeros((0, 3)), DecodeConfig())


# --- rescoring --------------------------------------------------------------


def test_rescore_arithmetic():
    nbest = [Hypothesis((1,), -1.0, -2.0, -2.0), Hypothesis((2,), -3.0, -1.0, -1.0)]
    best = rescore(nbest, DecodeConfig(ctc_weight=0.3, reverse_weight=0.3))
    assert best.tokens == (2,)
    assert best.final_score == pytest.approx(-1.9, abs=1e-12)


def test_rescore_with_attention_only():
    nbest = [Hypothesis((1,), -0.1, -3.0, -0.5), Hypothesis((2,), -5.0, -2.0, -9.0)]
    best = rescore(nbest, DecodeConfig(ctc_weight=0.0, reverse_weight=0.0))
    assert best.tokens == (2,)
    assert best.final_score == -2.0


def test_rescore_singleton_and_ties():
    h = Hypothesis((3, 4), -1.0, -2.0, -4.0)
    best = rescore([h], DecodeConfig(ctc_weight=0.5, reverse_weight=0.25))
    assert best.tokens == h.tokens and best.ctc_score == h.ctc_score
    assert best.final_score == pytest.approx(0.75 * -2.0 + 0.25 * -4.0 + 0.5 * -1.0)
    tied = [Hypothesis((1,), -1.0, -1.0, -1.0), Hypothesis((2,), -1.0, -1.0, -1.0)]
    assert rescore(tied, DecodeConfig()).tokens == (1,)


def test_rescore_errors():
    with pytest.raises(ValueError):
        rescore([], DecodeConfig())
    with pytest.raises(ValueError):
        rescore([Hypothesis((1,), -1.0)], DecodeConfig())


@given(
    scores=st.lists(st.tuples(*[st.integers(-50, 0)] * 3), min_size=1, max_size=8),
    shift=st.integers(-100, 100),
    cw=st.sampled_from([0.0, 0.3, 1.0]),
    rw=st.sampled_from([0.0, 0.3, 1.0]),
)
def test_rescore_invariant_to_ctc_shift(scores, shift, cw, rw):
    # integer-valued scores keep the arithmetic exact, so the comparison is not blurred by rounding
    nbest = [Hypothesis((i + 1,), float(c), float(l), float(r)) for i, (c, l, r) in enumerate(scores)]
    shifted = [Hypothesis(h.tokens, h.ctc_score + shift, h.l2r_score, h.r2l_score) for h in nbest]
    cfg = DecodeConfig(ctc_weight=cw, reverse_weight=rw)
    assert rescore(nbest, cfg).tokens == rescore(shifted, cfg).tokens


@pytest.fixture(scope="module")
def tiny_model():
    torch.manual_seed(0)
    return VSRModel(tiny_model_config(), 7).eval()


def test_decoder_scores_are_teacher_forced_sums(tiny_model):
    enc = FeatureSequence(torch.randn(1, 5, 8), torch.tensor([5]))
    nbest = [Hypothesis((1, 2, 3), -1.0), Hypothesis((4,), -2.0)]
    scored = score_with_decoders(nbest, enc, tiny_model.decoder, 6, 6)
    sos = eos = 6
    with torch.no_grad():
        for h in scored:
            ys = torch.tensor([[sos, *h.tokens]])
            lp = tiny_model.decoder.left(enc, ys)[0]
            expected = sum(lp[i, tok].item() for i, tok in enumerate([*h.tokens, eos]))
            assert h.l2r_score == pytest.approx(expected, abs=1e-5)
            rev = h.tokens[::-1]
            lp = tiny_model.decoder.right(enc, torch.tensor([[sos, *rev]]))[0]
            expected = sum(lp[i, tok].item() for i, tok in enumerate([*rev, eos]))
            assert h.r2l_score == pytest.approx(expected, abs=1e-5)
    best = attention_rescore(nbest, enc, DecodeConfig(), tiny_model.decoder, 6, 6)
    assert best.final_score is not None
    assert best.tokens in {h.tokens for h in nbest}


def test_recognize_batch(tiny_model):
    video = torch.rand(2, 6, 1, 80, 80)
    lengths = torch.tensor([6, 4])
    out = recognize(tiny_model, video, lengths, DecodeConfig(beam_size=4))
    assert len(out) == 2
    again = recognize(tiny_model, video, lengths, DecodeConfig(beam_size=4))
    assert out == again
    single = recognize(tiny_model, video[1:, :4], lengths[1:], DecodeConfig(beam_size=4))
    assert single[0].tokens == out[1].tokens


def test_hyp_file_round_trip(tmp_path):
    hyps = {"u1": ["a", "b"], "u2": [], "u3": ["c"]}
    write_hyp_file(hyps, tmp_path / "h.txt")
    assert (tmp_path / "h.txt").read_text() == "u1\ta b\nu2\t\nu3\tc\n"
    assert read_hyp_file(tmp_path / "h.txt") == hyps
    (tmp_path / "dup.txt").write_text("u1\ta\nu1\tb\n")
    with pytest.raises(ValueError, match="duplicate"):
        read_hyp_file(tmp_path / "dup.txt")
