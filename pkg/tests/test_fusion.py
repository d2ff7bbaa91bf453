import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lipvsr.fusion import (
    NULL,
    ScoredTranscript,
    build_wtn,
    compute_cer,
    corpus_cer,
    format_report,
    fuse_systems,
    rover_fuse,
    two_stage_fusion,
)

from oracles import edit_distance_recursive, positional_majority


def _t(text, system=""):
    return ScoredTranscript("utt", text.split(), system)


def _fuse(*texts):
    return " ".join(rover_fuse([_t(x) for x in texts]).tokens)


# --- CER --------------------------------------------------------------------


def test_cer_examples():
    assert compute_cer("abc", "abc").rate == 0.0
    axc = compute_cer("abc", "axc")
    assert axc.rate == pytest.approx(1 / 3) and axc.substitutions == 1
    abcc = compute_cer("ab", "abc")
    assert abcc.rate == pytest.approx(1 / 2) and abcc.insertions == 1
    gone = compute_cer("abc", "")
    assert gone.rate == 1.0 and gone.deletions == 3


def test_cer_empty_reference():
    c = compute_cer("", "xy")
    assert c.rate == 2.0 and c.empty_reference and c.insertions == 2
    assert compute_cer("", "").rate == 0.0


def test_cer_matches_independent_oracle():
    rng = random.Random(0)
    for _ in range(100):
        ref = [rng.choice("abcd") for _ in range(rng.randint(1, 12))]
        hyp = [rng.choice("abcd") for _ in range(rng.randint(0, 12))]
        c = compute_cer(ref, hyp)
        assert c.errors == edit_distance_recursive(ref, hyp)
        assert c.rate == edit_distance_recursive(ref, hyp) / len(ref)
        assert len(ref) - c.deletions + c.insertions == len(hyp)


@given(st.lists(st.sampled_from("abc"), min_size=1, max_size=8), st.lists(st.sampled_from("abc"), max_size=8))
def test_cer_bounds(ref, hyp):
    c = compute_cer(ref, hyp)
    assert c.rate >= 0
    assert (c.rate == 0) == (ref == hyp)


def test_corpus_cer_and_report():
    refs = {"a": list("abc"), "b": list("de")}
    hyps = {"a": list("abd"), "b": list("de")}
    rate, per = corpus_cer(refs, hyps)
    assert rate == pytest.approx(1 / 5)
    report = format_report(rate, per)
    assert report.splitlines()[-1] == "CORPUS\t0.200000\t1\t0\t0\t5"
    with pytest.raises(ValueError):
        corpus_cer(refs, {"a": []})


# --- ROVER ------------------------------------------------------------------


def test_rover_three_way():
    assert _fuse("a b c", "a x c", "a b c") == "a b c"
    wtn = build_wtn([["a", "b", "c"], ["a", "x", "c"], ["a", "b", "c"]])
    assert {k: v.votes for k, v in wtn.slots[1].items()} == {"b": 2, "x": 1}


def test_rover_singleton_and_unanimity():
    assert _fuse("a b") == "a b"
    assert _fuse("a b c", "a b c", "a b c") == "a b c"
    assert _fuse("") == ""


def test_rover_null_tie_uses_first_registration():
    wtn = build_wtn([["a", "b"], ["a", "c", "b"]])
    votes = [{k: v.votes for k, v in slot.items()} for slot in wtn.slots]
    assert votes == [{"a": 2}, {NULL: 1, "c": 1}, {"b": 2}]
    assert wtn.slots[1][NULL].rank == 0
    assert _fuse("a b", "a c b") == "a b"
    assert _fuse("a c b", "a b") == "a c b"


def test_rover_is_order_sensitive_but_deterministic():
    assert _fuse("x", "y") == "x"
    assert _fuse("y", "x") == "y"
    assert _fuse("a b", "c d", "a d") == _fuse("a b", "c d", "a d")


@given(st.lists(st.lists(st.sampled_from("abc"), max_size=6), min_size=1, max_size=5))
def test_wtn_votes_sum_to_inputs(hyps):
    wtn = build_wtn(hyps)
    for slot in wtn.slots:
        assert slot and sum(arc.votes for arc in slot.values()) == len(hyps)


def test_equal_length_fusion_is_positional_majority():
    for n, length in [(2, 3), (3, 2), (4, 2)]:
        for combo in itertools.product(itertools.product("abc", repeat=length), repeat=n):
            assert tuple(rover_fuse([ScoredTranscript("u", h) for h in combo]).tokens) == positional_majority(combo)


def test_rover_errors():
    with pytest.raises(ValueError):
        rover_fuse([])
    with pytest.raises(ValueError):
        rover_fuse([ScoredTranscript("u1", ["a"]), ScoredTranscript("u2", ["a"])])
    with pytest.raises(ValueError):
        ScoredTranscript("", ["a"])


def test_two_stage_examples():
    fuse = lambda s1, s2: " ".join(two_stage_fusion([_t(x) for x in s1], [_t(x) for x in s2]).tokens)
    assert fuse(["a b"] * 3, ["a b"] * 3) == "a b"
    assert fuse(["a", "a", "b"], ["b"]) == "a"
    assert fuse(["y", "y", "z"], ["x", "x", "x"]) == "x"
    assert two_stage_fusion([_t("a")], [_t("b")]).source_system == "R2"


def test_fuse_systems_over_corpus():
    systems = [{"u1": ["a"], "u2": ["b", "c"]}, {"u1": ["a"], "u2": ["b", "d"]}, {"u1": ["z"], "u2": ["b", "d"]}]
    assert fuse_systems(systems) == {"u1": ["a"], "u2": ["b", "d"]}
    with pytest.raises(ValueError):
        fuse_systems([{"u1": ["a"]}, {"u2": ["a"]}])
