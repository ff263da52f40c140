import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsmt.features import (FEATURE_NAMES, FeatureVector, FormatError, Hypothesis, NBestList,
                            ParallelCorpus, canonical_order, feature_add, read_nbest, write_nbest)


def test_canonical_order():
    order = canonical_order()
    assert order == ["p_fe", "p_ef", "lex_fe", "lex_ef", "lm",
                     "wc", "pc", "rc", "gc", "uc", "nc"]
    assert order.index("lm") == 4
    assert len(order) == 11


def test_feature_add_identity_and_arithmetic():
    v = FeatureVector(np.arange(11) * 0.5 - 2)
    zero = FeatureVector.zeros()
    assert feature_add(zero, v) == v
    assert feature_add(v, zero) == v
    got = feature_add(FeatureVector(wc=2), FeatureVector(wc=3, lm=-1.5))
    assert got == FeatureVector(wc=5, lm=-1.5)


def test_feature_vector_rejects_wrong_size():
    with pytest.raises(ValueError):
        FeatureVector([1.0, 2.0])


def test_feature_vector_is_immutable():
    v = FeatureVector(wc=1)
    with pytest.raises(ValueError):
        v.values[0] = 3.0


def test_check_warns_but_does_not_raise(caplog):
    FeatureVector(p_fe=0.5, wc=-1).check()
    assert "p_fe" in caplog.text and "wc" in caplog.text


counts = st.integers(min_value=0, max_value=50).map(float)


@st.composite
def integral_vectors(draw):
    return FeatureVector([draw(counts) for _ in FEATURE_NAMES])


@given(integral_vectors(), integral_vectors(), integral_vectors())
def test_feature_add_exact_on_integers(a, b, c):
    assert a + b == b + a
    assert (a + b) + c == a + (b + c)


def _hyp(words, score, ev=0.0):
    return Hypothesis(tuple(words.split()), FeatureVector(wc=len(words.split())), score, ev)


def test_nbest_sorted_with_insertion_order_ties():
    nb = NBestList(0, 10)
    nb.insert(_hyp("a", 1.0))
    nb.insert(_hyp("b", 2.0))
    nb.insert(_hyp("c", 1.0))
    assert [h.surface for h in nb] == ["b", "a", "c"]


def test_nbest_dedup_keeps_higher():
    nb = NBestList(0, 10, [_hyp("a b", 1.0), _hyp("c", 0.5)])
    nb.insert(_hyp("a b", 0.2))
    assert len(nb) == 2 and nb[0].model_score == 1.0
    nb.insert(_hyp("c", 3.0))
    assert len(nb) == 2 and nb[0].surface == "c"


def test_nbest_capacity():
    nb = NBestList(0, 2, [_hyp(w, s) for w, s in [("a", 1), ("b", 3), ("c", 2)]])
    assert [h.surface for h in nb] == ["b", "c"]


@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c", "d", "e", "a b"]),
                          st.floats(-10, 10, allow_nan=False)), max_size=30),
       st.integers(1, 6))
@settings(max_examples=200)
def test_nbest_invariants(inserts, capacity):
    nb = NBestList(0, capacity)
    for words, score in inserts:
        nb.insert(_hyp(words, score))
    scores = [h.model_score for h in nb]
    assert scores == sorted(scores, reverse=True)
    assert len({h.tokens for h in nb}) == len(nb) <= capacity


def test_with_evals_keeps_order():
    nb = NBestList(3, 5, [_hyp("a", 2), _hyp("b", 1)])
    nb2 = nb.with_evals([0.1, 0.9])
    assert [h.eval_score for h in nb2] == [0.1, 0.9]
    assert [h.surface for h in nb2] == ["a", "b"]


def test_nbest_file_round_trip():
    rng = np.random.default_rng(0)
    lists = []
    for sid in range(3):
        hyps = [Hypothesis((f"w{sid}", f"x{i}"), FeatureVector(rng.normal(size=11)),
                           float(rng.normal())) for i in range(4)]
        lists.append(NBestList(sid, 4, hyps))
    buf = io.StringIO()
    write_nbest(buf, lists)
    text = buf.getvalue()
    assert text.endswith("\n")
    first = text.splitlines()[0].split(" ||| ")
    assert len(first) == 4 and len(first[2].split()) == 11
    back = read_nbest(io.StringIO(text))
    for a, b in zip(lists, back):
        assert a.source_id == b.source_id
        for ha, hb in zip(a, b):
            assert ha.tokens == hb.tokens
            assert ha.features == hb.features
            assert ha.model_score == hb.model_score


def test_nbest_parse_errors_name_line():
    with pytest.raises(FormatError, match=":2"):
        read_nbest(io.StringIO("0 ||| a ||| " + "0 " * 11 + "||| 1\n0 ||| a ||| 1 2 ||| 1\n"))


def test_parallel_corpus_validation():
    with pytest.raises(ValueError):
        ParallelCorpus([("a",)], [[]])
    with pytest.raises(ValueError):
        ParallelCorpus([()], [[("a",)]])
    c = ParallelCorpus([("a", "b")], [[("x",), ("y", "z")]])
    assert len(c) == 1
