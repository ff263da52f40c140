import io
import math
import os

import pytest
from hypothesis import given, settings, strategies as st

from nlsmt.decoder.lm import NGramLM, load_lm, read_arpa, train_add_k, write_arpa
from nlsmt.features import FormatError

from conftest import DATA

TINY = os.path.join(DATA, "tiny.arpa")


@pytest.fixture(scope="module")
def tiny():
    return load_lm(TINY)


def test_direct_hits(tiny):
    assert tiny.order == 2
    assert tiny.logprob(("<s>",), "a") == -0.2
    assert tiny.logprob(("a",), "b") == -0.4


def test_backoff_by_hand(tiny):
    assert math.isclose(tiny.logprob(("<s>",), "b"), -0.5 - 0.9)
    assert math.isclose(tiny.logprob(("a",), "</s>"), -0.3 - 1.2)
    # context without a backoff entry contributes 0
    assert math.isclose(tiny.logprob(("</s>",), "a"), -0.7)


def test_unknown_maps_to_unk(tiny):
    assert math.isclose(tiny.logprob(("a",), "zebra"), -0.3 - 1.5)
    assert math.isclose(tiny.logprob(("zebra",), "a"), -0.7)


def test_floor_without_unk():
    lm = NGramLM(1, {("a",): -0.5}, {})
    assert lm.logprob((), "b") == -99.0


def test_sentence_logprob(tiny):
    assert math.isclose(tiny.sentence_logprob(["a", "b"]), -0.2 - 0.4 - 0.3)


def test_arpa_errors():
    text = open(TINY).read()
    with pytest.raises(FormatError, match="declares"):
        read_arpa(io.StringIO(text.replace("ngram 2=3", "ngram 2=4")))
    with pytest.raises(FormatError, match="end"):
        read_arpa(io.StringIO(text.replace("\\end\\", "")))
    with pytest.raises(FormatError):
        read_arpa(io.StringIO(text.replace("-0.4\ta b", "x\ta b")))


def test_add_k_round_trip_and_normalisation():
    sents = [s.split() for s in ["a b c", "a c", "b b a c", "c a"]]
    lm = train_add_k(sents, order=3, k=0.5)
    buf = io.StringIO()
    write_arpa(lm, buf)
    back = read_arpa(io.StringIO(buf.getvalue()))
    assert back.probs == lm.probs and back.backoffs == lm.backoffs
    vocab = sorted(lm.vocab - {"<s>"})
    for ctx in [(), ("a",), ("<s>", "a"), ("b", "b"), ("c",)]:
        total = sum(10 ** lm.logprob(ctx, w) for w in vocab)
        assert abs(total - 1.0) < 1e-4, ctx


@given(st.lists(st.lists(st.sampled_from("abcd"), min_size=1, max_size=5), min_size=1, max_size=6),
       st.lists(st.sampled_from(list("abcdz")), max_size=4))
@settings(max_examples=60, deadline=None)
def test_logprob_is_nonpositive(sents, query):
    lm = train_add_k(sents, order=3)
    assert lm.sentence_logprob(query) <= 0.0
