import os

import numpy as np
import pytest

from nlsmt.decoder import (DecodeError, Decoder, DecoderConfig, decode, decode_corpus,
                           load_grammar, load_lm, rescore_nbest)
from nlsmt.features import FEATURE_INDEX
from nlsmt.network import LinearModel, build_gn, build_tdn, init_random
from nlsmt.synthetic import load_task

from conftest import DATA
from oracles import enumerate_derivations

COUNT_FIELDS = ["wc", "pc", "rc", "gc", "uc", "nc"]
TOYS = [1, 2, 3]


@pytest.fixture(scope="module")
def toy_lm():
    return load_lm(os.path.join(DATA, "toy.arpa"))


def toy(g):
    grammar = load_grammar(os.path.join(DATA, f"toy{g}.grammar"))
    with open(os.path.join(DATA, f"toy{g}.src")) as f:
        sentences = [line.split() for line in f if line.strip()]
    return grammar, sentences


def oracle_best_per_surface(tokens, grammar, lm, scorer):
    rules = [(r.source, r.target, r.scores) for r in grammar.rules]
    derivs = enumerate_derivations(tokens, rules, lm, unknown_penalty=-10.0)
    best = {}
    for d in derivs:
        s = scorer.score(d["features"])
        if d["tokens"] not in best or s > best[d["tokens"]][0]:
            best[d["tokens"]] = (s, d["features"])
    return derivs, best


def linear_weights(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=11)
    w[FEATURE_INDEX["lm"]] = abs(w[FEATURE_INDEX["lm"]])
    return LinearModel(w)


@pytest.mark.parametrize("g", TOYS)
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_linear_matches_brute_force(g, seed, toy_lm):
    grammar, sentences = toy(g)
    scorer = linear_weights(seed)
    for tokens in sentences:
        derivs, best = oracle_best_per_surface(tokens, grammar, toy_lm, scorer)
        beam = len(derivs) + 1
        nb = decode(tokens, grammar, toy_lm, scorer, beam=beam, nbest_n=len(derivs) + 1)
        # every distinct surface string comes back once, at its best derivation
        assert sorted(h.tokens for h in nb) == sorted(best)
        scores = [h.model_score for h in nb]
        assert scores == sorted(scores, reverse=True)
        top = max(s for s, _ in best.values())
        assert abs(nb[0].model_score - top) < 1e-9
        for h in nb:
            assert abs(h.model_score - best[h.tokens][0]) < 1e-9


@pytest.mark.parametrize("g", TOYS)
def test_bookkeeping_and_score_rederivation(g, toy_lm):
    grammar, sentences = toy(g)
    scorers = [linear_weights(5), init_random(build_tdn(11), 3, scale=1.0),
               init_random(build_gn(), 4, scale=1.0)]
    for scorer in scorers:
        for tokens in sentences:
            derivs, _ = oracle_best_per_surface(tokens, grammar, toy_lm, scorer)
            nb = decode(tokens, grammar, toy_lm, scorer, beam=1000, nbest_n=50)
            for h in nb:
                # the score is exactly the scorer applied to the stored features
                assert h.model_score == scorer.score(h.features.values)
                same = [d["features"] for d in derivs if d["tokens"] == h.tokens]
                match = [f for f in same if np.allclose(f, h.features.values, atol=1e-9)]
                assert match, f"no derivation of {h.tokens} has features {h.features}"
                for name in COUNT_FIELDS:
                    assert h.features[name] == match[0][FEATURE_INDEX[name]]


def test_lm_feature_equals_full_string_lm(toy_lm):
    grammar, sentences = toy(2)
    nb = decode(sentences[1], grammar, toy_lm, linear_weights(0), beam=100, nbest_n=100)
    for h in nb:
        assert abs(h.features["lm"] - toy_lm.sentence_logprob(list(h.tokens))) < 1e-9


def test_unknown_word_passes_through(toy_lm):
    grammar, _ = toy(3)
    nb = decode("Pochi wa neko".split(), grammar, toy_lm, linear_weights(1), beam=50)
    for h in nb:
        assert "Pochi" in h.tokens
        assert h.features["uc"] == 1


def test_null_rules_optional(toy_lm):
    grammar, _ = toy(1)
    plain = decode("a b".split(), grammar, toy_lm, linear_weights(0), beam=50, nbest_n=100)
    with_null = decode("a b".split(), grammar, toy_lm, linear_weights(0), beam=50, nbest_n=100,
                       allow_null=True)
    assert all(h.features["nc"] == 0 for h in plain)
    assert any(h.features["nc"] > 0 for h in with_null)
    assert len(with_null) > len(plain)


def test_empty_sentence_raises(toy_lm):
    grammar, _ = toy(1)
    with pytest.raises(DecodeError):
        decode([], grammar, toy_lm, linear_weights(0))


def test_beam_monotone_on_synthetic():
    grammar, lm, corpus = load_task()
    scorer = linear_weights(11)
    for tokens in corpus.sources[:15]:
        narrow = decode(tokens, grammar, lm, scorer, beam=1, nbest_n=1)
        wide = decode(tokens, grammar, lm, scorer, beam=100, nbest_n=1)
        assert wide[0].model_score >= narrow[0].model_score - 1e-12


def test_rescore_changes_order_not_features(toy_lm):
    grammar, sentences = toy(1)
    nb = decode(sentences[0], grammar, toy_lm, linear_weights(0), beam=100, nbest_n=10)
    other = linear_weights(9)
    re = rescore_nbest(nb, other)
    assert {h.tokens for h in re} == {h.tokens for h in nb}
    for h in re:
        assert h.model_score == other.score(h.features.values)


def test_decode_corpus_threads_deterministic():
    grammar, lm, corpus = load_task()
    scorer = init_random(build_tdn(11), 2)
    cfg = DecoderConfig(beam=10, nbest=5)
    one = decode_corpus(corpus.sources[:12], grammar, lm, scorer, cfg, threads=1)
    four = decode_corpus(corpus.sources[:12], grammar, lm, scorer, cfg, threads=4)
    for a, b in zip(one, four):
        assert [(h.tokens, h.model_score) for h in a] == [(h.tokens, h.model_score) for h in b]
    assert [nb.source_id for nb in one] == list(range(12))


def test_decoder_reuse_is_stateless(toy_lm):
    grammar, sentences = toy(2)
    dec = Decoder(grammar, toy_lm, linear_weights(0), DecoderConfig(beam=30, nbest=5))
    a = dec.decode(sentences[0])
    dec.decode(sentences[1])
    b = dec.decode(sentences[0])
    assert [h.tokens for h in a] == [h.tokens for h in b]
