import io
import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nlsmt.decoder.grammar import read_grammar
from nlsmt.decoder.lm import train_add_k
from nlsmt.features import FeatureVector, Hypothesis, NBestList, ParallelCorpus, TrainingPair
from nlsmt.network import LinearModel, ModelParams, build_standard, build_tdn, init_random
from nlsmt.tuning import (BR, BW, PW, Criterion, OptimizationError, OptimizerSettings, PairPool,
                          TrainerConfig, generate_pairs, generate_pairs_br, generate_pairs_bw,
                          generate_pairs_pw, objective, optimize, pair_accuracy, read_pool,
                          train, weighted_combine, write_pool)

from oracles import naive_network_score


def make_nbest(evals, seed=0, sid=0):
    rng = np.random.default_rng(seed)
    hyps = [Hypothesis((f"h{i}",), FeatureVector(rng.normal(size=11)), float(-i), float(e))
            for i, e in enumerate(evals)]
    return NBestList(sid, len(hyps), hyps)


def names(pairs):
    return [(p.better.tokens[0], p.worse.tokens[0]) for p in pairs]


def test_br_example():
    nb = make_nbest([0.3, 0.5, 0.2])
    assert names(generate_pairs_br(nb)) == [("h1", "h0"), ("h1", "h2")]


def test_bw_example():
    assert names(generate_pairs_bw(make_nbest([0.3, 0.5, 0.2]))) == [("h1", "h2")]


def test_degenerate_cases():
    assert generate_pairs_br(make_nbest([0.4])) == []
    assert generate_pairs_bw(make_nbest([0.4])) == []
    assert generate_pairs_pw(make_nbest([0.4])) == []
    assert generate_pairs_bw(make_nbest([0.2, 0.2, 0.2])) == []
    assert generate_pairs_pw(make_nbest([0.2, 0.2, 0.2])) == []


def test_ties_go_to_lowest_index():
    assert names(generate_pairs_bw(make_nbest([0.5, 0.1, 0.5, 0.1]))) == [("h0", "h1")]


def test_pw_two_hypotheses_collapse():
    pairs = generate_pairs_pw(make_nbest([0.9, 0.1]), sample_count=100, keep_count=50)
    assert names(pairs) == [("h0", "h1")]


def exhaustive_pw(evals, alpha, keep):
    cands = []
    for i, j in itertools.combinations(range(len(evals)), 2):
        d = evals[i] - evals[j]
        if abs(d) > alpha:
            cands.append((abs(d), (i, j) if d > 0 else (j, i)))
    cands.sort(key=lambda c: (-c[0], c[1]))
    return [pair for _, pair in cands[:keep]]


def test_pair_counts_on_random_nbests():
    rng = np.random.default_rng(0)
    for trial in range(50):
        evals = rng.permutation(rng.uniform(0, 1, size=200))[:20]
        assert len(set(evals)) == 20
        nb = make_nbest(evals, seed=trial)
        assert len(generate_pairs_br(nb)) == 19
        assert len(generate_pairs_bw(nb)) == 1
        pw = generate_pairs_pw(nb, 5000, 0.05, 50, seed=trial)
        want = exhaustive_pw(evals, 0.05, 50)
        assert len(pw) == min(50, len(exhaustive_pw(evals, 0.05, 10 ** 6)))
        got = [(int(p.better.tokens[0][1:]), int(p.worse.tokens[0][1:])) for p in pw]
        assert got == want
        for p in pw:
            assert p.better.eval_score - p.worse.eval_score > 0.05


@given(st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 1.0]), min_size=1, max_size=12),
       st.integers(0, 1000))
@settings(max_examples=100, deadline=None)
def test_pair_invariants(evals, seed):
    nb = make_nbest(evals)
    for crit in (Criterion(BR), Criterion(BW), Criterion(PW, 200, 0.05, 7)):
        pairs = generate_pairs(nb, crit, seed=seed)
        for p in pairs:
            assert p.better.eval_score >= p.worse.eval_score
            if crit.name == PW:
                assert p.better.eval_score - p.worse.eval_score > 0.05
        if crit.name == BR:
            assert len(pairs) == max(len(evals) - 1, 0)
        if crit.name == BW:
            assert len(pairs) <= 1
        if crit.name == PW:
            assert len(pairs) <= 7
            assert len({(p.better.tokens, p.worse.tokens) for p in pairs}) == len(pairs)


def test_pw_seeded():
    nb = make_nbest(np.linspace(0, 1, 20))
    a = generate_pairs_pw(nb, 30, 0.05, 10, seed=5)
    b = generate_pairs_pw(nb, 30, 0.05, 10, seed=5)
    assert names(a) == names(b)


def test_criterion_validation():
    with pytest.raises(ValueError):
        Criterion("xx")
    with pytest.raises(ValueError):
        Criterion(PW, sample_count=10, keep_count=50)


def _pairs(n, seed=0):
    nb = make_nbest(np.linspace(0, 1, n + 1), seed)
    return generate_pairs_br(nb)[:n]


def test_weighted_combine():
    pool = weighted_combine(PairPool(), _pairs(5), 0)
    assert len(pool) == 5 and all(p.weight == 1.0 for p in pool.pairs)
    pool = weighted_combine(pool, _pairs(3, 1), 1)
    assert len(pool) == 8
    assert [p.weight for p in pool.pairs] == [0.1] * 5 + [1.0] * 3
    assert [p.born_iteration for p in pool.pairs] == [0] * 5 + [1] * 3
    only = weighted_combine(pool, _pairs(3, 2), 2, current_only=True)
    assert len(only) == 3 and all(p.born_iteration == 2 for p in only.pairs)
    with pytest.raises(ValueError):
        PairPool(w_current=0.1, w_past=1.0)


def _pair(better, worse):
    return TrainingPair(0, Hypothesis(("a",), FeatureVector(better), 0.0, 1.0),
                        Hypothesis(("b",), FeatureVector(worse), 0.0, 0.0), 1.0, 0)


def test_objective_pure_l1():
    w = np.zeros(11)
    w[0], w[1] = 1.0, -2.0
    # better has a much larger score, so every hinge is inactive
    x = np.zeros(11)
    x[0] = 10.0
    value, grad = objective(LinearModel(w), [_pair(x, np.zeros(11))], 0.01)
    assert math.isclose(value, 0.03)
    assert grad[0] == 0.01 and grad[1] == -0.01 and grad[2] == 0.0


def test_objective_margin():
    value, _ = objective(LinearModel(np.zeros(11)), [_pair(np.ones(11), np.ones(11))], 0.0)
    assert value == 1.0
    with pytest.raises(ValueError):
        objective(LinearModel(np.zeros(11)), [], 0.0)


def naive_objective(params, pairs, l1):
    num = sum(p.weight * max(naive_network_score(params, p.worse.features.values)
                             - naive_network_score(params, p.better.features.values) + 1, 0)
              for p in pairs)
    return num / sum(p.weight for p in pairs) + l1 * sum(abs(v) for v in params.parameter_vector())


def test_objective_against_naive_and_fd():
    rng = np.random.default_rng(3)
    params = init_random(build_tdn(11), 1, scale=0.5)
    pairs = [TrainingPair(0, Hypothesis(("a",), FeatureVector(rng.normal(size=11)), 0, 1),
                          Hypothesis(("b",), FeatureVector(rng.normal(size=11)), 0, 0),
                          float(rng.choice([0.1, 1.0])), 0) for _ in range(30)]
    value, grad = objective(params, pairs, 1e-3)
    assert math.isclose(value, naive_objective(params, pairs, 1e-3), rel_tol=1e-10)
    theta = params.parameter_vector()
    h = 1e-6
    for i in rng.choice(len(theta), size=25, replace=False):
        up, down = theta.copy(), theta.copy()
        up[i] += h
        down[i] -= h
        fd = (naive_objective(params.with_parameters(up), pairs, 1e-3)
              - naive_objective(params.with_parameters(down), pairs, 1e-3)) / (2 * h)
        assert math.isclose(grad[i], fd, rel_tol=1e-4, abs_tol=1e-7)
    perm = [pairs[i] for i in rng.permutation(len(pairs))]
    assert math.isclose(objective(params, perm, 1e-3)[0], value, rel_tol=1e-12)


def test_pair_accuracy():
    w = np.zeros(11)
    w[0] = 1.0
    pairs = [_pair(np.eye(11)[0], np.zeros(11)), _pair(np.zeros(11), np.zeros(11))]
    assert pair_accuracy(LinearModel(w), pairs) == 0.5  # the tie counts as wrong
    assert pair_accuracy(LinearModel(-w), pairs) == 0.0
    with pytest.raises(ValueError):
        pair_accuracy(LinearModel(w), [])


def planted_pairs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    planted = init_random(build_standard(11, 5), 99, scale=1.0)
    pairs = []
    while len(pairs) < n:
        a, b = rng.normal(size=11), rng.normal(size=11)
        sa, sb = planted.score(a), planted.score(b)
        if abs(sa - sb) < 0.05:
            continue
        if sa < sb:
            a, b = b, a
        pairs.append(_pair(a, b))
    return PairPool(pairs)


def test_optimize_planted_network():
    pool = planted_pairs()
    init = init_random(build_standard(11, 5), 1)
    model = optimize(pool, init, 0.0, OptimizerSettings(max_evaluations=3000, tolerance=1e-9))
    assert pair_accuracy(model, pool) >= 0.99


def test_optimize_monotone_and_masked():
    pool = planted_pairs(60, 1)
    init = init_random(build_tdn(11), 2)
    model = init
    f0 = objective(init, pool, 1e-3)[0]
    for _ in range(10):
        model = optimize(pool, model, 1e-3, OptimizerSettings(max_evaluations=10))
        f = objective(model, pool, 1e-3)[0]
        assert f <= f0
        f0 = f
        assert np.all(model.hidden_weights[~model.topology.mask] == 0)


def test_optimize_already_optimal():
    w = np.zeros(11)
    w[0] = 5.0
    pool = PairPool([_pair(np.eye(11)[0], np.zeros(11))])
    model = optimize(pool, LinearModel(w), 0.0)
    assert objective(model, pool, 0.0)[0] == 0.0


def test_optimize_rejects_non_finite():
    w = np.full(11, np.nan)
    with pytest.raises(OptimizationError):
        optimize(PairPool([_pair(np.ones(11), np.zeros(11))]), LinearModel(w), 0.0)


def test_l1_path_monotone():
    pool = planted_pairs(120, 2)
    init = init_random(build_standard(11, 5), 3)
    s = OptimizerSettings(max_evaluations=400)
    strong = optimize(pool, init, 0.01, s)
    weak = optimize(pool, init, 0.00001, s)
    assert strong.l1_norm() <= weak.l1_norm()


def test_pool_file_round_trip():
    pool = weighted_combine(weighted_combine(PairPool(), _pairs(4), 0), _pairs(2, 5), 1)
    buf = io.StringIO()
    write_pool(pool, buf)
    back = read_pool(io.StringIO(buf.getvalue()))
    assert back.w_current == pool.w_current and back.w_past == pool.w_past
    for a, b in zip(pool.pairs, back.pairs):
        assert a.better.features == b.better.features and a.worse.features == b.worse.features
        assert (a.weight, a.born_iteration, a.source_id) == (b.weight, b.born_iteration,
                                                             b.source_id)


# -- training on a tiny task --------------------------------------------------------------

TINY_GRAMMAR = """[X] ||| ka ||| cat ||| -0.3 -0.9 -0.2 -0.3
[X] ||| ka ||| cap ||| -1.5 -0.2 -0.4 -0.3
[X] ||| mo ||| dog ||| -0.2 -0.5 -0.3 -0.2
"""


def tiny_task(n_copies=1):
    grammar = read_grammar(io.StringIO(TINY_GRAMMAR))
    lm = train_add_k([["cat", "dog"], ["cap", "dog"]], order=2)
    corpus = ParallelCorpus([("ka", "mo")] * n_copies, [[("cat", "dog")]] * n_copies)
    return grammar, lm, corpus


def test_train_tiny_separable():
    grammar, lm, corpus = tiny_task()
    cfg = TrainerConfig(Criterion(BR), max_iterations=1, nbest_size=5, l1=0.0, seed=3)
    result = train(corpus, grammar, lm, cfg, topology=build_standard(11, 1))
    assert pair_accuracy(result.model, result.pool) == 1.0
    assert result.final_outputs == [("cat", "dog")]
    assert [r.iteration for r in result.reports] == [0, 1]


def test_train_bw_pair_counts_and_determinism():
    from nlsmt.synthetic import load_task
    grammar, lm, corpus = load_task()
    small = ParallelCorpus(corpus.sources[:10], corpus.references[:10])
    cfg = TrainerConfig(Criterion(BW), max_iterations=2, nbest_size=8, beam=8, seed=4)
    a = train(small, grammar, lm, cfg, topology=build_standard(11, 4))
    b = train(small, grammar, lm, cfg, topology=build_standard(11, 4))
    assert [r.to_line() for r in a.reports] == [r.to_line() for r in b.reports]
    assert a.model == b.model
    total = 0
    for r in a.reports:
        assert r.new_pairs <= 10
        total += r.new_pairs
        assert r.pool_size == total


def test_train_current_only_pool_size():
    grammar, lm, corpus = tiny_task(3)
    cfg = TrainerConfig(Criterion(BR), max_iterations=2, nbest_size=4, current_only=True)
    result = train(corpus, grammar, lm, cfg)
    for r in result.reports:
        assert r.pool_size == r.new_pairs
    assert isinstance(result.model, LinearModel)


def test_train_resume_matches_uninterrupted():
    grammar, lm, corpus = tiny_task(2)
    cfg = TrainerConfig(Criterion(BR), max_iterations=3, nbest_size=4, seed=7)
    snapshots = {}

    def keep(i, model, pool, report):
        snapshots[i] = (model, pool)

    full = train(corpus, grammar, lm, cfg, topology=build_standard(11, 2), on_iteration=keep)
    model, pool = snapshots[1]
    resumed = train(corpus, grammar, lm, cfg, start_state=(2, model, pool, full.reports[:2]))
    assert resumed.model == full.model
    assert [r.to_line() for r in resumed.reports] == [r.to_line() for r in full.reports]


def test_trainer_config_validation():
    with pytest.raises(ValueError):
        TrainerConfig(max_iterations=0)
    with pytest.raises(ValueError):
        TrainerConfig(nbest_size=1)
    with pytest.raises(ValueError):
        TrainerConfig(l1=-1)
    assert isinstance(init_random(build_standard(11, 2), 0), ModelParams)
