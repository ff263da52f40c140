"""Pairwise training of hypothesis scorers.

Pairs (better, worse) are drawn from each sentence's n-best list under one of
three criteria, pooled across iterations with a small weight on older pairs,
and fit by minimising the weighted mean hinge loss plus an L1 penalty:

    sum_p w_p * max(s(worse_p) - s(better_p) + 1, 0) / sum_p w_p + l1 * |theta|_1
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .decoder.search import DecodeError, Decoder, DecoderConfig
from .features import (FIELD_SEP, FeatureVector, FormatError, Hypothesis, NBestList,
                       TrainingPair, format_number)
from .metrics import bleu_corpus, bleu_sentence
from .network import LinearModel, ModelParams, init_random

logger = logging.getLogger(__name__)

BR, BW, PW = "br", "bw", "pw"


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Criterion:
    name: str = BW
    sample_count: int = 5000     # PRO samples per sentence
    diff_threshold: float = 0.05  # minimum eval difference of a kept sample
    keep_count: int = 50         # pairs kept per sentence

    def __post_init__(self):
        if self.name not in (BR, BW, PW):
            raise ValueError(f"unknown criterion {self.name!r}")
        if not self.sample_count >= self.keep_count >= 1:
            raise ValueError("need sample_count >= keep_count >= 1")
        if self.diff_threshold < 0:
            raise ValueError("diff_threshold must be non-negative")


# -- pair generation -----------------------------------------------------------

def _best_index(hyps):
    best = 0
    for i, h in enumerate(hyps):
        if h.eval_score > hyps[best].eval_score:
            best = i
    return best


def _worst_index(hyps):
    worst = 0
    for i, h in enumerate(hyps):
        if h.eval_score < hyps[worst].eval_score:
            worst = i
    return worst


def generate_pairs_br(nbest: NBestList, iteration=0, weight=1.0):
    hyps = nbest.hypotheses
    if len(hyps) < 2:
        return []
    b = _best_index(hyps)
    return [TrainingPair(nbest.source_id, hyps[b], h, weight, iteration)
            for i, h in enumerate(hyps) if i != b]


def generate_pairs_bw(nbest: NBestList, iteration=0, weight=1.0):
    hyps = nbest.hypotheses
    if len(hyps) < 2:
        return []
    b, w = _best_index(hyps), _worst_index(hyps)
    if b == w:
        return []
    return [TrainingPair(nbest.source_id, hyps[b], hyps[w], weight, iteration)]


def generate_pairs_pw(nbest: NBestList, sample_count=5000, diff_threshold=0.05, keep_count=50,
                      seed=0, iteration=0, weight=1.0):
    """PRO-style sampling: draw random pairs, keep clear differences, take the largest.

    Repeated draws of the same pair collapse to one; among equal differences
    the pair with the smaller (better, worse) index wins.
    """
    hyps = nbest.hypotheses
    if len(hyps) < 2:
        return []
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, len(hyps), size=(sample_count, 2))
    evals = np.array([h.eval_score for h in hyps])
    kept = {}
    for i, j in draws.tolist():
        diff = evals[i] - evals[j]
        if abs(diff) <= diff_threshold:
            continue
        pair = (i, j) if diff > 0 else (j, i)
        kept[pair] = abs(diff)
    ranked = sorted(kept.items(), key=lambda kv: (-kv[1], kv[0]))[:keep_count]
    return [TrainingPair(nbest.source_id, hyps[i], hyps[j], weight, iteration)
            for (i, j), _ in ranked]


def generate_pairs(nbest, criterion: Criterion, seed=0, iteration=0, weight=1.0):
    if criterion.name == BR:
        return generate_pairs_br(nbest, iteration, weight)
    if criterion.name == BW:
        return generate_pairs_bw(nbest, iteration, weight)
    return generate_pairs_pw(nbest, criterion.sample_count, criterion.diff_threshold,
                             criterion.keep_count, seed, iteration, weight)


# -- pair pool ---------------------------------------------------------------------

@dataclass
class PairPool:
    pairs: list = field(default_factory=list)
    w_current: float = 1.0
    w_past: float = 0.1

    def __post_init__(self):
        if not 0 < self.w_past <= self.w_current:
            raise ValueError("pool weights need 0 < w_past <= w_current")

    def __len__(self):
        return len(self.pairs)


def weighted_combine(pool: PairPool, new_pairs, iteration, current_only=False) -> PairPool:
    fresh = [dataclasses.replace(p, weight=pool.w_current, born_iteration=iteration)
             for p in new_pairs]
    if current_only:
        return PairPool(fresh, pool.w_current, pool.w_past)
    old = [p.reweighted(pool.w_past) for p in pool.pairs]
    return PairPool(old + fresh, pool.w_current, pool.w_past)


# -- objective -------------------------------------------------------------------

class PairData:
    """Pairs stacked into matrices once, for repeated objective evaluations."""

    def __init__(self, pairs):
        if not pairs:
            raise ValueError("the objective needs at least one pair")
        self.better = np.stack([p.better.features.values for p in pairs])
        self.worse = np.stack([p.worse.features.values for p in pairs])
        w = np.array([p.weight for p in pairs], dtype=np.float64)
        self.weights = w / w.sum()
        self.both = np.concatenate([self.better, self.worse])


def _pairs_of(pool):
    return pool.pairs if isinstance(pool, PairPool) else list(pool)


def objective(model, pool, l1, data: PairData | None = None, kink_width=0.0):
    """Value and subgradient (flat, over the model's free parameters).

    Pairs exactly at the margin contribute a zero subgradient. A positive
    ``kink_width`` also counts pairs within that distance of the margin as
    active, which gives an epsilon-subgradient; the value is unaffected.
    """
    data = data or PairData(_pairs_of(pool))
    theta = model.parameter_vector()
    margins = model.batch_scores(data.worse) - model.batch_scores(data.better) + 1.0
    active = margins > 0.0
    value = float(np.dot(data.weights[active], margins[active])) + l1 * float(np.abs(theta).sum())
    if kink_width > 0.0:
        active = margins > -kink_width
    coef = np.where(active, data.weights, 0.0)
    grad = model.accumulate_gradient(data.both, np.concatenate([-coef, coef]))
    grad = grad + l1 * np.sign(theta)
    return value, grad


def pair_accuracy(model, pairs) -> float:
    """Fraction of pairs the model orders strictly correctly."""
    pairs = _pairs_of(pairs)
    if not pairs:
        raise ValueError("pair_accuracy needs at least one pair")
    data = PairData(pairs)
    return float(np.mean(model.batch_scores(data.better) > model.batch_scores(data.worse)))


# -- optimizer -----------------------------------------------------------------------

@dataclass
class OptimizerSettings:
    max_evaluations: int = 200
    tolerance: float = 1e-6
    armijo: float = 1e-4
    max_step: float = 1.0  # longest trial step, in parameter-space distance


KINK_WIDTHS = (1e-6, 1e-4, 1e-2, 1e-1)


def _line_search(evaluate, theta, f, slope, direction, t, settings, budget):
    """Backtrack from step ``t``; return (accepted, t, f_new, g_new, evaluations used)."""
    used = 0
    norm = float(np.linalg.norm(direction))
    while used < budget:
        f_new, g_new = evaluate(theta + t * direction)
        used += 1
        if math.isfinite(f_new) and f_new <= f + settings.armijo * t * slope and f_new < f:
            return True, t, f_new, g_new, used
        t *= 0.5
        if t * norm < 1e-14:
            break
    return False, t, None, None, used


def optimize(pool, model_init, l1, settings: OptimizerSettings | None = None):
    """Batch subgradient descent with Polak-Ribiere conjugate directions.

    Each step backtracks along the search direction until the objective
    drops. A direction that is not a descent direction is reset to the
    negative subgradient. When even that fails, the iterate usually sits on
    a hinge kink, so the step is retried along epsilon-subgradients that
    count near-margin pairs as active. Only decreasing steps are accepted,
    so the result never scores worse than ``model_init``.
    """
    settings = settings or OptimizerSettings()
    data = PairData(_pairs_of(pool))
    model = model_init
    theta = model.parameter_vector()

    def evaluate(vec, width=0.0):
        return objective(model.with_parameters(vec), None, l1, data, width)

    f, g = evaluate(theta)
    evals = 1
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise OptimizationError("objective is not finite at the initial parameters")
    direction = -g
    step = 1.0 / max(float(np.linalg.norm(g)), 1e-12)
    while evals < settings.max_evaluations:
        slope = float(np.dot(g, direction))
        if slope >= 0.0:
            direction = -g
            slope = -float(np.dot(g, g))
        accepted = False
        if slope < 0.0:
            t0 = min(step, settings.max_step / float(np.linalg.norm(direction)))
            accepted, t, f_new, g_new, used = _line_search(
                evaluate, theta, f, slope, direction, t0, settings,
                settings.max_evaluations - evals)
            evals += used
        if not accepted and not np.array_equal(direction, -g):
            direction = -g  # retry from steepest descent
            continue
        if not accepted:
            for width in KINK_WIDTHS:
                if evals >= settings.max_evaluations:
                    break
                _, g_eps = evaluate(theta, width)
                evals += 1
                d = -g_eps
                sl = float(np.dot(g_eps, d))
                if sl >= 0.0:
                    continue
                accepted, t, f_new, g_new, used = _line_search(
                    evaluate, theta, f, sl, d, settings.max_step / float(np.linalg.norm(d)),
                    settings, settings.max_evaluations - evals)
                evals += used
                if accepted:
                    direction = d
                    break
            if not accepted:
                break
        decrease = (f - f_new) / max(abs(f), 1e-12)
        beta = max(0.0, float(np.dot(g_new, g_new - g)) / max(float(np.dot(g, g)), 1e-300))
        theta, f, g = theta + t * direction, f_new, g_new
        direction = -g + beta * direction
        step = 2.0 * t
        if decrease < settings.tolerance:
            break
    return model.with_parameters(theta)


# -- iterative training ----------------------------------------------------------------

@dataclass
class TrainerConfig:
    criterion: Criterion = field(default_factory=Criterion)
    max_iterations: int = 10
    nbest_size: int = 20
    beam: int = 20
    l1: float = 1e-4
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    seed: int = 1
    current_only: bool = False
    w_current: float = 1.0
    w_past: float = 0.1
    threads: int = 1
    unknown_penalty: float = -10.0
    allow_null: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.nbest_size < 2:
            raise ValueError("nbest_size must be >= 2")
        if self.l1 < 0:
            raise ValueError("l1 must be >= 0")

    def decoder_config(self):
        return DecoderConfig(beam=self.beam, nbest=self.nbest_size,
                             unknown_penalty=self.unknown_penalty, allow_null=self.allow_null)


@dataclass
class IterationReport:
    iteration: int
    new_pairs: int
    pool_size: int
    pair_accuracy: float
    train_bleu: float
    objective: float = float("nan")

    def to_line(self):
        return (f"{self.iteration}\t{self.new_pairs}\t{self.pool_size}\t"
                f"{self.pair_accuracy:.6f}\t{self.train_bleu:.6f}")


REPORT_HEADER = "iter\tnew_pairs\tpool_size\tpair_accuracy\ttrain_bleu"


@dataclass
class TrainResult:
    model: object
    reports: list
    pool: PairPool
    final_bleu: float
    final_outputs: list


def decode_with_evals(decoder: Decoder, corpus, threads=1):
    """Decode every sentence and attach sentence-level BLEU+1 eval scores."""
    def one(job):
        sid, (src, refs) = job
        nb = decoder.decode(src, sid)
        return nb.with_evals([bleu_sentence(h.tokens, refs) for h in nb])

    jobs = list(enumerate(corpus))
    if threads <= 1:
        return [one(j) for j in jobs]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(one, jobs))


def one_best_bleu(nbests, corpus):
    outputs = [nb.best().tokens if len(nb) else () for nb in nbests]
    return bleu_corpus(outputs, [refs for _, refs in corpus]), outputs


def pw_seed(seed, iteration, source_id):
    return np.random.SeedSequence([seed, iteration, source_id])


def train(corpus, grammar, lm, config: TrainerConfig, topology=None, init_model=None,
          on_iteration: Callable | None = None, start_state=None) -> TrainResult:
    """Iterative n-best training.

    Iterations run ``0..max_iterations`` inclusive. Each decodes the corpus
    with the current parameters, turns every n-best list into pairs, merges
    them into the pool and re-optimises. ``on_iteration(i, model, pool,
    report)`` runs after each iteration with the updated model. A
    ``start_state`` of ``(next_iteration, model, pool, reports)`` resumes an
    interrupted run.
    """
    if start_state is not None:
        first, model, pool, reports = start_state
        reports = list(reports)
    else:
        if init_model is not None:
            model = init_model
        elif topology is None:
            rng = np.random.default_rng(config.seed)
            model = LinearModel(rng.uniform(-0.1, 0.1, size=11))
        else:
            model = init_random(topology, config.seed)
        pool = PairPool([], config.w_current, config.w_past)
        reports = []
        first = 0

    for i in range(first, config.max_iterations + 1):
        decoder = Decoder(grammar, lm, model, config.decoder_config())
        try:
            nbests = decode_with_evals(decoder, corpus, config.threads)
        except DecodeError as exc:
            raise DecodeError(f"iteration {i}: {exc}") from exc
        bleu, _ = one_best_bleu(nbests, corpus)
        new_pairs = []
        for nb in nbests:
            new_pairs.extend(generate_pairs(nb, config.criterion,
                                            seed=pw_seed(config.seed, i, nb.source_id),
                                            iteration=i))
        pool = weighted_combine(pool, new_pairs, i, config.current_only)
        obj = float("nan")
        acc = float("nan")
        if len(pool):
            try:
                model = optimize(pool, model, config.l1, config.optimizer)
            except OptimizationError as exc:
                raise OptimizationError(f"iteration {i}: {exc}") from exc
            obj = objective(model, pool, config.l1)[0]
            acc = pair_accuracy(model, pool)
        report = IterationReport(i, len(new_pairs), len(pool), acc, bleu, obj)
        reports.append(report)
        logger.info("%s  objective=%.6g", report.to_line(), obj)
        if on_iteration is not None:
            on_iteration(i, model, pool, report)

    decoder = Decoder(grammar, lm, model, config.decoder_config())
    final = decode_with_evals(decoder, corpus, config.threads)
    final_bleu, outputs = one_best_bleu(final, corpus)
    return TrainResult(model, reports, pool, final_bleu, outputs)


# -- pool files ----------------------------------------------------------------------

def format_pair(pair: TrainingPair) -> str:
    def side(h):
        return [" ".join(h.tokens), " ".join(format_number(v) for v in h.features),
                format_number(h.model_score), format_number(h.eval_score)]
    return FIELD_SEP.join([str(pair.source_id)] + side(pair.better) + side(pair.worse)
                          + [format_number(pair.weight), str(pair.born_iteration)])


def write_pool(pool: PairPool, stream):
    stream.write(f"# w_current={format_number(pool.w_current)} "
                 f"w_past={format_number(pool.w_past)}\n")
    for p in pool.pairs:
        stream.write(format_pair(p) + "\n")


def read_pool(stream, path=None) -> PairPool:
    pairs = []
    w_current, w_past = 1.0, 0.1
    for lineno, raw in enumerate(stream, 1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "w_current":
                    w_current = float(val)
                elif key == "w_past":
                    w_past = float(val)
            continue
        parts = line.split("|||")
        if len(parts) != 11:
            raise FormatError("expected 11 fields separated by |||", path, lineno)
        try:
            def hyp(fields):
                feats = FeatureVector([float(v) for v in fields[1].split()])
                return Hypothesis(tuple(fields[0].split()), feats, float(fields[2]),
                                  float(fields[3]))
            pairs.append(TrainingPair(int(parts[0]), hyp(parts[1:5]), hyp(parts[5:9]),
                                      float(parts[9]), int(parts[10])))
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
    return PairPool(pairs, w_current, w_past)
