"""Case-insensitive 4-gram BLEU with multiple references, and paired bootstrap.

Scores are fractions in [0, 1], not percentages.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

MAX_ORDER = 4
MIN_DRAWS = 1000


def _tokens(sentence):
    if isinstance(sentence, str):
        sentence = sentence.split()
    return [t.lower() for t in sentence]


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuStats:
    matches: tuple = (0,) * MAX_ORDER
    totals: tuple = (0,) * MAX_ORDER
    hyp_len: int = 0
    ref_len: int = 0

    def __add__(self, other):
        return BleuStats(
            tuple(a + b for a, b in zip(self.matches, other.matches)),
            tuple(a + b for a, b in zip(self.totals, other.totals)),
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )

    def to_array(self):
        return np.array(list(self.matches) + list(self.totals) + [self.hyp_len, self.ref_len],
                        dtype=np.int64)

    @classmethod
    def from_array(cls, arr):
        arr = [int(v) for v in arr]
        return cls(tuple(arr[:MAX_ORDER]), tuple(arr[MAX_ORDER:2 * MAX_ORDER]), arr[-2], arr[-1])


def compose(a: BleuStats, b: BleuStats) -> BleuStats:
    return a + b


def closest_ref_length(hyp_len, ref_lens):
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def sentence_stats(hyp, refs) -> BleuStats:
    """Clipped n-gram counts of one hypothesis against its references."""
    h = _tokens(hyp)
    rs = [_tokens(r) for r in refs]
    if not rs:
        raise ValueError("at least one reference is required")
    matches, totals = [], []
    for n in range(1, MAX_ORDER + 1):
        hyp_counts = _ngrams(h, n)
        max_ref = Counter()
        for r in rs:
            for gram, c in _ngrams(r, n).items():
                if c > max_ref[gram]:
                    max_ref[gram] = c
        matches.append(sum(min(c, max_ref[g]) for g, c in hyp_counts.items()))
        totals.append(max(len(h) - n + 1, 0))
    return BleuStats(tuple(matches), tuple(totals), len(h),
                     closest_ref_length(len(h), [len(r) for r in rs]))


def precisions(stats: BleuStats, smooth=False):
    out = []
    for n, (m, t) in enumerate(zip(stats.matches, stats.totals), 1):
        if smooth and n > 1:
            m, t = m + 1, t + 1
        out.append(m / t if t > 0 else 0.0)
    return out


def brevity_penalty(hyp_len, ref_len):
    if hyp_len == 0:
        return 0.0
    return min(1.0, math.exp(1.0 - ref_len / hyp_len))


def bleu_from_stats(stats: BleuStats, smooth=False) -> float:
    if stats.hyp_len == 0:
        return 0.0
    ps = precisions(stats, smooth)
    if min(ps) <= 0.0:
        return 0.0
    log_mean = sum(math.log(p) for p in ps) / MAX_ORDER
    return brevity_penalty(stats.hyp_len, stats.ref_len) * math.exp(log_mean)


def corpus_stats(hyps, refs_per_sentence) -> BleuStats:
    if len(hyps) != len(refs_per_sentence):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs_per_sentence)} reference sets")
    total = BleuStats()
    for h, refs in zip(hyps, refs_per_sentence):
        total = total + sentence_stats(h, refs)
    return total


def bleu_corpus(hyps, refs_per_sentence) -> float:
    if len(hyps) == 0:
        raise ValueError("cannot score an empty hypothesis set")
    return bleu_from_stats(corpus_stats(hyps, refs_per_sentence))


def bleu_sentence(hyp, refs) -> float:
    """BLEU+1: add-one smoothing on orders 2..4, unigram left unsmoothed."""
    return bleu_from_stats(sentence_stats(hyp, refs), smooth=True)


def _bleu_rows(S):
    """Vectorized unsmoothed BLEU over rows of stacked stats arrays."""
    m = S[:, :MAX_ORDER].astype(np.float64)
    t = S[:, MAX_ORDER:2 * MAX_ORDER].astype(np.float64)
    c = S[:, -2].astype(np.float64)
    r = S[:, -1].astype(np.float64)
    ok = (m > 0).all(axis=1) & (t > 0).all(axis=1) & (c > 0)
    out = np.zeros(len(S))
    if ok.any():
        logp = np.log(m[ok] / t[ok]).sum(axis=1) / MAX_ORDER
        bp = np.minimum(1.0, np.exp(1.0 - r[ok] / c[ok]))
        out[ok] = bp * np.exp(logp)
    return out


def resample_indices(n_sentences, draws, seed):
    rng = np.random.default_rng(seed)
    return rng.integers(0, n_sentences, size=(draws, n_sentences))


def bootstrap_significance(hyps_a, hyps_b, refs, draws=1000, seed=0, chunk=200) -> float:
    """Paired bootstrap p-value for "system A is better than system B".

    p is the fraction of resampled test sets on which BLEU(A) <= BLEU(B).
    """
    if not (len(hyps_a) == len(hyps_b) == len(refs)):
        raise ValueError("system outputs and references must be aligned")
    if len(refs) == 0:
        raise ValueError("empty test set")
    if draws < MIN_DRAWS:
        raise ValueError(f"use at least {MIN_DRAWS} bootstrap draws, got {draws}")
    SA = np.stack([sentence_stats(h, r).to_array() for h, r in zip(hyps_a, refs)])
    SB = np.stack([sentence_stats(h, r).to_array() for h, r in zip(hyps_b, refs)])
    idx = resample_indices(len(refs), draws, seed)
    not_better = 0
    for start in range(0, draws, chunk):
        block = idx[start:start + chunk]
        a = _bleu_rows(SA[block].sum(axis=1))
        b = _bleu_rows(SB[block].sum(axis=1))
        not_better += int(np.count_nonzero(a <= b))
    return not_better / draws


def format_breakdown(stats: BleuStats) -> str:
    ps = precisions(stats)
    return "BLEU = {:.4f} ({}, BP = {:.4f}, c = {}, r = {})".format(
        bleu_from_stats(stats), "/".join(f"{p:.4f}" for p in ps),
        brevity_penalty(stats.hyp_len, stats.ref_len), stats.hyp_len, stats.ref_len)
