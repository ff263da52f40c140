"""Backoff n-gram language model in ARPA format (log10 probabilities)."""
from __future__ import annotations

import logging
import math
import re
from collections import Counter, defaultdict

from ..features import FormatError

logger = logging.getLogger(__name__)

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"
DEFAULT_FLOOR = -99.0

_NGRAM_HEADER = re.compile(r"^\\(\d+)-grams:$")
_COUNT_LINE = re.compile(r"^ngram\s+(\d+)\s*=\s*(\d+)$")


class NGramLM:
    """Read-only backoff LM.

    ``probs`` maps n-gram tuples to log10 probabilities, ``backoffs`` maps
    context tuples to log10 backoff weights.
    """

    def __init__(self, order, probs, backoffs, floor=DEFAULT_FLOOR):
        self.order = order
        self.probs = dict(probs)
        self.backoffs = dict(backoffs)
        self.floor = floor
        self.has_unk = (UNK,) in self.probs
        self._cache = {}
        self._check()

    def _check(self):
        for gram, lp in self.probs.items():
            if lp > 0:
                logger.warning("positive log10 probability %g for %s", lp, " ".join(gram))
        missing = 0
        for gram in self.probs:
            if 1 < len(gram) and gram[:-1] not in self.backoffs:
                missing += 1
        if missing:
            logger.warning("%d n-gram contexts have no backoff entry (treated as 0)", missing)

    def _map(self, word):
        if (word,) in self.probs:
            return word
        return UNK if self.has_unk else None

    def logprob(self, context, word) -> float:
        """log10 p(word | context), backing off to shorter contexts."""
        key = (tuple(context[-(self.order - 1):]) if self.order > 1 else (), word)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        w = self._map(word)
        if w is None:
            value = self.floor
        else:
            ctx = tuple(c if (c,) in self.probs or not self.has_unk else UNK for c in key[0])
            value = 0.0
            while True:
                lp = self.probs.get(ctx + (w,))
                if lp is not None:
                    value += lp
                    break
                # unigram always exists after mapping, so ctx is non-empty here
                value += self.backoffs.get(ctx, 0.0)
                ctx = ctx[1:]
        self._cache[key] = value
        return value

    def sentence_logprob(self, tokens, bos=True, eos=True) -> float:
        seq = ([BOS] if bos else []) + list(tokens) + ([EOS] if eos else [])
        total = 0.0
        start = 1 if bos else 0
        for i in range(start, len(seq)):
            total += self.logprob(seq[max(0, i - self.order + 1):i], seq[i])
        return total

    @property
    def vocab(self):
        return {g[0] for g in self.probs if len(g) == 1}


def lm_logprob(lm: NGramLM, context, word) -> float:
    return lm.logprob(tuple(context), word)


def read_arpa(stream, path=None, floor=DEFAULT_FLOOR) -> NGramLM:
    counts = {}
    probs = {}
    backoffs = {}
    section = None  # None, "data", or an int order
    saw_end = False
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line:
            continue
        if line == "\\data\\":
            section = "data"
            continue
        if line == "\\end\\":
            saw_end = True
            break
        m = _NGRAM_HEADER.match(line)
        if m:
            section = int(m.group(1))
            if section not in counts:
                raise FormatError(f"section \\{section}-grams: not declared in \\data\\",
                                  path, lineno)
            continue
        if section is None:
            continue  # free text before \data\ is allowed
        if section == "data":
            m = _COUNT_LINE.match(line)
            if not m:
                raise FormatError(f"bad count line {line!r}", path, lineno)
            counts[int(m.group(1))] = int(m.group(2))
            continue
        parts = line.split()
        n = section
        if len(parts) not in (n + 1, n + 2):
            raise FormatError(f"expected {n} words after the probability", path, lineno)
        try:
            lp = float(parts[0])
            bo = float(parts[n + 1]) if len(parts) == n + 2 else None
        except ValueError as exc:
            raise FormatError(str(exc), path, lineno) from None
        gram = tuple(parts[1:n + 1])
        probs[gram] = lp
        if bo is not None:
            backoffs[gram] = bo
    if not counts:
        raise FormatError("missing \\data\\ section", path)
    if not saw_end:
        raise FormatError("missing \\end\\ marker", path)
    found = Counter(len(g) for g in probs)
    for n, expected in counts.items():
        if found.get(n, 0) != expected:
            raise FormatError(
                f"\\data\\ declares {expected} {n}-grams but {found.get(n, 0)} were read", path)
    return NGramLM(max(counts), probs, backoffs, floor=floor)


def load_lm(path, floor=DEFAULT_FLOOR) -> NGramLM:
    with open(path, encoding="utf-8") as f:
        return read_arpa(f, path, floor)


def write_arpa(lm: NGramLM, stream):
    by_order = defaultdict(list)
    for gram in lm.probs:
        by_order[len(gram)].append(gram)
    stream.write("\n\\data\\\n")
    for n in range(1, lm.order + 1):
        stream.write(f"ngram {n}={len(by_order[n])}\n")
    for n in range(1, lm.order + 1):
        stream.write(f"\n\\{n}-grams:\n")
        for gram in sorted(by_order[n]):
            line = f"{lm.probs[gram]:.6f}\t{' '.join(gram)}"
            if gram in lm.backoffs:
                line += f"\t{lm.backoffs[gram]:.6f}"
            stream.write(line + "\n")
    stream.write("\n\\end\\\n")


def train_add_k(sentences, order=3, k=0.5) -> NGramLM:
    """Tiny backoff LM for fixtures and tests.

    Unigrams are add-k smoothed over the vocabulary plus ``<unk>``. For
    higher orders, a context reserves ``k / (count + k)`` of its mass and
    hands it to the lower order through a normalising backoff weight.
    Values are rounded to the 6 decimals ARPA files carry, so a written and
    re-read model is identical to the returned one.
    """

    ngram_counts = [Counter() for _ in range(order + 1)]
    for sent in sentences:
        seq = [BOS] + list(sent) + [EOS]
        for n in range(1, order + 1):
            for i in range(len(seq) - n + 1):
                gram = tuple(seq[i:i + n])
                if n == 1 and gram == (BOS,):
                    continue
                ngram_counts[n][gram] += 1
    vocab = sorted({g[0] for g in ngram_counts[1]} | {UNK})
    total = sum(ngram_counts[1].values())
    probs = {}
    backoffs = {}
    r6 = lambda x: round(x, 6)  # noqa: E731
    for w in vocab:
        probs[(w,)] = r6(math.log10((ngram_counts[1][(w,)] + k) / (total + k * len(vocab))))
    probs[(BOS,)] = DEFAULT_FLOOR

    for n in range(2, order + 1):
        # lower orders are complete at this point
        lower = NGramLM(n - 1, probs, backoffs)
        by_context = defaultdict(dict)
        for gram, c in ngram_counts[n].items():
            by_context[gram[:-1]][gram[-1]] = c
        new_probs = {}
        new_backoffs = {}
        for ctx, followers in by_context.items():
            ctx_total = sum(followers.values())
            seen_mass = 0.0
            lower_mass = 0.0
            for w, c in followers.items():
                p = 10 ** r6(math.log10(c / (ctx_total + k)))
                new_probs[ctx + (w,)] = r6(math.log10(c / (ctx_total + k)))
                seen_mass += p
                lower_mass += 10 ** lower.logprob(ctx[1:], w)
            reserved = 1.0 - seen_mass
            denom = max(1.0 - lower_mass, 1e-12)
            new_backoffs[ctx] = r6(math.log10(max(reserved, 1e-12) / denom))
        probs.update(new_probs)
        backoffs.update(new_backoffs)
    return NGramLM(order, probs, backoffs)
