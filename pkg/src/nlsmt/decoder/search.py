"""CKY decoding with cube pruning for hierarchical phrase-based grammars.

Every candidate is ranked by the active scorer applied to its fully
accumulated feature vector, so a non-linear scorer can be dropped in
unchanged. Items sharing (lhs, LM state) in a cell are recombined; the
losing derivations are kept as extra incoming edges so that k-best
extraction can still reach them.

LM states follow the usual boundary-word scheme: an item remembers its first
``order - 1`` words (not yet scored, their context lies outside the item) and
its last ``order - 1`` words (scored, needed as context for what follows).
When more words lie between them they are replaced by ``ELIDED``.
"""
from __future__ import annotations

import heapq
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..features import FEATURE_INDEX, FeatureVector, Hypothesis, NBestList
from .grammar import GLUE_CONCAT, GLUE_TOP, null_rule, unknown_rule
from .lm import BOS, EOS, NGramLM

logger = logging.getLogger(__name__)

ELIDED = "\x00<elided>"
LM_INDEX = FEATURE_INDEX["lm"]


class DecodeError(RuntimeError):
    """No complete derivation covers the input."""


@dataclass
class DecoderConfig:
    beam: int = 20
    nbest: int = 20
    unknown_penalty: float = -10.0
    allow_null: bool = False
    null_penalty: float = -10.0
    kbest_pop_limit: int = 5000


class Edge:
    __slots__ = ("rule", "children", "local")

    def __init__(self, rule, children, local):
        self.rule = rule
        self.children = children
        self.local = local  # rule features plus this edge's LM delta


class Item:
    __slots__ = ("lhs", "span", "state", "features", "score", "edges")

    def __init__(self, lhs, span, state, features, score, edge):
        self.lhs = lhs
        self.span = span
        self.state = state
        self.features = features
        self.score = score
        self.edges = [edge]

    def __repr__(self):
        return f"Item({self.lhs}{self.span} {self.score:.4f} {self.state})"


class LMCombiner:
    """Computes LM deltas and boundary states for rule applications."""

    def __init__(self, lm: NGramLM):
        self.lm = lm
        self.ctx = lm.order - 1

    def combine(self, target, children, complete=False):
        """Return (lm delta, new state) for ``target`` with children plugged in.

        With ``complete`` the sentence markers are added and every remaining
        word is scored.
        """
        ctx = self.ctx
        words = []
        scored = []
        if complete:
            words.append(BOS)
            scored.append(True)
        for sym in target:
            if isinstance(sym, str):
                words.append(sym)
                scored.append(False)
                continue
            state = children[sym - 1].state
            if ELIDED in state:
                cut = state.index(ELIDED)
                words.extend(state)
                scored.extend([False] * cut + [True] * (len(state) - cut))
            else:
                words.extend(state)
                scored.extend(i >= ctx for i in range(len(state)))
        if complete:
            words.append(EOS)
            scored.append(False)

        delta = 0.0
        logprob = self.lm.logprob
        for i, w in enumerate(words):
            if scored[i] or w == ELIDED:
                continue
            if complete:
                history = words[max(0, i - ctx):i]
            else:
                if i < ctx:
                    continue
                history = words[i - ctx:i]
            if ELIDED in history:
                continue
            delta += logprob(tuple(history), w)
            scored[i] = True

        if ctx == 0:
            return delta, ()
        if ELIDED in words or len(words) >= 2 * ctx:
            state = tuple(words[:ctx]) + (ELIDED,) + tuple(words[-ctx:])
        else:
            state = tuple(words)
        return delta, state


class _Bundle:
    """One cube: a list of rules crossed with child item lists."""

    __slots__ = ("rules", "child_lists")

    def __init__(self, rules, child_lists):
        self.rules = rules
        self.child_lists = child_lists


class Decoder:
    def __init__(self, grammar, lm: NGramLM, scorer, config: DecoderConfig | None = None):
        self.grammar = grammar
        self.lm = lm
        self.scorer = scorer
        self.config = config or DecoderConfig()
        self.combiner = LMCombiner(lm)

    # -- public -----------------------------------------------------------

    def decode(self, sentence, source_id=0, nbest=None) -> NBestList:
        tokens = tuple(sentence.split()) if isinstance(sentence, str) else tuple(sentence)
        if not tokens:
            raise DecodeError(f"sentence {source_id} is empty")
        goal = self.build_chart(tokens, source_id)
        return self.extract_nbest(goal, source_id, nbest or self.config.nbest)

    def build_chart(self, tokens, source_id=0):
        """Fill the chart; return the goal items (S over the whole input)."""
        n = len(tokens)
        cells = {}
        rule_order = {}
        patterns = self._candidate_patterns(tokens)
        for length in range(1, n + 1):
            for i in range(0, n - length + 1):
                j = i + length
                if length <= self.grammar.max_span or length == 1:
                    bundles = self._x_bundles(tokens, i, j, cells, patterns, rule_order)
                    if bundles:
                        cells[("X", i, j)] = self._cube_prune("X", (i, j), bundles, False)
                if i == 0:
                    bundles = self._s_bundles(j, cells)
                    if bundles:
                        cells[("S", 0, j)] = self._cube_prune("S", (0, j), bundles, j == n)
        goal = cells.get(("S", 0, n))
        if not goal:
            raise DecodeError(
                f"sentence {source_id} ({' '.join(tokens)!r}) has no complete derivation")
        return goal

    # -- rule matching --------------------------------------------------------

    def _candidate_patterns(self, tokens):
        present = set(tokens)
        out = []
        for pattern in self.grammar.patterns():
            if all(s in present for s in pattern if isinstance(s, str)):
                out.append(pattern)
        return out

    @staticmethod
    def _match(pattern, tokens, i, j):
        """Yield child spans for each way ``pattern`` covers tokens[i:j]."""
        def rec(pi, pos, spans):
            if pi == len(pattern):
                if pos == j:
                    yield tuple(spans)
                return
            sym = pattern[pi]
            if isinstance(sym, str):
                if pos < j and tokens[pos] == sym:
                    yield from rec(pi + 1, pos + 1, spans)
                return
            remaining = len(pattern) - pi - 1  # every later symbol covers >= 1 word
            for end in range(pos + 1, j - remaining + 1):
                spans.append((pos, end))
                yield from rec(pi + 1, end, spans)
                spans.pop()
        yield from rec(0, i, [])

    def _sorted_rules(self, rules, rule_order):
        key = tuple(id(r) for r in rules)
        hit = rule_order.get(key)
        if hit is None:
            hit = sorted(rules, key=lambda r: -self.scorer.score(r.local))
            rule_order[key] = hit
        return hit

    def _x_bundles(self, tokens, i, j, cells, patterns, rule_order):
        bundles = []
        length = j - i
        if length <= self.grammar.max_span:
            for pattern in patterns:
                for spans in self._match(pattern, tokens, i, j):
                    children = [cells.get(("X",) + s) for s in spans]
                    if any(not c for c in children):
                        continue
                    rules = self._sorted_rules(self.grammar.index[pattern], rule_order)
                    bundles.append(_Bundle(rules, children))
        if length == 1:
            word = tokens[i]
            synthetic = []
            if word not in self.grammar.source_vocab:
                synthetic.append(unknown_rule(word, self.config.unknown_penalty))
            if self.config.allow_null:
                synthetic.append(null_rule(word, self.config.null_penalty))
            for rule in synthetic:
                bundles.append(_Bundle([rule], []))
        return bundles

    def _s_bundles(self, j, cells):
        bundles = []
        x_whole = cells.get(("X", 0, j))
        if x_whole:
            bundles.append(_Bundle([GLUE_TOP], [x_whole]))
        for k in range(1, j):
            left = cells.get(("S", 0, k))
            right = cells.get(("X", k, j))
            if left and right:
                bundles.append(_Bundle([GLUE_CONCAT], [left, right]))
        return bundles

    # -- cube pruning -----------------------------------------------------------

    def _make_edge(self, rule, children, complete):
        delta, state = self.combiner.combine(rule.target, children, complete)
        local = rule.local.copy()
        local[LM_INDEX] += delta
        feats = local
        for c in children:
            feats = feats + c.features
        return Edge(rule, children, local), state, feats

    def _cube_prune(self, lhs, span, bundles, complete):
        beam = self.config.beam
        scorer = self.scorer
        heap = []
        seen = set()
        counter = itertools.count()

        def push(b, idx):
            if (b, idx) in seen:
                return
            bundle = bundles[b]
            if idx[0] >= len(bundle.rules):
                return
            for d, lst in enumerate(bundle.child_lists, 1):
                if idx[d] >= len(lst):
                    return
            seen.add((b, idx))
            children = tuple(lst[idx[d]] for d, lst in enumerate(bundle.child_lists, 1))
            edge, state, feats = self._make_edge(bundle.rules[idx[0]], children, complete)
            score = scorer.score(feats)
            heapq.heappush(heap, (-score, next(counter), b, idx, edge, state, feats))

        for b, bundle in enumerate(bundles):
            push(b, (0,) * (1 + len(bundle.child_lists)))

        items = {}
        order = []
        while heap and len(order) < beam:
            neg, _, b, idx, edge, state, feats = heapq.heappop(heap)
            key = state
            item = items.get(key)
            if item is None:
                item = Item(lhs, span, state, feats, -neg, edge)
                items[key] = item
                order.append(item)
            else:
                if -neg > item.score:
                    item.score = -neg
                    item.features = feats
                    item.edges.insert(0, edge)
                else:
                    item.edges.append(edge)
            for d in range(len(idx)):
                push(b, idx[:d] + (idx[d] + 1,) + idx[d + 1:])
        # stable sort keeps creation order among equal scores
        order.sort(key=lambda it: -it.score)
        return order

    # -- k-best extraction --------------------------------------------------------

    def extract_nbest(self, goal_items, source_id, n) -> NBestList:
        kb = _LazyKBest(self.scorer)
        nbest = NBestList(source_id, n)
        seen_surfaces = set()
        heap = []
        counter = itertools.count()
        for item in goal_items:
            d = kb.get(item, 0)
            if d is not None:
                heapq.heappush(heap, (-d.score, next(counter), item, 0, d))
        pops = 0
        while heap and len(nbest) < n and pops < self.config.kbest_pop_limit:
            _, _, item, rank, d = heapq.heappop(heap)
            pops += 1
            tokens = d.tokens()
            if tokens not in seen_surfaces:
                seen_surfaces.add(tokens)
                fv = FeatureVector(d.features)
                nbest.insert(Hypothesis(tokens, fv, self.scorer.score(fv.values)))
            nxt = kb.get(item, rank + 1)
            if nxt is not None:
                heapq.heappush(heap, (-nxt.score, next(counter), item, rank + 1, nxt))
        return nbest


class _Derivation:
    __slots__ = ("edge", "ranks", "children", "features", "score")

    def __init__(self, edge, ranks, children, features, score):
        self.edge = edge
        self.ranks = ranks
        self.children = children
        self.features = features
        self.score = score

    def tokens(self):
        out = []
        for sym in self.edge.rule.target:
            if isinstance(sym, str):
                out.append(sym)
            else:
                out.extend(self.children[sym - 1].tokens())
        return tuple(out)


class _LazyKBest:
    """Lazy k-best enumeration over the recombined chart (hypergraph)."""

    def __init__(self, scorer):
        self.scorer = scorer
        self.derivs = {}
        self.cands = {}
        self.seen = {}
        self.counter = itertools.count()

    def _build(self, edge, ranks):
        children = []
        for child, r in zip(edge.children, ranks):
            d = self.get(child, r)
            if d is None:
                return None
            children.append(d)
        feats = edge.local
        for c in children:
            feats = feats + c.features
        return _Derivation(edge, ranks, tuple(children), feats, self.scorer.score(feats))

    def _push(self, key, edge_no, edge, ranks):
        if (edge_no, ranks) in self.seen[key]:
            return
        self.seen[key].add((edge_no, ranks))
        d = self._build(edge, ranks)
        if d is not None:
            heapq.heappush(self.cands[key], (-d.score, next(self.counter), edge_no, d))

    def get(self, item, k):
        key = id(item)
        if key not in self.derivs:
            self.derivs[key] = []
            self.cands[key] = []
            self.seen[key] = set()
            for e_no, edge in enumerate(item.edges):
                self._push(key, e_no, edge, (0,) * len(edge.children))
        derivs = self.derivs[key]
        cands = self.cands[key]
        while len(derivs) <= k and cands:
            _, _, e_no, d = heapq.heappop(cands)
            derivs.append(d)
            for i in range(len(d.ranks)):
                ranks = d.ranks[:i] + (d.ranks[i] + 1,) + d.ranks[i + 1:]
                self._push(key, e_no, d.edge, ranks)
        return derivs[k] if k < len(derivs) else None


def decode(sentence, grammar, lm, scorer, beam=20, nbest_n=20, **options) -> NBestList:
    cfg = DecoderConfig(beam=beam, nbest=nbest_n, **options)
    return Decoder(grammar, lm, scorer, cfg).decode(sentence)


def rescore_nbest(nbest: NBestList, scorer) -> NBestList:
    """Recompute every model score with ``scorer`` and re-sort."""
    return nbest.map(lambda h: h.with_score(scorer.score(h.features.values)))


def decode_corpus(sentences, grammar, lm, scorer, config=None, threads=1):
    """Decode sentences in order; results keep input order for any thread count."""
    decoder = Decoder(grammar, lm, scorer, config)
    jobs = [(sid, sent) for sid, sent in enumerate(sentences)]
    if threads <= 1:
        return [decoder.decode(s, sid) for sid, s in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: decoder.decode(job[1], job[0]), jobs))


def features_to_array(fv):
    return fv.values if isinstance(fv, FeatureVector) else np.asarray(fv)
