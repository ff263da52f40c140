"""Synchronous CFG rules and the rule table.

Rule file lines look like::

    [X] ||| le [X,1] de [X,2] ||| the [X,2] of [X,1] ||| -0.5 -0.7 -0.4 -0.6

The four numbers are log10 p_fe, p_ef, lex_fe, lex_ef. Nonterminals are
stored as integers (1 and 2, renumbered so they appear in that order on the
source side); terminals are strings. Glue rules are built in, not read.
"""
from __future__ import annotations

import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from ..features import FEATURE_INDEX, NUM_FEATURES, FormatError

logger = logging.getLogger(__name__)

PHRASE = "phrase"
HIERARCHICAL = "hierarchical"
GLUE = "glue"
UNKNOWN = "unknown"
NULL = "null"

_GAP = re.compile(r"^\[X,(\d+)\]$")
MAX_NONTERMINALS = 2
DEFAULT_MAX_SPAN = 10


@dataclass(frozen=True, eq=False)
class Rule:
    lhs: str
    source: tuple
    target: tuple
    scores: tuple  # (p_fe, p_ef, lex_fe, lex_ef)
    kind: str
    local: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.local is None:
            object.__setattr__(self, "local", rule_local_features(self))

    @property
    def arity(self):
        return sum(1 for s in self.source if isinstance(s, int))

    def __str__(self):
        def show(side):
            return " ".join(f"[X,{s}]" if isinstance(s, int) else s for s in side)
        return f"[{self.lhs}] ||| {show(self.source)} ||| {show(self.target)}"


def rule_local_features(rule: Rule) -> np.ndarray:
    """Features a rule contributes by itself (everything except the LM)."""
    v = np.zeros(NUM_FEATURES)
    v[:4] = rule.scores
    v[FEATURE_INDEX["wc"]] = sum(1 for s in rule.target if isinstance(s, str))
    if rule.kind == GLUE:
        v[FEATURE_INDEX["gc"]] = 1
    elif rule.kind == HIERARCHICAL:
        v[FEATURE_INDEX["rc"]] = 1
    else:
        v[FEATURE_INDEX["pc"]] = 1
    if rule.kind == UNKNOWN:
        v[FEATURE_INDEX["uc"]] = 1
    if not rule.target and rule.kind != GLUE:
        v[FEATURE_INDEX["nc"]] = 1
    v.setflags(write=False)
    return v


GLUE_TOP = Rule("S", (1,), (1,), (0.0, 0.0, 0.0, 0.0), GLUE)
GLUE_CONCAT = Rule("S", (1, 2), (1, 2), (0.0, 0.0, 0.0, 0.0), GLUE)


def unknown_rule(word, penalty):
    return Rule("X", (word,), (word,), (penalty,) * 4, UNKNOWN)


def null_rule(word, penalty):
    return Rule("X", (word,), (), (penalty,) * 4, NULL)


def _parse_side(text, path, lineno):
    out = []
    for tok in text.split():
        m = _GAP.match(tok)
        if m:
            out.append(int(m.group(1)))
        elif tok.startswith("[") and tok.endswith("]") and len(tok) > 2:
            raise FormatError(f"unsupported nonterminal {tok!r}", path, lineno)
        else:
            out.append(tok)
    return out


def parse_rule(line, path=None, lineno=None) -> Rule:
    parts = [p.strip() for p in line.split("|||")]
    if len(parts) != 4:
        raise FormatError("expected 4 fields separated by |||", path, lineno)
    lhs, src_text, tgt_text, score_text = parts
    if lhs != "[X]":
        raise FormatError(f"rule files hold [X] rules only, got {lhs!r}", path, lineno)
    source = _parse_side(src_text, path, lineno)
    target = _parse_side(tgt_text, path, lineno)
    src_nts = [s for s in source if isinstance(s, int)]
    tgt_nts = [s for s in target if isinstance(s, int)]
    if len(src_nts) > MAX_NONTERMINALS:
        raise FormatError(f"rule has {len(src_nts)} nonterminals; at most "
                          f"{MAX_NONTERMINALS} are allowed", path, lineno)
    if len(set(src_nts)) != len(src_nts) or sorted(src_nts) != sorted(tgt_nts):
        raise FormatError("nonterminals must be aligned one-to-one across sides", path, lineno)
    if not any(isinstance(s, str) for s in source):
        raise FormatError("source side needs at least one terminal", path, lineno)
    try:
        scores = tuple(float(v) for v in score_text.split())
    except ValueError as exc:
        raise FormatError(f"bad score ({exc})", path, lineno) from None
    if len(scores) != 4:
        raise FormatError(f"expected 4 scores, got {len(scores)}", path, lineno)
    for v in scores:
        if v > 0:
            logger.warning("%s:%s: positive log probability %g", path, lineno, v)
    # renumber so source-side order is 1, 2
    renumber = {old: new for new, old in enumerate(src_nts, 1)}
    source = tuple(renumber[s] if isinstance(s, int) else s for s in source)
    target = tuple(renumber[s] if isinstance(s, int) else s for s in target)
    kind = HIERARCHICAL if src_nts else PHRASE
    return Rule("X", source, target, scores, kind)


class Grammar:
    """Rule table indexed by source side."""

    def __init__(self, rules, max_span=DEFAULT_MAX_SPAN):
        self.rules = list(rules)
        self.max_span = max_span
        self.index = defaultdict(list)
        for r in self.rules:
            self.index[r.source].append(r)
        self.source_vocab = {s for r in self.rules for s in r.source if isinstance(s, str)}

    def lookup(self, source):
        return list(self.index.get(tuple(source), ()))

    def patterns(self):
        return self.index.keys()

    def __len__(self):
        return len(self.rules)


def read_grammar(stream, path=None, max_span=DEFAULT_MAX_SPAN) -> Grammar:
    rules = []
    for lineno, raw in enumerate(stream, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        rules.append(parse_rule(line, path, lineno))
    return Grammar(rules, max_span)


def load_grammar(path, max_span=DEFAULT_MAX_SPAN) -> Grammar:
    with open(path, encoding="utf-8") as f:
        return read_grammar(f, path, max_span)


def format_rule(rule: Rule) -> str:
    return f"{rule} ||| " + " ".join(repr(float(v)) for v in rule.scores)
