"""Core value types shared by the decoder, the scorers and the tuner.

A hypothesis carries eleven dense features in a fixed order. Probability
features are log10 values; the remaining six are non-negative counts.
"""
from __future__ import annotations

import dataclasses
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "p_fe", "p_ef", "lex_fe", "lex_ef", "lm",
    "wc", "pc", "rc", "gc", "uc", "nc",
)
NUM_FEATURES = len(FEATURE_NAMES)
PROB_FEATURES = FEATURE_NAMES[:5]
COUNT_FEATURES = FEATURE_NAMES[5:]
FEATURE_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}

FIELD_SEP = " ||| "


class FormatError(ValueError):
    """Raised for malformed n-best, pair, grammar, model or corpus files."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += str(path)
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)


def canonical_order():
    """Names of the eleven features, in input-node order."""
    return list(FEATURE_NAMES)


class FeatureVector:
    """Immutable vector of the eleven canonical features."""

    __slots__ = ("_values",)

    def __init__(self, values=None, **named):
        if values is None:
            arr = np.zeros(NUM_FEATURES)
            for name, value in named.items():
                arr[FEATURE_INDEX[name]] = value
        else:
            if named:
                raise TypeError("pass either a sequence or named features, not both")
            arr = np.array(values, dtype=np.float64)
            if arr.shape != (NUM_FEATURES,):
                raise ValueError(
                    f"feature vector needs {NUM_FEATURES} values, got shape {arr.shape}")
        arr.setflags(write=False)
        self._values = arr

    @classmethod
    def zeros(cls):
        return cls()

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __getitem__(self, key):
        if isinstance(key, str):
            key = FEATURE_INDEX[key]
        return float(self._values[key])

    def __add__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return FeatureVector(self._values + other._values)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return bool(np.array_equal(self._values, other._values))

    def __hash__(self):
        return hash(self._values.tobytes())

    def __iter__(self):
        return iter(self._values.tolist())

    def __len__(self):
        return NUM_FEATURES

    def as_dict(self):
        return dict(zip(FEATURE_NAMES, self._values.tolist()))

    def check(self):
        """Log a warning for values outside their natural range; never raises."""
        for name in PROB_FEATURES:
            if self[name] > 0:
                logger.warning("log-probability feature %s is positive (%g)", name, self[name])
        for name in COUNT_FEATURES:
            v = self[name]
            if v < 0 or v != int(v):
                logger.warning("count feature %s is not a non-negative integer (%g)", name, v)

    def __repr__(self):
        inner = ", ".join(f"{n}={v:g}" for n, v in zip(FEATURE_NAMES, self._values))
        return f"FeatureVector({inner})"


def feature_add(a: FeatureVector, b: FeatureVector) -> FeatureVector:
    return a + b


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple
    features: FeatureVector
    model_score: float = 0.0
    eval_score: float = 0.0

    @property
    def surface(self) -> str:
        return " ".join(self.tokens)

    def with_eval(self, eval_score):
        return dataclasses.replace(self, eval_score=float(eval_score))

    def with_score(self, model_score):
        return dataclasses.replace(self, model_score=float(model_score))


class NBestList:
    """Bounded, deduplicated list of hypotheses sorted by model score.

    Ties keep insertion order. Inserting an existing surface string keeps
    whichever copy scores higher.
    """

    def __init__(self, source_id: int, capacity: int, hypotheses: Iterable[Hypothesis] = ()):
        if capacity < 1:
            raise ValueError("n-best capacity must be >= 1")
        self.source_id = source_id
        self.capacity = capacity
        self._items = []  # (neg score, insertion seq, hypothesis)
        self._seq = 0
        for h in hypotheses:
            self.insert(h)

    def insert(self, hyp: Hypothesis) -> bool:
        """Insert ``hyp``; return True if the list changed."""
        for idx, (_, _, old) in enumerate(self._items):
            if old.tokens == hyp.tokens:
                if hyp.model_score > old.model_score:
                    del self._items[idx]
                    break
                return False
        entry = (-hyp.model_score, self._seq, hyp)
        self._seq += 1
        # linear insertion keeps the list sorted; lists are short
        pos = len(self._items)
        while pos > 0 and self._items[pos - 1][:2] > entry[:2]:
            pos -= 1
        self._items.insert(pos, entry)
        if len(self._items) > self.capacity:
            self._items.pop()
        return True

    @property
    def hypotheses(self):
        return [e[2] for e in self._items]

    def __len__(self):
        return len(self._items)

    def __iter__(self) -> Iterator[Hypothesis]:
        return iter(self.hypotheses)

    def __getitem__(self, i):
        return self._items[i][2]

    def best(self):
        return self._items[0][2] if self._items else None

    def map(self, fn):
        """New list with ``fn`` applied to each hypothesis (re-sorted)."""
        return NBestList(self.source_id, self.capacity, [fn(h) for h in self.hypotheses])

    def with_evals(self, evals: Sequence[float]):
        """Attach eval scores positionally, keeping the current order."""
        hyps = self.hypotheses
        if len(evals) != len(hyps):
            raise ValueError("one eval score per hypothesis is required")
        out = NBestList(self.source_id, self.capacity)
        out._items = [(e[0], e[1], e[2].with_eval(v)) for e, v in zip(self._items, evals)]
        out._seq = self._seq
        return out

    def __repr__(self):
        return f"NBestList(source_id={self.source_id}, n={len(self)}/{self.capacity})"


@dataclass(frozen=True)
class TrainingPair:
    source_id: int
    better: Hypothesis
    worse: Hypothesis
    weight: float = 1.0
    born_iteration: int = 0

    def reweighted(self, weight):
        return dataclasses.replace(self, weight=float(weight))


@dataclass
class ParallelCorpus:
    sources: list = field(default_factory=list)
    references: list = field(default_factory=list)  # list of list of token tuples

    def __post_init__(self):
        if len(self.sources) != len(self.references):
            raise ValueError("every source sentence needs its references")
        for i, (src, refs) in enumerate(zip(self.sources, self.references)):
            if not src:
                raise ValueError(f"sentence {i}: empty source")
            if not refs:
                raise ValueError(f"sentence {i}: no reference")
            if any(not r for r in refs):
                raise ValueError(f"sentence {i}: empty reference")

    def __len__(self):
        return len(self.sources)

    def __iter__(self):
        return iter(zip(self.sources, self.references))

    @classmethod
    def from_files(cls, source_path, reference_paths):
        sources = [tuple(line.split()) for line in read_lines(source_path)]
        ref_sets = [[tuple(line.split()) for line in read_lines(p)] for p in reference_paths]
        if not ref_sets:
            raise ValueError("at least one reference file is required")
        for p, refs in zip(reference_paths, ref_sets):
            if len(refs) != len(sources):
                raise FormatError(
                    f"{len(refs)} reference lines for {len(sources)} source lines", path=p)
        references = [[refs[i] for refs in ref_sets] for i in range(len(sources))]
        return cls(sources, references)


def read_lines(path):
    with open(path, encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def format_number(x: float) -> str:
    return "%.17g" % x


# -- n-best file format ------------------------------------------------------

def format_hypothesis(source_id: int, hyp: Hypothesis) -> str:
    feats = " ".join(format_number(v) for v in hyp.features)
    return FIELD_SEP.join([str(source_id), " ".join(hyp.tokens), feats,
                           format_number(hyp.model_score)])


def write_nbest(stream, nbests: Iterable[NBestList]):
    for nb in nbests:
        for hyp in nb:
            stream.write(format_hypothesis(nb.source_id, hyp) + "\n")


def _parse_features(text, path, lineno):
    try:
        vals = [float(v) for v in text.split()]
    except ValueError as exc:
        raise FormatError(f"bad feature value ({exc})", path, lineno) from None
    if len(vals) != NUM_FEATURES:
        raise FormatError(f"expected {NUM_FEATURES} features, got {len(vals)}", path, lineno)
    return FeatureVector(vals)


def parse_nbest_line(line, path=None, lineno=None):
    parts = line.split("|||")
    if len(parts) != 4:
        raise FormatError("expected 4 fields separated by |||", path, lineno)
    try:
        source_id = int(parts[0])
        score = float(parts[3])
    except ValueError as exc:
        raise FormatError(str(exc), path, lineno) from None
    tokens = tuple(parts[1].split())
    return source_id, Hypothesis(tokens, _parse_features(parts[2], path, lineno), score)


def read_nbest(source, capacity=None):
    """Read an n-best file (path or text stream) into a list of NBestList.

    Lists come back in order of first appearance of each source id.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as f:
            return read_nbest(f, capacity)
    grouped = {}
    path = getattr(source, "name", None)
    for lineno, line in enumerate(source, 1):
        line = line.rstrip("\n")
        if not line.strip():
            continue
        sid, hyp = parse_nbest_line(line, path, lineno)
        grouped.setdefault(sid, []).append(hyp)
    out = []
    for sid, hyps in grouped.items():
        out.append(NBestList(sid, capacity or max(len(hyps), 1), hyps))
    return out


def nbest_to_string(nbests):
    buf = io.StringIO()
    write_nbest(buf, nbests)
    return buf.getvalue()
