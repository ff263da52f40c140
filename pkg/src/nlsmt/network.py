"""Hypothesis scorers: the linear baseline and the masked two-layer network.

Both scorers expose the same small surface used by the decoder and the
tuner:

* ``score(x)`` for one feature vector (the decoder's path),
* ``batch_scores(X)`` for an ``(N, 11)`` matrix,
* ``parameter_vector()`` / ``with_parameters(v)`` over the *free* parameters,
* ``accumulate_gradient(X, coef)`` returning ``sum_i coef[i] * d score(X[i]) / d theta``.

Masked hidden weights are not free parameters, so nothing the optimizer
does can move them off zero.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .features import FEATURE_INDEX, FEATURE_NAMES, NUM_FEATURES, FeatureVector, FormatError


class DimensionError(ValueError):
    pass


def sigmoid(z):
    # tanh form: no overflow for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _as_array(x, size):
    arr = x.values if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if arr.shape != (size,):
        raise DimensionError(f"expected an input of size {size}, got shape {arr.shape}")
    return arr


# -- linear baseline -----------------------------------------------------------

class LinearModel:
    """Weighted sum of the feature values."""

    kind = "linear"

    def __init__(self, weights):
        w = np.array(weights, dtype=np.float64)
        if w.shape != (NUM_FEATURES,):
            raise DimensionError(f"linear model needs {NUM_FEATURES} weights, got {w.shape}")
        w.setflags(write=False)
        self.weights = w

    @classmethod
    def from_dict(cls, named):
        w = np.zeros(NUM_FEATURES)
        for name, value in named.items():
            w[FEATURE_INDEX[name]] = value
        return cls(w)

    def score(self, x) -> float:
        return float(np.dot(self.weights, _as_array(x, NUM_FEATURES)))

    def batch_scores(self, X):
        return np.asarray(X, dtype=np.float64) @ self.weights

    def parameter_vector(self):
        return self.weights.copy()

    def with_parameters(self, vec):
        return LinearModel(vec)

    def accumulate_gradient(self, X, coef):
        return np.asarray(coef) @ np.asarray(X)

    def __eq__(self, other):
        return isinstance(other, LinearModel) and np.array_equal(self.weights, other.weights)

    def __repr__(self):
        return f"LinearModel({self.weights.tolist()})"


def score_linear(model: LinearModel, x) -> float:
    return model.score(x)


# -- topologies ------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureGrouping:
    """Disjoint named groups of input features covering all inputs."""

    groups: tuple  # ((name, (feature index, ...)), ...)
    input_size: int = NUM_FEATURES

    def __post_init__(self):
        seen = []
        for name, members in self.groups:
            if not members:
                raise ValueError(f"feature group {name!r} is empty")
            seen.extend(members)
        if sorted(seen) != list(range(self.input_size)):
            raise ValueError("feature groups must be disjoint and cover every input")

    @classmethod
    def from_names(cls, named_groups):
        groups = tuple((g, tuple(FEATURE_INDEX[f] for f in feats)) for g, feats in named_groups)
        return cls(groups)

    def sizes(self):
        return [len(m) for _, m in self.groups]

    def to_string(self):
        parts = []
        for name, members in self.groups:
            labels = [FEATURE_NAMES[i] if self.input_size == NUM_FEATURES else str(i)
                      for i in members]
            parts.append(f"{name}:{','.join(labels)}")
        return ";".join(parts)

    @classmethod
    def parse(cls, text, input_size=NUM_FEATURES):
        groups = []
        for chunk in text.split(";"):
            name, _, feats = chunk.partition(":")
            if not feats:
                raise ValueError(f"bad feature group {chunk!r}")
            members = []
            for f in feats.split(","):
                members.append(FEATURE_INDEX[f] if f in FEATURE_INDEX else int(f))
            groups.append((name, tuple(members)))
        return cls(tuple(groups), input_size)


DEFAULT_GROUPING = FeatureGrouping.from_names([
    ("lm", ["lm"]),
    ("trans", ["p_fe", "p_ef"]),
    ("lex", ["lex_fe", "lex_ef"]),
    ("wc", ["wc"]),
    ("counts", ["pc", "rc", "gc", "uc", "nc"]),
])


@dataclass(frozen=True, eq=False)
class NetworkTopology:
    kind: str
    mask: np.ndarray  # (hidden_size, input_size) bool
    grouping: FeatureGrouping | None = None
    degrees: tuple | None = None
    hidden_activation: str = "sigmoid"
    output_activation: str = "identity"

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 2 or mask.shape[0] < 1 or mask.shape[1] < 1:
            raise ValueError(f"mask must be a non-empty 2-d array, got shape {mask.shape}")
        if not mask.any(axis=1).all():
            raise ValueError("every hidden node needs at least one input")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def input_size(self):
        return self.mask.shape[1]

    @property
    def hidden_size(self):
        return self.mask.shape[0]

    @property
    def num_hidden_weights(self):
        return int(self.mask.sum())

    @property
    def num_parameters(self):
        return self.num_hidden_weights + 2 * self.hidden_size + 1

    def __eq__(self, other):
        return (isinstance(other, NetworkTopology) and self.kind == other.kind
                and np.array_equal(self.mask, other.mask) and self.grouping == other.grouping
                and self.degrees == other.degrees)

    def __hash__(self):
        return hash((self.kind, self.mask.tobytes(), self.mask.shape))


def build_standard(k: int, m: int) -> NetworkTopology:
    if k < 1 or m < 1:
        raise ValueError("standard topology needs k >= 1 and m >= 1")
    return NetworkTopology("standard", np.ones((m, k), dtype=bool))


def build_tdn(k: int = NUM_FEATURES) -> NetworkTopology:
    """One hidden node per unordered pair of inputs."""
    if k < 2:
        raise ValueError("a two-degree network needs at least 2 inputs")
    pairs = list(itertools.combinations(range(k), 2))
    mask = np.zeros((len(pairs), k), dtype=bool)
    for row, (a, b) in enumerate(pairs):
        mask[row, [a, b]] = True
    return NetworkTopology("tdn", mask)


def build_gn(grouping: FeatureGrouping = DEFAULT_GROUPING, max_degree: int | None = None,
             degrees=None) -> NetworkTopology:
    """Grouped network: each hidden node reads at most one feature per group.

    Without arguments the hidden layer holds every cross-group pair plus
    every full one-feature-per-group tuple. ``max_degree`` instead selects
    all degrees ``2..max_degree``; ``degrees`` lists them explicitly.
    """
    n_groups = len(grouping.groups)
    if degrees is None:
        if max_degree is None:
            degrees = sorted({2, n_groups})
        else:
            if not 2 <= max_degree <= n_groups:
                raise ValueError(f"max_degree must be in [2, {n_groups}]")
            degrees = range(2, max_degree + 1)
    degrees = tuple(sorted(set(degrees)))
    if not degrees or degrees[0] < 2 or degrees[-1] > n_groups:
        raise ValueError(f"degrees must lie in [2, {n_groups}]")
    rows = []
    for d in degrees:
        for chosen in itertools.combinations(range(n_groups), d):
            member_lists = [grouping.groups[g][1] for g in chosen]
            for feats in itertools.product(*member_lists):
                row = np.zeros(grouping.input_size, dtype=bool)
                row[list(feats)] = True
                rows.append(row)
    return NetworkTopology("gn", np.array(rows), grouping=grouping, degrees=degrees)


# -- parameters ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModelParams:
    topology: NetworkTopology
    hidden_weights: np.ndarray  # M_h, (m, k)
    hidden_bias: np.ndarray     # b_h, (m,)
    output_weights: np.ndarray  # M_o, (m,)
    output_bias: float = 0.0    # b_o
    seed: int | None = field(default=None, compare=False)

    kind = "network"

    def __post_init__(self):
        m, k = self.topology.mask.shape
        M_h = np.array(self.hidden_weights, dtype=np.float64)
        b_h = np.array(self.hidden_bias, dtype=np.float64).reshape(-1)
        M_o = np.array(self.output_weights, dtype=np.float64).reshape(-1)
        if M_h.shape != (m, k) or b_h.shape != (m,) or M_o.shape != (m,):
            raise DimensionError("parameter shapes do not match the topology")
        if np.any(M_h[~self.topology.mask] != 0):
            raise ValueError("masked hidden weights must be exactly zero")
        for arr in (M_h, b_h, M_o):
            arr.setflags(write=False)
        object.__setattr__(self, "hidden_weights", M_h)
        object.__setattr__(self, "hidden_bias", b_h)
        object.__setattr__(self, "output_weights", M_o)
        object.__setattr__(self, "output_bias", float(self.output_bias))

    @classmethod
    def zeros(cls, topology):
        m, k = topology.mask.shape
        return cls(topology, np.zeros((m, k)), np.zeros(m), np.zeros(m), 0.0)

    # scoring
    def score(self, x) -> float:
        return score_network(self, x)

    def batch_scores(self, X):
        X = np.asarray(X, dtype=np.float64)
        A = sigmoid(X @ self.hidden_weights.T + self.hidden_bias)
        return A @ self.output_weights + self.output_bias

    # flat free-parameter view: [M_h[mask], b_h, M_o, b_o]
    def parameter_vector(self):
        return np.concatenate([self.hidden_weights[self.topology.mask], self.hidden_bias,
                               self.output_weights, [self.output_bias]])

    def with_parameters(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        topo = self.topology
        m = topo.hidden_size
        nnz = topo.num_hidden_weights
        if vec.shape != (nnz + 2 * m + 1,):
            raise DimensionError("parameter vector has the wrong length")
        M_h = np.zeros(topo.mask.shape)
        M_h[topo.mask] = vec[:nnz]
        return ModelParams(topo, M_h, vec[nnz:nnz + m], vec[nnz + m:nnz + 2 * m],
                           float(vec[-1]), seed=self.seed)

    def accumulate_gradient(self, X, coef):
        X = np.asarray(X, dtype=np.float64)
        coef = np.asarray(coef, dtype=np.float64)
        A = sigmoid(X @ self.hidden_weights.T + self.hidden_bias)
        delta = A * (1.0 - A) * self.output_weights * coef[:, None]
        d_hidden = delta.T @ X
        return np.concatenate([d_hidden[self.topology.mask], delta.sum(axis=0),
                               coef @ A, [coef.sum()]])

    def gradient_params(self, vec):
        """Wrap a flat gradient in a ModelParams-shaped container."""
        return self.with_parameters(vec)

    def l1_norm(self):
        return float(np.abs(self.parameter_vector()).sum())

    def __eq__(self, other):
        return (isinstance(other, ModelParams) and self.topology == other.topology
                and np.array_equal(self.parameter_vector(), other.parameter_vector()))

    def __repr__(self):
        t = self.topology
        return f"ModelParams(kind={t.kind}, k={t.input_size}, m={t.hidden_size})"


def score_network(params: ModelParams, x, hidden_activation=None) -> float:
    """Two-layer score: identity(M_o . sigmoid(M_h x + b_h) + b_o).

    ``hidden_activation`` replaces the sigmoid; it exists for tests.
    """
    arr = _as_array(x, params.topology.input_size)
    act = sigmoid if hidden_activation is None else hidden_activation
    hidden = act(params.hidden_weights @ arr + params.hidden_bias)
    return float(np.dot(params.output_weights, hidden) + params.output_bias)


def init_random(topology: NetworkTopology, seed: int, scale: float = 0.1) -> ModelParams:
    """Uniform(-scale, scale) draws for every free parameter, in flat order."""
    rng = np.random.default_rng(seed)
    vec = rng.uniform(-scale, scale, size=topology.num_parameters)
    template = ModelParams(topology, np.zeros(topology.mask.shape), np.zeros(topology.hidden_size),
                           np.zeros(topology.hidden_size), 0.0, seed=seed)
    return template.with_parameters(vec)


def hinge(better_score, worse_score):
    return max(worse_score - better_score + 1.0, 0.0)


def backprop_pair(params: ModelParams, better, worse):
    """Hinge loss of one ordered pair and its gradient (ModelParams-shaped).

    The gradient is zero when the hinge is inactive, including at the kink.
    """
    xb = _as_array(better, params.topology.input_size)
    xw = _as_array(worse, params.topology.input_size)
    loss = hinge(score_network(params, xb), score_network(params, xw))
    if loss > 0.0:
        grad = params.accumulate_gradient(np.stack([xb, xw]), np.array([-1.0, 1.0]))
    else:
        grad = np.zeros(params.topology.num_parameters)
    return loss, params.gradient_params(grad)


# -- model files -------------------------------------------------------------------

MODEL_HEADER = "# nlsmt model v1"
_NETWORK_SECTIONS = ("mask", "hidden_weights", "hidden_bias", "output_weights", "output_bias")


def _fmt(x):
    return repr(float(x))


def model_to_string(model) -> str:
    lines = [MODEL_HEADER]
    if isinstance(model, LinearModel):
        lines += ["kind = linear", f"input_size = {NUM_FEATURES}", "[weights]",
                  " ".join(_fmt(v) for v in model.weights), "[end]"]
        return "\n".join(lines) + "\n"
    topo = model.topology
    lines += [
        f"kind = {topo.kind}",
        f"input_size = {topo.input_size}",
        f"hidden_size = {topo.hidden_size}",
        f"grouping = {topo.grouping.to_string() if topo.grouping else 'none'}",
        f"degrees = {','.join(map(str, topo.degrees)) if topo.degrees else 'none'}",
        f"seed = {model.seed if model.seed is not None else 'none'}",
        f"hidden_activation = {topo.hidden_activation}",
        f"output_activation = {topo.output_activation}",
        "[mask]",
    ]
    lines += ["".join("1" if b else "0" for b in row) for row in topo.mask]
    lines.append("[hidden_weights]")
    lines += [" ".join(_fmt(v) for v in row) for row in model.hidden_weights]
    lines.append("[hidden_bias]")
    lines.append(" ".join(_fmt(v) for v in model.hidden_bias))
    lines.append("[output_weights]")
    lines.append(" ".join(_fmt(v) for v in model.output_weights))
    lines.append("[output_bias]")
    lines.append(_fmt(model.output_bias))
    lines.append("[end]")
    return "\n".join(lines) + "\n"


def save_model(model, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(model_to_string(model))


def _floats(text, path, lineno, expected=None):
    try:
        vals = [float(v) for v in text.split()]
    except ValueError as exc:
        raise FormatError(f"bad number ({exc})", path, lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise FormatError("non-finite parameter", path, lineno)
    if expected is not None and len(vals) != expected:
        raise FormatError(f"expected {expected} values, got {len(vals)}", path, lineno)
    return vals


def model_from_string(text, path=None):
    """Parse a model file. Errors name the file line or the missing section."""
    lines = text.split("\n")
    if not lines or lines[0].strip() != MODEL_HEADER:
        raise FormatError(f"missing header {MODEL_HEADER!r}", path, 1)
    header = {}
    sections = {}
    current = None
    for lineno, raw in enumerate(lines[1:], 2):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current in sections:
                raise FormatError(f"duplicate section [{current}]", path, lineno)
            sections[current] = []
            continue
        if current is None:
            key, sep, value = line.partition("=")
            if not sep:
                raise FormatError(f"expected 'key = value', got {line!r}", path, lineno)
            header[key.strip()] = value.strip()
        else:
            sections[current].append((lineno, line))
    kind = header.get("kind")
    if kind is None:
        raise FormatError("missing header key 'kind'", path)
    expected = ("weights",) if kind == "linear" else _NETWORK_SECTIONS
    for name in expected + ("end",):
        if name not in sections:
            raise FormatError(f"missing section [{name}]", path)

    if kind == "linear":
        rows = sections["weights"]
        if len(rows) != 1:
            raise FormatError("[weights] must hold one line", path)
        lineno, row = rows[0]
        return LinearModel(_floats(row, path, lineno, NUM_FEATURES))

    try:
        k = int(header["input_size"])
        m = int(header["hidden_size"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad or missing size in header ({exc})", path) from None
    grouping = None
    if header.get("grouping", "none") != "none":
        try:
            grouping = FeatureGrouping.parse(header["grouping"], k)
        except (ValueError, KeyError) as exc:
            raise FormatError(f"bad grouping ({exc})", path) from None
    degrees = None
    if header.get("degrees", "none") != "none":
        degrees = tuple(int(d) for d in header["degrees"].split(","))
    seed = header.get("seed", "none")
    seed = None if seed == "none" else int(seed)

    mask_rows = sections["mask"]
    if len(mask_rows) != m:
        raise FormatError(f"[mask] needs {m} rows, got {len(mask_rows)}", path)
    mask = np.zeros((m, k), dtype=bool)
    for r, (lineno, row) in enumerate(mask_rows):
        if len(row) != k or set(row) - {"0", "1"}:
            raise FormatError(f"mask row must be {k} characters of 0/1", path, lineno)
        mask[r] = [c == "1" for c in row]
    try:
        topo = NetworkTopology(kind, mask, grouping=grouping, degrees=degrees)
    except ValueError as exc:
        raise FormatError(str(exc), path) from None

    hw_rows = sections["hidden_weights"]
    if len(hw_rows) != m:
        raise FormatError(f"[hidden_weights] needs {m} rows, got {len(hw_rows)}", path)
    M_h = np.array([_floats(row, path, ln, k) for ln, row in hw_rows])
    if np.any(M_h[~mask] != 0):
        raise FormatError("nonzero weight at a masked position", path)

    def single_row(name, n):
        rows = sections[name]
        if len(rows) != 1:
            raise FormatError(f"[{name}] must hold one line", path)
        return _floats(rows[0][1], path, rows[0][0], n)

    b_h = single_row("hidden_bias", m)
    M_o = single_row("output_weights", m)
    b_o = single_row("output_bias", 1)[0]
    return ModelParams(topo, M_h, b_h, M_o, b_o, seed=seed)


def load_model(path):
    with open(path, encoding="utf-8") as f:
        return model_from_string(f.read(), path)


def parse_scorer_kind(text):
    """Parse ``linear | standard:m | tdn | gn | gn:max_degree`` into a topology.

    Returns ``None`` for the linear scorer.
    """
    name, _, arg = text.partition(":")
    if name == "linear":
        return None
    if name == "standard":
        return build_standard(NUM_FEATURES, int(arg or 20))
    if name == "tdn":
        return build_tdn(NUM_FEATURES)
    if name == "gn":
        return build_gn(DEFAULT_GROUPING, int(arg)) if arg else build_gn(DEFAULT_GROUPING)
    raise ValueError(f"unknown scorer kind {text!r}")
