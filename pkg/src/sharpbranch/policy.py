"""Graph neural network branching policy over literal-clause incidence graphs.

Literal nodes come in adjacent pairs: node ``2*i`` is the positive literal
of the i-th component variable (ascending), node ``2*i + 1`` its negation.
Messages alternate literal -> clause, where a clause sums the concatenated
pair ``[h_l, h_not_l]`` of each of its literals, and clause -> literal. Node
updates use GIN aggregation ``MLP((1 + eps) * self + sum(neighbours))``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

import numpy as np
import scipy.sparse as sp

from .counting import Component
from .formula import Trail

MAGIC = b"NSHP"
FORMAT_VERSION = 1

FLAG_TIME = 1
FLAG_SCORE = 2
FLAG_TIME_ONLY = 4


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    iterations: int = 2
    use_time: bool = False
    use_score_feature: bool = False
    time_only: bool = False
    epsilon: float = 0.0
    embed_dim: int = 32
    message_hidden: int = 32
    score_hidden: int = 32
    decision_hidden: tuple[int, ...] = (256, 64)

    def __post_init__(self):
        if self.time_only and not self.use_time:
            raise PolicyError("time_only requires use_time")
        if self.iterations < 0:
            raise PolicyError("iterations must be non-negative")

    @property
    def flags(self) -> int:
        return ((FLAG_TIME if self.use_time else 0)
                | (FLAG_SCORE if self.use_score_feature else 0)
                | (FLAG_TIME_ONLY if self.time_only else 0))

    @property
    def decision_input(self) -> int:
        return (0 if self.time_only else self.embed_dim) + (1 if self.use_time else 0)


def _mlp_layout(prefix: str, dims) -> list[tuple[str, tuple[int, ...]]]:
    out = []
    for i in range(len(dims) - 1):
        out.append((f"{prefix}.w{i}", (dims[i], dims[i + 1])))
        out.append((f"{prefix}.b{i}", (dims[i + 1],)))
    return out


def param_layout(config: PolicyConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list defining the flat parameter vector."""
    d, mh = config.embed_dim, config.message_hidden
    layout: list[tuple[str, tuple[int, ...]]] = []
    if not config.time_only:
        if config.use_score_feature:
            layout += _mlp_layout("score", (2, config.score_hidden, d))
        else:
            layout.append(("h0_literal", (d,)))
        layout.append(("h0_clause", (d,)))
        for k in range(config.iterations):
            layout += _mlp_layout(f"clause{k}", (2 * d, mh, d))
            layout += _mlp_layout(f"literal{k}", (d, mh, d))
    layout += _mlp_layout("decision", (config.decision_input, *config.decision_hidden, 1))
    return layout


def param_count(config: PolicyConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_layout(config))


class PolicyParams:
    """A flat float64 vector with named array views into it."""

    def __init__(self, flat, config: PolicyConfig):
        flat = np.array(flat, dtype=np.float64).ravel()
        expected = param_count(config)
        if flat.size != expected:
            raise PolicyError(f"flat length {flat.size} does not match config ({expected})")
        flat.setflags(write=False)
        self.flat = flat
        self.config = config
        self.arrays: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in param_layout(config):
            size = int(np.prod(shape))
            self.arrays[name] = flat[offset:offset + size].reshape(shape)
            offset += size

    def __getitem__(self, name):
        return self.arrays[name]

    def __len__(self):
        return self.flat.size

    def mlp(self, prefix: str) -> list[tuple[np.ndarray, np.ndarray]]:
        layers = []
        i = 0
        while f"{prefix}.w{i}" in self.arrays:
            layers.append((self.arrays[f"{prefix}.w{i}"], self.arrays[f"{prefix}.b{i}"]))
            i += 1
        return layers


def flatten_params(params: PolicyParams) -> np.ndarray:
    return params.flat.copy()


def unflatten_params(flat, config: PolicyConfig) -> PolicyParams:
    return PolicyParams(flat, config)


def init_params(config: PolicyConfig, rng: np.random.Generator) -> PolicyParams:
    """He-normal weights, zero biases, standard-normal initial embeddings."""
    parts = []
    for name, shape in param_layout(config):
        if name.startswith("h0_"):
            parts.append(rng.standard_normal(shape))
        elif ".w" in name:
            parts.append(rng.standard_normal(shape) * np.sqrt(2.0 / shape[0]))
        else:
            parts.append(np.zeros(shape))
    return PolicyParams(np.concatenate([p.ravel() for p in parts]), config)


def zero_params(config: PolicyConfig) -> PolicyParams:
    return PolicyParams(np.zeros(param_count(config)), config)


# -- file format -----------------------------------------------------------

def write_params(fh: BinaryIO, params: PolicyParams) -> None:
    cfg = params.config
    dims = [cfg.iterations, cfg.flags, cfg.embed_dim, cfg.message_hidden, cfg.score_hidden,
            len(cfg.decision_hidden), *cfg.decision_hidden]
    fh.write(MAGIC)
    fh.write(struct.pack("<II", FORMAT_VERSION, len(dims)))
    fh.write(struct.pack(f"<{len(dims)}I", *dims))
    fh.write(struct.pack("<dQ", cfg.epsilon, params.flat.size))
    fh.write(params.flat.astype("<f8").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise PolicyError("truncated parameter file")
    return data


def read_params(fh: BinaryIO) -> PolicyParams:
    if _read_exact(fh, 4) != MAGIC:
        raise PolicyError("not a parameter file (bad magic)")
    version, ndims = struct.unpack("<II", _read_exact(fh, 8))
    if version != FORMAT_VERSION:
        raise PolicyError(f"unsupported format version {version}")
    dims = struct.unpack(f"<{ndims}I", _read_exact(fh, 4 * ndims))
    k, flags, d, mh, sh, nh = dims[:6]
    hidden = tuple(dims[6:6 + nh])
    epsilon, length = struct.unpack("<dQ", _read_exact(fh, 16))
    config = PolicyConfig(
        iterations=k, use_time=bool(flags & FLAG_TIME), use_score_feature=bool(flags & FLAG_SCORE),
        time_only=bool(flags & FLAG_TIME_ONLY), epsilon=epsilon, embed_dim=d, message_hidden=mh,
        score_hidden=sh, decision_hidden=hidden,
    )
    if length != param_count(config):
        raise PolicyError(f"stored length {length} does not match config ({param_count(config)})")
    flat = np.frombuffer(_read_exact(fh, 8 * length), dtype="<f8").astype(np.float64)
    return PolicyParams(flat, config)


def save_params(path, params: PolicyParams) -> None:
    with open(path, "wb") as fh:
        write_params(fh, params)


def load_params(path) -> PolicyParams:
    with open(path, "rb") as fh:
        return read_params(fh)


# -- graph -----------------------------------------------------------------

@dataclass
class LIG:
    vars: np.ndarray            # component variables, ascending
    clause_ids: np.ndarray      # component clauses, ascending
    edge_clause: np.ndarray     # clause node per edge
    edge_literal: np.ndarray    # literal node per edge
    time: Optional[np.ndarray] = None  # per literal node
    _incidence: Optional[sp.csr_matrix] = field(default=None, repr=False)

    @property
    def num_literals(self) -> int:
        return 2 * len(self.vars)

    @property
    def num_clauses(self) -> int:
        return len(self.clause_ids)

    def literal(self, node: int) -> int:
        v = int(self.vars[node >> 1])
        return -v if node & 1 else v

    @property
    def literals(self) -> list[int]:
        return [self.literal(i) for i in range(self.num_literals)]

    @property
    def incidence(self) -> sp.csr_matrix:
        """Clause x literal-node 0/1 matrix."""
        if self._incidence is None:
            counts = np.bincount(self.edge_clause, minlength=self.num_clauses)
            indptr = np.concatenate(([0], np.cumsum(counts)))
            self._incidence = sp.csr_matrix(
                (np.ones(len(self.edge_literal)), self.edge_literal, indptr),
                shape=(self.num_clauses, self.num_literals),
            )
        return self._incidence


class _FormulaArrays:
    """Numpy views of a formula's clause database for fast graph building."""

    def __init__(self, formula):
        lens = np.array([len(c) for c in formula.clauses], dtype=np.int64)
        self.lens = lens
        self.starts = np.concatenate(([0], np.cumsum(lens)[:-1])) if len(lens) else np.zeros(0, np.int64)
        self.lits = np.array([l for c in formula.clauses for l in c], dtype=np.int64)
        self.time = np.zeros(formula.num_vars + 1)
        for v, t in formula.time.items():
            self.time[v] = t
        self.has_time = np.zeros(formula.num_vars + 1, dtype=bool)
        self.has_time[list(formula.time)] = True


def formula_arrays(trail: Trail) -> _FormulaArrays:
    arrays = getattr(trail, "_policy_arrays", None)
    if arrays is None:
        arrays = _FormulaArrays(trail.formula)
        trail._policy_arrays = arrays
    return arrays


def build_lig(component: Component, trail: Trail, with_time: bool = False) -> LIG:
    """Graph over the component's active clauses and unset literals.

    Edges are listed clause by clause in stored literal order.
    """
    fa = formula_arrays(trail)
    n_true = trail.n_true
    cids = np.array([c for c in component.clause_ids if n_true[c] == 0], dtype=np.int64)
    vars_ = np.array(component.vars, dtype=np.int64)
    value = np.array(trail.value, dtype=np.int8)
    lens = fa.lens[cids]
    total = int(lens.sum())
    row = np.repeat(np.arange(len(cids)), lens)
    offs = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    lits = fa.lits[np.repeat(fa.starts[cids], lens) + offs]
    var = np.abs(lits)
    keep = value[var] == 0
    row, lits, var = row[keep], lits[keep], var[keep]
    local = np.full(trail.num_vars + 1, -1, dtype=np.int64)
    local[vars_] = np.arange(len(vars_))
    node = 2 * local[var] + (lits < 0)
    if (node < 0).any():
        raise ValueError("component variable set is inconsistent with its clauses")
    time = None
    if with_time:
        if len(vars_) and not fa.has_time.any():
            raise PolicyError(f"variable {int(vars_[0])} has no time annotation")
        time = np.repeat(fa.time[vars_], 2)
    return LIG(vars_, cids, row, node, time)


# -- forward pass ----------------------------------------------------------

def _mlp(x: np.ndarray, layers) -> np.ndarray:
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        x = x @ w + b
        if i < last:
            np.maximum(x, 0.0, out=x)
    return x


def gin_aggregate(self_vec, neighbor_sum, mlp_params, epsilon: float = 0.0) -> np.ndarray:
    """``MLP((1 + epsilon) * self + neighbor_sum)``, ReLU between layers,
    linear output. Works on single vectors or row-stacked batches."""
    self_vec = np.asarray(self_vec, dtype=np.float64)
    neighbor_sum = np.asarray(neighbor_sum, dtype=np.float64)
    if self_vec.shape != neighbor_sum.shape:
        raise PolicyError(f"dimension mismatch {self_vec.shape} vs {neighbor_sum.shape}")
    if mlp_params and mlp_params[0][0].shape[0] != self_vec.shape[-1]:
        raise PolicyError("input dimension does not match MLP")
    return _mlp((1.0 + epsilon) * self_vec + neighbor_sum, mlp_params)


def score_features(lig: LIG) -> np.ndarray:
    """Per literal node: [occurrences of l, occurrences of not l] divided by
    the number of clauses in the component."""
    occ = np.bincount(lig.edge_literal, minlength=lig.num_literals).astype(np.float64)
    occ /= max(lig.num_clauses, 1)
    flip = np.arange(lig.num_literals) ^ 1
    return np.stack([occ, occ[flip]], axis=1)


def gnn_forward(lig: LIG, params: PolicyParams, config: Optional[PolicyConfig] = None,
                features: Optional[dict] = None) -> np.ndarray:
    """One score per literal node.

    ``features`` may supply ``time`` (per literal node); otherwise the
    LIG's own time vector is used when the config asks for it.
    """
    config = config or params.config
    if config != params.config:
        raise PolicyError("params were built for a different config")
    n_lit = lig.num_literals
    time = None
    if config.use_time:
        time = (features or {}).get("time", lig.time)
        if time is None:
            raise PolicyError("time feature enabled but no time values supplied")
        time = np.asarray(time, dtype=np.float64).reshape(n_lit, 1)

    if config.time_only:
        return _mlp(time.copy(), params.mlp("decision"))[:, 0]

    d = config.embed_dim
    eps = config.epsilon
    a = lig.incidence
    at = a.T
    flip = np.arange(n_lit) ^ 1
    h0_cls = params["h0_clause"]
    start = 0
    if config.use_score_feature:
        h_lit = _mlp(score_features(lig), params.mlp("score"))
        h_cls = np.broadcast_to(h0_cls, (lig.num_clauses, d)).copy()
    elif config.iterations == 0:
        h_lit = np.broadcast_to(params["h0_literal"], (n_lit, d)).copy()
        h_cls = None
    else:
        # all nodes of a kind start equal, so after the first round a node's
        # embedding depends only on its degree
        h0_lit = params["h0_literal"]
        deg_c = np.bincount(lig.edge_clause, minlength=lig.num_clauses)
        deg_l = np.bincount(lig.edge_literal, minlength=n_lit)
        uc, inv_c = np.unique(deg_c, return_inverse=True)
        ul, inv_l = np.unique(deg_l, return_inverse=True)
        pair0 = np.concatenate([h0_lit, h0_lit])
        h_cls = gin_aggregate(np.tile(np.concatenate([h0_cls, h0_cls]), (len(uc), 1)),
                              uc[:, None] * pair0, params.mlp("clause0"), eps)[inv_c]
        h_lit = gin_aggregate(np.tile(h0_lit, (len(ul), 1)), ul[:, None] * h0_cls,
                              params.mlp("literal0"), eps)[inv_l]
        start = 1
    for k in range(start, config.iterations):
        to_literal = at @ h_cls
        if k < config.iterations - 1:
            # the final clause update is never read
            pair = np.concatenate([h_lit, h_lit[flip]], axis=1)
            h_cls = gin_aggregate(np.concatenate([h_cls, h_cls], axis=1), a @ pair,
                                  params.mlp(f"clause{k}"), eps)
        h_lit = gin_aggregate(h_lit, to_literal, params.mlp(f"literal{k}"), eps)
    if config.use_time:
        h_lit = np.concatenate([h_lit, time], axis=1)
    return _mlp(h_lit, params.mlp("decision"))[:, 0]


def select_literal(scores, literals) -> int:
    """Highest score; ties go to the first node, i.e. smallest variable,
    positive polarity first."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValueError("no literals to choose from")
    return literals[int(np.argmax(scores))]


class PolicyHeuristic:
    """Branching heuristic that scores the component's literals with the GNN."""

    def __init__(self, params: PolicyParams):
        self.params = params
        self.config = params.config

    def __call__(self, component: Component, trail: Trail, step: int) -> int:
        lig = build_lig(component, trail, with_time=self.config.use_time)
        scores = gnn_forward(lig, self.params)
        node = int(np.argmax(scores))
        return lig.literal(node)
