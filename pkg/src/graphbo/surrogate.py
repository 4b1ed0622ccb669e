"""Deep graph surrogate: relational graph convolutions, softmax pooling, global-attribute
concatenation, fully-connected stack and a linear training head.

Graphs are processed in batches.  A :class:`GraphBatch` stacks the node sets of
its member graphs and holds block-diagonal sparse normalized adjacencies, so one
sparse product propagates every graph at once and a membership matrix performs
the per-graph row sums of the pooling layer.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import AttributedGraph, normalized_adjacency_coo
from .numerics import (
    ACTIVATIONS,
    AdamState,
    NonFiniteError,
    activation,
    activation_grad,
    adam_step,
    row_softmax,
    row_softmax_backward,
)

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class SurrogateConfig:
    """Architecture and optimizer settings; defaults are the tuned optimum."""

    input_dim: int
    global_dim: int
    num_relations: int = 1
    num_gc_layers: int = 5
    num_fc_layers: int = 5
    gc_width: int = 48
    pool_width: int = 50
    fc_width: int = 45
    gc_activation: str = "tanh"
    pool_activation: str = "identity"
    fc_activation: str = "tanh"
    learning_rate: float = 1e-4
    dropout: float = 0.0
    penalty: float = 1e-5
    num_bases: int = 4
    lambda_switch: int = 1

    def __post_init__(self):
        for name in ("gc_width", "pool_width", "fc_width", "num_bases", "input_dim",
                     "num_relations", "num_gc_layers", "num_fc_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.global_dim < 0:
            raise ValueError("global_dim must be >= 0")
        for name in ("gc_activation", "pool_activation", "fc_activation"):
            if getattr(self, name) not in ACTIVATIONS:
                raise ValueError(f"{name} must be one of {ACTIVATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.lambda_switch not in (0, 1):
            raise ValueError("lambda_switch must be 0 or 1")

    @property
    def basis_dim(self) -> int:
        """Length of the feature vector handed to the Bayesian linear head."""
        return self.fc_width + 1

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SurrogateParams:
    """Named weight arrays of the network (the trainable set Omega)."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def copy(self) -> "SurrogateParams":
        return SurrogateParams({k: v.copy() for k, v in self.arrays.items()})

    def sq_norm(self) -> float:
        return float(sum(np.sum(v * v) for v in self.arrays.values()))

    def num_values(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def to_json(self) -> str:
        # json writes floats with repr, the shortest string that round-trips a double
        return json.dumps(
            {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.arrays.items()}
        )

    @classmethod
    def from_json(cls, text: str) -> "SurrogateParams":
        raw = json.loads(text)
        return cls({k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in raw.items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateParams":
        return cls.from_json(Path(path).read_text())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_params(config: SurrogateConfig, seed: int) -> SurrogateParams:
    """Glorot-uniform weights, zero biases; deterministic given ``seed``."""
    rng = np.random.default_rng(seed)
    p: dict[str, np.ndarray] = {}
    d_in = config.input_dim
    for l in range(config.num_gc_layers):
        d_out = config.gc_width
        p[f"gc{l}.bases"] = _glorot(rng, d_in, d_out, (config.num_bases, d_in, d_out))
        p[f"gc{l}.coef"] = _glorot(
            rng, config.num_bases, config.num_relations, (config.num_relations, config.num_bases)
        )
        d_in = d_out
    p["pool.weight"] = _glorot(rng, config.gc_width, config.pool_width,
                               (config.gc_width, config.pool_width))
    d_in = config.pool_width + config.global_dim
    for l in range(config.num_fc_layers):
        p[f"fc{l}.weight"] = _glorot(rng, d_in, config.fc_width, (d_in, config.fc_width))
        p[f"fc{l}.bias"] = np.zeros(config.fc_width)
        d_in = config.fc_width
    p["head.weight"] = _glorot(rng, config.fc_width, 1, (config.fc_width,))
    p["head.bias"] = np.zeros(1)
    return SurrogateParams(p)


def compose_relation_weights(params: SurrogateParams, layer: int) -> np.ndarray:
    """Per-relation weights ``W_r = sum_b coef[r, b] V_b``, shape ``(D_E, d_in, d_out)``."""
    return np.einsum("rb,bio->rio", params[f"gc{layer}.coef"], params[f"gc{layer}.bases"])


class GraphBatch:
    """Stacked node sets of several graphs with block-diagonal operators."""

    def __init__(self, graphs: Sequence[AttributedGraph], num_relations: int | None = None):
        if not graphs:
            raise ValueError("empty batch")
        self.graphs = list(graphs)
        self.num_relations = num_relations or graphs[0].num_relations
        sizes = np.array([g.num_nodes for g in graphs])
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])
        total = int(self.offsets[-1])
        self.num_nodes = total

        rows = [[] for _ in range(self.num_relations)]
        cols = [[] for _ in range(self.num_relations)]
        vals = [[] for _ in range(self.num_relations)]
        for g, off in zip(graphs, self.offsets[:-1]):
            for r in range(self.num_relations):
                i, j, v = normalized_adjacency_coo(g, r)
                rows[r].append(i + off)
                cols[r].append(j + off)
                vals[r].append(v)
        self.adjacency = [
            sp.csr_matrix(
                (np.concatenate(vals[r]), (np.concatenate(rows[r]), np.concatenate(cols[r]))),
                shape=(total, total),
            )
            for r in range(self.num_relations)
        ]
        owner = np.repeat(np.arange(len(graphs)), sizes)
        self.membership = sp.csr_matrix(
            (np.ones(total), (owner, np.arange(total))), shape=(len(graphs), total)
        )
        self.membership_t = self.membership.T.tocsr()

        feats = [g.node_features for g in graphs]
        if any(sp.issparse(f) for f in feats):
            self.features = sp.vstack([sp.csr_matrix(f) for f in feats]).tocsr()
            self.features_t = self.features.T.tocsr()
        else:
            self.features = np.vstack(feats)
            self.features_t = self.features.T
        self.global_attributes = np.vstack([g.global_attributes.reshape(1, -1) for g in graphs])

    def __len__(self) -> int:
        return len(self.graphs)

    def check(self, config: SurrogateConfig) -> None:
        if self.features.shape[1] != config.input_dim:
            raise ValueError(
                f"node feature dimension {self.features.shape[1]} != config.input_dim "
                f"{config.input_dim}"
            )
        if self.global_attributes.shape[1] != config.global_dim:
            raise ValueError(
                f"global attribute length {self.global_attributes.shape[1]} != "
                f"config.global_dim {config.global_dim}"
            )
        if self.num_relations != config.num_relations:
            raise ValueError("relation count differs from config.num_relations")


@dataclass
class ForwardTrace:
    gc_inputs: list = field(default_factory=list)
    gc_outputs: list = field(default_factory=list)
    gc_masks: list = field(default_factory=list)
    gc_weights: list = field(default_factory=list)
    pool_input: np.ndarray | None = None
    pool_softmax: np.ndarray | None = None
    pool_pre: np.ndarray | None = None
    fc_inputs: list = field(default_factory=list)
    fc_pre: list = field(default_factory=list)
    fc_outputs: list = field(default_factory=list)
    fc_masks: list = field(default_factory=list)


def gc_layer_forward(h, adjacency: Sequence, weights: np.ndarray, kind: str):
    """``act(sum_r A_r H W_r)``; returns ``(output, pre_activation)``.

    ``adjacency`` holds one (dense or sparse) matrix per relation and
    ``weights`` is ``(D_E, d_in, d_out)``.
    """
    n_rel, d_in, d_out = weights.shape
    if h.shape[1] != d_in:
        raise ValueError(f"layer input width {h.shape[1]} != weight rows {d_in}")
    if len(adjacency) != n_rel:
        raise ValueError("one adjacency per relation required")
    hw = h @ weights.transpose(1, 0, 2).reshape(d_in, n_rel * d_out)
    hw = np.asarray(hw)
    z = adjacency[0] @ hw[:, :d_out]
    for r in range(1, n_rel):
        z = z + adjacency[r] @ hw[:, r * d_out:(r + 1) * d_out]
    z = np.asarray(z)
    return activation(kind, z), z


def pooling_forward(h: np.ndarray, weight: np.ndarray, membership, kind: str):
    """``act(rowsum(softmax(H W)))`` per graph; returns ``(pooled, softmax, pre)``."""
    s = row_softmax(h @ weight)
    pre = np.asarray(membership @ s)
    return activation(kind, pre), s, pre


def prior_concat(h_pool: np.ndarray, global_attributes: np.ndarray, lambda_switch: int,
                 global_dim: int | None = None) -> np.ndarray:
    """Append ``lambda * F_G``; the output width does not depend on the switch."""
    if lambda_switch not in (0, 1):
        raise ValueError("lambda_switch must be 0 or 1")
    fg = np.asarray(global_attributes, dtype=float)
    if global_dim is not None and fg.shape[-1] != global_dim:
        raise ValueError(f"global attribute length {fg.shape[-1]} != {global_dim}")
    return np.concatenate([h_pool, lambda_switch * fg], axis=-1)


def forward_batch(batch: GraphBatch, params: SurrogateParams, config: SurrogateConfig,
                  train: bool = False, rng: np.random.Generator | None = None):
    """Run the network on every graph of ``batch``.

    Returns ``(yhat, phi, trace)`` where ``phi`` is the last hidden layer with a
    constant 1 appended and ``trace`` is None unless ``train`` is set.
    """
    batch.check(config)
    keep = 1.0 - config.dropout
    use_dropout = train and config.dropout > 0.0
    if use_dropout and rng is None:
        raise ValueError("dropout in training mode needs an rng")
    trace = ForwardTrace() if train else None

    h = batch.features
    for l in range(config.num_gc_layers):
        w = compose_relation_weights(params, l)
        out, _ = gc_layer_forward(h, batch.adjacency, w, config.gc_activation)
        mask = None
        if use_dropout:
            mask = (rng.random(out.shape) < keep) / keep
        if trace is not None:
            trace.gc_inputs.append(h)
            trace.gc_outputs.append(out)
            trace.gc_masks.append(mask)
            trace.gc_weights.append(w)
        h = out if mask is None else out * mask

    pooled, s, pre = pooling_forward(h, params["pool.weight"], batch.membership,
                                     config.pool_activation)
    if trace is not None:
        trace.pool_input, trace.pool_softmax, trace.pool_pre = h, s, pre

    x = prior_concat(pooled, batch.global_attributes, config.lambda_switch, config.global_dim)
    for l in range(config.num_fc_layers):
        z = x @ params[f"fc{l}.weight"] + params[f"fc{l}.bias"]
        out = activation(config.fc_activation, z)
        mask = None
        if use_dropout:
            mask = (rng.random(out.shape) < keep) / keep
        if trace is not None:
            trace.fc_inputs.append(x)
            trace.fc_pre.append(z)
            trace.fc_outputs.append(out)
            trace.fc_masks.append(mask)
        x = out if mask is None else out * mask

    yhat = x @ params["head.weight"] + params["head.bias"][0]
    phi = np.hstack([x, np.ones((x.shape[0], 1))])
    return yhat, phi, trace


def backward_batch(batch: GraphBatch, params: SurrogateParams, config: SurrogateConfig,
                   trace: ForwardTrace, grad_yhat: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of ``sum_i grad_yhat[i] * yhat[i]`` w.r.t. every parameter."""
    g: dict[str, np.ndarray] = {}
    x_last = trace.fc_outputs[-1]
    if trace.fc_masks[-1] is not None:
        x_last = x_last * trace.fc_masks[-1]
    g["head.weight"] = x_last.T @ grad_yhat
    g["head.bias"] = np.array([grad_yhat.sum()])
    dx = np.outer(grad_yhat, params["head.weight"])

    for l in reversed(range(config.num_fc_layers)):
        if trace.fc_masks[l] is not None:
            dx = dx * trace.fc_masks[l]
        dz = dx * activation_grad(config.fc_activation, trace.fc_pre[l], trace.fc_outputs[l])
        g[f"fc{l}.weight"] = trace.fc_inputs[l].T @ dz
        g[f"fc{l}.bias"] = dz.sum(axis=0)
        dx = dz @ params[f"fc{l}.weight"].T

    d_pool = dx[:, :config.pool_width]
    d_pre = d_pool * activation_grad(config.pool_activation, trace.pool_pre)
    d_s = np.asarray(batch.membership_t @ d_pre)
    d_logits = row_softmax_backward(trace.pool_softmax, d_s)
    g["pool.weight"] = trace.pool_input.T @ d_logits
    dh = d_logits @ params["pool.weight"].T

    for l in reversed(range(config.num_gc_layers)):
        if trace.gc_masks[l] is not None:
            dh = dh * trace.gc_masks[l]
        out = trace.gc_outputs[l]
        # relu and tanh derivatives are both recoverable from the layer output
        dz = dh * activation_grad(config.gc_activation, out, out)
        w = trace.gc_weights[l]
        n_rel, d_in, d_out = w.shape
        adz = np.hstack([np.asarray(batch.adjacency[r] @ dz) for r in range(n_rel)])
        x = trace.gc_inputs[l]
        xt = batch.features_t if l == 0 else x.T
        dw = np.asarray(xt @ adz).reshape(d_in, n_rel, d_out)
        bases = params[f"gc{l}.bases"]
        coef = params[f"gc{l}.coef"]
        g[f"gc{l}.bases"] = np.einsum("rb,iro->bio", coef, dw)
        g[f"gc{l}.coef"] = np.einsum("iro,bio->rb", dw, bases)
        if l > 0:
            dh = adz @ w.transpose(1, 0, 2).reshape(d_in, n_rel * d_out).T
    return g


def forward(graph: AttributedGraph, params: SurrogateParams, config: SurrogateConfig,
            mode: str = "predict", rng: np.random.Generator | None = None):
    """Single-graph forward pass; returns ``(yhat, phi, trace)``."""
    if mode not in ("train", "predict"):
        raise ValueError("mode must be 'train' or 'predict'")
    yhat, phi, trace = forward_batch(GraphBatch([graph], config.num_relations), params, config,
                                     train=mode == "train", rng=rng)
    return float(yhat[0]), phi[0], trace


def features(batch: GraphBatch, params: SurrogateParams, config: SurrogateConfig) -> np.ndarray:
    """Basis features ``phi`` (rows) for every graph of ``batch``."""
    return forward_batch(batch, params, config)[1]


def loss(batch: GraphBatch | Sequence[AttributedGraph], y, params: SurrogateParams,
         config: SurrogateConfig) -> float:
    """Squared error plus ``penalty * ||Omega||^2``."""
    if not isinstance(batch, GraphBatch):
        batch = GraphBatch(batch, config.num_relations)
    yhat, _, _ = forward_batch(batch, params, config)
    r = yhat - np.asarray(y, dtype=float)
    return float(r @ r + config.penalty * params.sq_norm())


def loss_and_grad(batch: GraphBatch, y, params: SurrogateParams, config: SurrogateConfig,
                  rng: np.random.Generator | None = None):
    yhat, _, trace = forward_batch(batch, params, config, train=True, rng=rng)
    r = yhat - np.asarray(y, dtype=float)
    value = float(r @ r + config.penalty * params.sq_norm())
    grads = backward_batch(batch, params, config, trace, 2.0 * r)
    for name, p in params.arrays.items():
        grads[name] = grads[name] + 2.0 * config.penalty * p
    return value, grads


def train(dataset, params: SurrogateParams, config: SurrogateConfig, epochs: int,
          seed: int = 0, batch: GraphBatch | None = None):
    """Full-batch Adam on ``dataset = (graphs, y)``.

    Returns ``(params, loss)`` for the lowest-loss iterate visited, so the
    final loss never exceeds the initial one.
    """
    graphs, y = dataset
    y = np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("empty training set")
    if batch is None:
        batch = GraphBatch(graphs, config.num_relations)
    rng = np.random.default_rng(seed)
    state = AdamState(lr=config.learning_rate)
    current = params.arrays
    best, best_loss = params, np.inf
    for epoch in range(epochs):
        p = SurrogateParams(current)
        value, grads = loss_and_grad(batch, y, p, config, rng)
        if not np.isfinite(value):
            raise TrainingError(f"non-finite loss {value} at epoch {epoch}")
        if value < best_loss:
            best, best_loss = p, value
        try:
            current = adam_step(current, grads, state)
        except NonFiniteError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from exc
    final = SurrogateParams(current)
    final_loss = loss(batch, y, final, config)
    if not np.isfinite(final_loss):
        raise TrainingError(f"non-finite loss {final_loss} after {epochs} epochs")
    if final_loss <= best_loss:
        best, best_loss = final, final_loss
    log.debug("trained %d epochs, loss %.6g", epochs, best_loss)
    return best.copy(), best_loss


def downsized_config(**overrides) -> SurrogateConfig:
    """The small architecture used for gradient checks."""
    base = dict(input_dim=3, global_dim=2, num_relations=2, num_gc_layers=2, num_fc_layers=1,
                gc_width=8, pool_width=5, fc_width=6, num_bases=2)
    base.update(overrides)
    return SurrogateConfig(**base)


__all__ = [
    "SurrogateConfig", "SurrogateParams", "GraphBatch", "ForwardTrace", "TrainingError",
    "init_params", "compose_relation_weights", "gc_layer_forward", "pooling_forward",
    "prior_concat", "forward", "forward_batch", "backward_batch", "features", "loss",
    "loss_and_grad", "train", "downsized_config",
]
