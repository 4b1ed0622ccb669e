"""Attributed graphs, per-relation adjacency normalization and structural statistics."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp


class GraphValidationError(ValueError):
    """Raised when a graph violates one of the data-model invariants.

    ``kind`` is one of ``index-out-of-range``, ``duplicate-edge``,
    ``dimension-mismatch``, ``self-loop``, ``continuous-edge-feature`` or
    ``non-finite``.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(f"{kind}: {message}")
        self.kind = kind


@dataclass
class AttributedGraph:
    """Undirected graph with typed edges, node features and global attributes.

    ``edges`` is an ``(E, 3)`` integer array of ``(u, v, relation)`` rows,
    canonicalized so that ``u <= v``.  ``node_features`` may be a dense array
    or a scipy sparse matrix with ``num_nodes`` rows.
    """

    id: int
    num_nodes: int
    edges: np.ndarray
    node_features: np.ndarray | sp.spmatrix
    global_attributes: np.ndarray
    num_relations: int = 1

    def __post_init__(self):
        edges = np.asarray(self.edges)
        if edges.size == 0:
            edges = np.zeros((0, 3), dtype=np.int64)
        if edges.ndim != 2 or edges.shape[1] != 3:
            raise GraphValidationError("dimension-mismatch", "edges must be (u, v, relation) triples")
        if not np.issubdtype(edges.dtype, np.integer):
            if not np.all(np.isfinite(edges)) or np.any(edges != np.round(edges)):
                raise GraphValidationError(
                    "continuous-edge-feature", "edge types must be discrete relation indices"
                )
            edges = edges.astype(np.int64)
        edges = edges.astype(np.int64, copy=True)
        swap = edges[:, 0] > edges[:, 1]
        edges[swap, :2] = edges[swap][:, [1, 0]]
        self.edges = edges
        if not sp.issparse(self.node_features):
            self.node_features = np.atleast_2d(np.asarray(self.node_features, dtype=float))
        self.global_attributes = np.asarray(self.global_attributes, dtype=float).reshape(-1)

    @property
    def num_edges(self) -> int:
        """Number of distinct node pairs joined by at least one edge."""
        if len(self.edges) == 0:
            return 0
        return len({(int(u), int(v)) for u, v, _ in self.edges})

    @property
    def input_dim(self) -> int:
        return self.node_features.shape[1]

    @property
    def global_dim(self) -> int:
        return self.global_attributes.shape[0]

    def neighbors(self) -> list[list[int]]:
        """Adjacency lists of the relation-agnostic simple graph."""
        adj: list[set[int]] = [set() for _ in range(self.num_nodes)]
        for u, v, _ in self.edges:
            adj[u].add(int(v))
            adj[v].add(int(u))
        return [sorted(a) for a in adj]

    def with_global_attributes(self, values: Sequence[float]) -> "AttributedGraph":
        return AttributedGraph(
            self.id, self.num_nodes, self.edges, self.node_features,
            np.asarray(values, dtype=float), self.num_relations,
        )


def validate(graph: AttributedGraph) -> None:
    """Raise :class:`GraphValidationError` on the first violated invariant."""
    n = graph.num_nodes
    if n < 1:
        raise GraphValidationError("dimension-mismatch", "graph needs at least one node")
    e = graph.edges
    if len(e):
        if e[:, :2].min() < 0 or e[:, :2].max() >= n:
            bad = e[(e[:, :2] < 0).any(axis=1) | (e[:, :2] >= n).any(axis=1)][0]
            raise GraphValidationError(
                "index-out-of-range", f"edge {tuple(int(x) for x in bad)} on a {n}-node graph"
            )
        if e[:, 2].min() < 0 or e[:, 2].max() >= graph.num_relations:
            raise GraphValidationError(
                "index-out-of-range", f"relation index outside [0, {graph.num_relations})"
            )
        if np.any(e[:, 0] == e[:, 1]):
            raise GraphValidationError("self-loop", "self-loops are injected by normalization")
        if len(np.unique(e, axis=0)) != len(e):
            raise GraphValidationError("duplicate-edge", "duplicate (u, v, relation) triple")
    if graph.node_features.shape[0] != n:
        raise GraphValidationError(
            "dimension-mismatch",
            f"node_features has {graph.node_features.shape[0]} rows, expected {n}",
        )
    feats = graph.node_features.data if sp.issparse(graph.node_features) else graph.node_features
    if not np.all(np.isfinite(feats)):
        raise GraphValidationError("non-finite", "node features must be finite")
    if not np.all(np.isfinite(graph.global_attributes)):
        raise GraphValidationError("non-finite", "global attributes must be finite")


def normalized_adjacency(graph: AttributedGraph) -> np.ndarray:
    """Dense ``D~^-1/2 (A_r + I) D~^-1/2`` for every relation, shape ``(D_E, n, n)``."""
    n = graph.num_nodes
    out = np.zeros((graph.num_relations, n, n))
    for r in range(graph.num_relations):
        a = np.eye(n)
        sel = graph.edges[graph.edges[:, 2] == r]
        a[sel[:, 0], sel[:, 1]] = 1.0
        a[sel[:, 1], sel[:, 0]] = 1.0
        d = 1.0 / np.sqrt(a.sum(axis=1))
        out[r] = d[:, None] * a * d[None, :]
    return out


def normalized_adjacency_coo(graph: AttributedGraph, relation: int):
    """Sparse ``(rows, cols, values)`` of one normalized relation adjacency."""
    n = graph.num_nodes
    sel = graph.edges[graph.edges[:, 2] == relation]
    deg = np.ones(n)
    np.add.at(deg, sel[:, 0], 1.0)
    np.add.at(deg, sel[:, 1], 1.0)
    inv = 1.0 / np.sqrt(deg)
    diag = np.arange(n)
    rows = np.concatenate([diag, sel[:, 0], sel[:, 1]])
    cols = np.concatenate([diag, sel[:, 1], sel[:, 0]])
    vals = inv[rows] * inv[cols]
    return rows, cols, vals


def degree_centrality(graph: AttributedGraph) -> np.ndarray:
    n = graph.num_nodes
    if n < 2:
        raise ValueError("degree centrality needs at least 2 nodes")
    deg = np.array([len(a) for a in graph.neighbors()], dtype=float)
    return deg / (n - 1)


def mean_degree_centrality(graph: AttributedGraph) -> float:
    return float(degree_centrality(graph).mean())


def betweenness_centrality(graph: AttributedGraph) -> np.ndarray:
    """Brandes accumulation over unweighted shortest paths.

    Each unordered pair contributes once; values are scaled by
    ``2 / ((n - 1)(n - 2))`` so that they lie in ``[0, 1]``.
    """
    n = graph.num_nodes
    if n < 3:
        raise ValueError("betweenness centrality needs at least 3 nodes")
    adj = graph.neighbors()
    cb = [0.0] * n
    for s in range(n):
        stack = []
        preds: list[list[int]] = [[] for _ in range(n)]
        sigma = [0.0] * n
        sigma[s] = 1.0
        dist = [-1] * n
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            stack.append(v)
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        while stack:
            w = stack.pop()
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                cb[w] += delta[w]
    # each unordered pair was accumulated from both endpoints, which cancels
    # the factor 2 of the normalization
    return np.asarray(cb) / ((n - 1) * (n - 2))


def clustering_coefficient(graph: AttributedGraph) -> np.ndarray:
    """Local clustering ``2 T(i) / (d(i) (d(i) - 1))``, zero when ``d(i) < 2``."""
    adj = [set(a) for a in graph.neighbors()]
    out = np.zeros(graph.num_nodes)
    for i, nb in enumerate(adj):
        d = len(nb)
        if d < 2:
            continue
        links = sum(len(adj[u] & nb) for u in nb) / 2
        out[i] = 2.0 * links / (d * (d - 1))
    return out


def mean_clustering(graph: AttributedGraph) -> float:
    return float(clustering_coefficient(graph).mean())


ATTRIBUTE_NAMES = ("x1", "x2", "x3", "x4", "x5", "x6")
_ALIASES = {
    "num_nodes": "x1",
    "num_edges": "x2",
    "mean_degree_centrality": "x3",
    "mean_betweenness": "x4",
    "mean_clustering": "x5",
    "random": "x6",
}


def random_attribute(pool_seed: int, graph_id: int) -> float:
    """The unrelated uniform scalar, drawn from a stream keyed by (pool seed, graph id)."""
    return float(np.random.default_rng([pool_seed, graph_id]).random())


def extract_global_attributes(
    graph: AttributedGraph, names: Sequence[str], pool_seed: int = 0
) -> np.ndarray:
    """Raw structural attributes in the order given by ``names``.

    Names are ``x1`` .. ``x6`` (node count, edge count, mean degree centrality,
    mean betweenness, mean clustering, unrelated random scalar) or their
    long aliases.
    """
    if not names:
        raise ValueError("attribute list must be nonempty")
    keys = [_ALIASES.get(name, name) for name in names]
    for name, key in zip(names, keys):
        if key not in ATTRIBUTE_NAMES:
            raise KeyError(f"unknown attribute {name!r}")
    compute = {
        "x1": lambda: float(graph.num_nodes),
        "x2": lambda: float(graph.num_edges),
        "x3": lambda: mean_degree_centrality(graph),
        "x4": lambda: float(betweenness_centrality(graph).mean()),
        "x5": lambda: mean_clustering(graph),
        "x6": lambda: random_attribute(pool_seed, graph.id),
    }
    return np.array([compute[k]() for k in keys])


@dataclass
class MinMax:
    values: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Normalize unseen rows with the stored column ranges."""
        return (np.asarray(x, dtype=float) - self.mins) / (self.maxs - self.mins)


def minmax_normalize(matrix: np.ndarray) -> MinMax:
    """Column-wise ``(x - min) / (max - min)``; constant columns are an error."""
    x = np.atleast_2d(np.asarray(matrix, dtype=float))
    if x.shape[0] == 1 and np.ndim(matrix) == 1:
        x = x.T
    lo, hi = x.min(axis=0), x.max(axis=0)
    const = np.flatnonzero(hi == lo)
    if len(const):
        raise ValueError(f"constant column(s) {const.tolist()} cannot be min-max normalized")
    out = (x - lo) / (hi - lo)
    # guard the endpoints against rounding so every column spans exactly [0, 1]
    out[x == lo] = 0.0
    out[x == hi] = 1.0
    return MinMax(out, lo, hi)


@dataclass
class GraphPool:
    """The finite search space; members share D_V, D_E and D_G."""

    graphs: list[AttributedGraph]
    input_dim: int = field(init=False)
    num_relations: int = field(init=False)
    global_dim: int = field(init=False)

    def __post_init__(self):
        if not self.graphs:
            raise ValueError("pool is empty")
        g0 = self.graphs[0]
        self.input_dim, self.num_relations, self.global_dim = (
            g0.input_dim, g0.num_relations, g0.global_dim)
        seen = set()
        for g in self.graphs:
            if (g.input_dim, g.num_relations, g.global_dim) != (
                self.input_dim, self.num_relations, self.global_dim
            ):
                raise GraphValidationError(
                    "dimension-mismatch", f"graph {g.id} dimensions differ from the pool"
                )
            if g.id in seen:
                raise ValueError(f"duplicate graph id {g.id}")
            seen.add(g.id)
        self._index = {g.id: i for i, g in enumerate(self.graphs)}

    def __len__(self) -> int:
        return len(self.graphs)

    def __iter__(self) -> Iterator[AttributedGraph]:
        return iter(self.graphs)

    def __getitem__(self, i: int) -> AttributedGraph:
        return self.graphs[i]

    @property
    def ids(self) -> list[int]:
        return [g.id for g in self.graphs]

    def index_of(self, graph_id: int) -> int:
        return self._index[graph_id]

    def by_id(self, graph_id: int) -> AttributedGraph:
        return self.graphs[self._index[graph_id]]

    def with_global_attributes(self, matrix: np.ndarray) -> "GraphPool":
        return GraphPool([g.with_global_attributes(row) for g, row in zip(self.graphs, matrix)])


def permute_nodes(graph: AttributedGraph, perm: Sequence[int]) -> AttributedGraph:
    """Relabel node ``i`` as ``perm[i]``."""
    perm = np.asarray(perm)
    inv = np.argsort(perm)
    edges = graph.edges.copy()
    edges[:, :2] = perm[edges[:, :2]]
    return AttributedGraph(
        graph.id, graph.num_nodes, edges, graph.node_features[inv],
        graph.global_attributes.copy(), graph.num_relations,
    )


def _is_onehot_rows(x) -> np.ndarray | None:
    """Column index of the single 1.0 in every row, or None."""
    if sp.issparse(x):
        x = x.tocsr()
        if np.all(np.diff(x.indptr) == 1) and np.all(x.data == 1.0):
            return x.indices.copy()
        return None
    if np.all((x == 0) | (x == 1)) and np.all(x.sum(axis=1) == 1):
        return x.argmax(axis=1)
    return None


def graph_to_record(graph: AttributedGraph, compact: bool = True) -> dict:
    """JSON-lines record; one-hot node features are written compactly when allowed."""
    order = np.lexsort((graph.edges[:, 2], graph.edges[:, 1], graph.edges[:, 0]))
    rec = {
        "id": int(graph.id),
        "n": int(graph.num_nodes),
        "edges": graph.edges[order].tolist(),
    }
    onehot = _is_onehot_rows(graph.node_features) if compact else None
    if onehot is not None:
        rec["node_onehot"] = [int(i) for i in onehot]
        rec["d_v"] = int(graph.input_dim)
    else:
        feats = graph.node_features
        feats = feats.toarray() if sp.issparse(feats) else feats
        rec["node_features"] = feats.tolist()
    rec["global"] = graph.global_attributes.tolist()
    if graph.num_relations != 1:
        rec["d_e"] = int(graph.num_relations)
    return rec


def graph_from_record(rec: dict) -> AttributedGraph:
    n = int(rec["n"])
    if "node_onehot" in rec:
        cols = np.asarray(rec["node_onehot"], dtype=np.int64)
        feats = sp.csr_matrix((np.ones(n), (np.arange(n), cols)), shape=(n, int(rec["d_v"])))
    else:
        feats = np.asarray(rec["node_features"], dtype=float).reshape(n, -1)
    edges = np.asarray(rec["edges"], dtype=float).reshape(-1, 3)
    graph = AttributedGraph(
        int(rec["id"]), n, edges, feats, np.asarray(rec["global"], dtype=float),
        int(rec.get("d_e", 1)),
    )
    validate(graph)
    return graph


def write_pool(path: str | Path, graphs: Iterable[AttributedGraph], compact: bool = True) -> None:
    with open(path, "w") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g, compact), separators=(",", ":")))
            fh.write("\n")


def read_pool(path: str | Path) -> GraphPool:
    with open(path) as fh:
        graphs = [graph_from_record(json.loads(line)) for line in fh if line.strip()]
    return GraphPool(graphs)


def erdos_renyi_edges(n: int, p: float, rng: np.random.Generator) -> np.ndarray:
    """G(n, p) edge list as ``(u, v, 0)`` rows with ``u < v``."""
    iu, iv = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    e = np.zeros((int(keep.sum()), 3), dtype=np.int64)
    e[:, 0], e[:, 1] = iu[keep], iv[keep]
    return e


def expected_edges(n_range: tuple[int, int], p_range: tuple[float, float]) -> float:
    """E|E| = E[p] * E[n(n-1)/2] for independent uniform n and p."""
    ns = np.arange(n_range[0], n_range[1] + 1)
    return 0.5 * (p_range[0] + p_range[1]) * float(np.mean(ns * (ns - 1) / 2))


__all__ = [
    "AttributedGraph", "GraphPool", "GraphValidationError", "MinMax",
    "ATTRIBUTE_NAMES", "validate", "normalized_adjacency", "normalized_adjacency_coo",
    "degree_centrality", "mean_degree_centrality", "betweenness_centrality",
    "clustering_coefficient", "mean_clustering", "extract_global_attributes",
    "random_attribute", "minmax_normalize", "permute_nodes", "read_pool", "write_pool",
    "graph_to_record", "graph_from_record", "erdos_renyi_edges", "expected_edges",
]
