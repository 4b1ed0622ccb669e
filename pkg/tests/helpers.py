"""Small graph builders and numerical oracles shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from graphbo.graph import AttributedGraph


def make_graph(n, pairs, d_v=1, features=None, global_attributes=(), gid=0, relations=None,
               num_relations=1):
    rel = relations if relations is not None else [0] * len(pairs)
    edges = [(u, v, r) for (u, v), r in zip(pairs, rel)]
    feats = np.ones((n, d_v)) if features is None else features
    return AttributedGraph(gid, n, np.array(edges, dtype=np.int64).reshape(-1, 3), feats,
                           np.asarray(global_attributes, dtype=float), num_relations)


def path(n, **kw):
    return make_graph(n, [(i, i + 1) for i in range(n - 1)], **kw)


def star(n, **kw):
    return make_graph(n, [(0, i) for i in range(1, n)], **kw)


def complete(n, **kw):
    return make_graph(n, list(itertools.combinations(range(n), 2)), **kw)


def random_graph(rng, n, p=0.5, d_v=3, d_g=2, num_relations=1, gid=0):
    pairs = [(u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < p]
    rel = rng.integers(0, num_relations, size=len(pairs)).tolist()
    return make_graph(n, pairs, features=rng.normal(size=(n, d_v)),
                      global_attributes=rng.random(d_g), gid=gid, relations=rel,
                      num_relations=num_relations)


def from_networkx(g, gid=0):
    mapping = {v: i for i, v in enumerate(g.nodes())}
    return make_graph(g.number_of_nodes(), [(mapping[u], mapping[v]) for u, v in g.edges()],
                      gid=gid)


def all_simple_paths(adj, s, t):
    """Every simple path from s to t by depth-first enumeration."""
    out, stack = [], [(s, [s])]
    while stack:
        v, p = stack.pop()
        if v == t:
            out.append(p)
            continue
        for w in adj[v]:
            if w not in p:
                stack.append((w, p + [w]))
    return out


def brute_betweenness(n, pairs):
    """Fraction of shortest s-t paths through each node, found by listing all simple paths."""
    adj = [set() for _ in range(n)]
    for u, v in pairs:
        adj[u].add(v)
        adj[v].add(u)
    score = np.zeros(n)
    for s, t in itertools.combinations(range(n), 2):
        paths = all_simple_paths(adj, s, t)
        if not paths:
            continue
        shortest = min(len(p) for p in paths)
        best = [p for p in paths if len(p) == shortest]
        for v in range(n):
            if v not in (s, t):
                score[v] += sum(v in p for p in best) / len(best)
    return score * 2.0 / ((n - 1) * (n - 2))


def brute_clustering(n, pairs):
    edges = {frozenset(e) for e in pairs}
    out = np.zeros(n)
    for i in range(n):
        nbrs = [j for j in range(n) if frozenset((i, j)) in edges]
        k = len(nbrs)
        if k < 2:
            continue
        tri = sum(frozenset((a, b)) in edges for a, b in itertools.combinations(nbrs, 2))
        out[i] = 2.0 * tri / (k * (k - 1))
    return out


def central_difference(f, x, h=1e-5):
    """Numerical gradient of scalar ``f`` at array ``x`` (modified in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def max_relative_error(analytic, numeric, floor=1e-8):
    a, b = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


ACCEPTANCE_LINES: list[str] = []


def report(number, passed, detail):
    """Record and print one acceptance verdict line."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed
