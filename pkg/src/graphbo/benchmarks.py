"""Synthetic random-graph benchmark with a Hartmann-4 target over normalized global
attributes, the four attribute-exposure situations, and the scaling harness."""

from __future__ import annotations

import json
import logging
import time
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .blr import BLRHyper, gp_predict
from .graph import (
    ATTRIBUTE_NAMES,
    AttributedGraph,
    GraphPool,
    erdos_renyi_edges,
    extract_global_attributes,
    minmax_normalize,
    read_pool,
    write_pool,
)

log = logging.getLogger(__name__)

# normalized attribute columns exposed as global attributes in each situation
SITUATIONS = {
    "a": (0, 1, 2, 3),
    "b": (0, 1),
    "c": (0, 1, 2, 3, 4, 5),
    "d": (4, 5),
}


@dataclass
class SyntheticSpec:
    size: int = 500
    n_range: tuple[int, int] = (20, 60)
    p_range: tuple[float, float] = (0.10, 0.26)
    seed: int = 0
    max_retries: int = 10

    def __post_init__(self):
        self.n_range = tuple(self.n_range)
        self.p_range = tuple(self.p_range)
        if self.size < 2:
            raise ValueError("pool size must be >= 2")
        if not 3 <= self.n_range[0] <= self.n_range[1]:
            raise ValueError("node-count range must satisfy 3 <= low <= high")
        if not 0.0 <= self.p_range[0] <= self.p_range[1] <= 1.0:
            raise ValueError("edge-probability range must lie in [0, 1]")


@dataclass
class HartmannConstants:
    alpha: np.ndarray
    A: np.ndarray
    P: np.ndarray
    offset: float = 1.1
    scale: float = 0.839

    @classmethod
    def load(cls, path: str | Path | None = None) -> "HartmannConstants":
        if path is None:
            text = resources.files("graphbo").joinpath("data/hartmann4.json").read_text()
        else:
            text = Path(path).read_text()
        raw = json.loads(text)
        return cls(np.asarray(raw["alpha"], float), np.asarray(raw["A"], float),
                   np.asarray(raw["P"], float), float(raw["offset"]), float(raw["scale"]))


@lru_cache(maxsize=1)
def default_constants() -> HartmannConstants:
    return HartmannConstants.load()


def hartmann4(x, constants: HartmannConstants | None = None) -> float | np.ndarray:
    """Rescaled Hartmann-4 value at a point (or each row) of ``[0, 1]^4``.

    Inputs outside the cube are clamped with a warning.
    """
    c = constants or default_constants()
    x = np.asarray(x, dtype=float)
    if np.any((x < 0) | (x > 1)):
        warnings.warn("hartmann4 input outside [0, 1]^4 was clamped", RuntimeWarning, stacklevel=2)
        x = np.clip(x, 0.0, 1.0)
    inner = np.sum(c.A * (x[..., None, :] - c.P) ** 2, axis=-1)
    value = (c.offset - np.sum(c.alpha * np.exp(-inner), axis=-1)) / c.scale
    return float(value) if np.ndim(value) == 0 else value


class HartmannObjective:
    """``y = -Hart(x1~, x2~, x3~, x4~)`` looked up by graph id."""

    cost_model = "synthetic-hartmann4"

    def __init__(self, normalized_by_id: dict[int, np.ndarray],
                 constants: HartmannConstants | None = None):
        self.inputs = {int(k): np.asarray(v, dtype=float)[:4] for k, v in normalized_by_id.items()}
        self.constants = constants

    def evaluate(self, graph: AttributedGraph) -> float:
        return -hartmann4(self.inputs[graph.id], self.constants)

    def values(self) -> dict[int, float]:
        ids = list(self.inputs)
        ys = -hartmann4(np.array([self.inputs[i] for i in ids]), self.constants)
        return dict(zip(ids, np.atleast_1d(ys).tolist()))

    def optimum(self) -> tuple[int, float]:
        """Exhaustive scan; ties go to the lowest graph id."""
        vals = self.values()
        best = max(sorted(vals), key=lambda i: vals[i])
        return best, vals[best]


@dataclass
class SyntheticPool:
    """Generated graphs with all six normalized attributes as global attributes."""

    pool: GraphPool
    raw_attributes: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray
    spec: SyntheticSpec
    generator: dict = field(default_factory=dict)

    @property
    def normalized(self) -> np.ndarray:
        return np.vstack([g.global_attributes for g in self.pool])

    def objective(self, constants: HartmannConstants | None = None) -> HartmannObjective:
        return HartmannObjective({g.id: g.global_attributes for g in self.pool}, constants)

    def sidecar(self) -> dict:
        best_id, best_y = self.objective().optimum()
        return {
            "seed": self.spec.seed,
            "generator": {"model": "erdos-renyi G(n, p)", **asdict(self.spec), **self.generator},
            "attributes": list(ATTRIBUTE_NAMES),
            "attribute_ranges": [[float(a), float(b)] for a, b in zip(self.mins, self.maxs)],
            "true_optimum": {"id": int(best_id), "y": float(best_y)},
            "avg_nodes": float(np.mean([g.num_nodes for g in self.pool])),
            "avg_edges": float(np.mean([g.num_edges for g in self.pool])),
        }

    def write(self, path: str | Path) -> Path:
        """Write the JSON-lines pool and its ``.meta.json`` sidecar; returns the sidecar path."""
        path = Path(path)
        write_pool(path, self.pool)
        side = sidecar_path(path)
        side.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return side


def sidecar_path(pool_path: str | Path) -> Path:
    p = Path(pool_path)
    return p.with_name(p.name + ".meta.json")


def _sample_graph(spec: SyntheticSpec, index: int, attempt: int, d_v: int) -> AttributedGraph:
    rng = np.random.default_rng([spec.seed, index, attempt])
    n = int(rng.integers(spec.n_range[0], spec.n_range[1] + 1))
    p = float(rng.uniform(*spec.p_range))
    edges = erdos_renyi_edges(n, p, rng)
    # every node of graph i carries the same one-hot vector e_i
    feats = sp.csr_matrix((np.ones(n), (np.arange(n), np.full(n, index))), shape=(n, d_v))
    return AttributedGraph(index, n, edges, feats, np.zeros(0))


def generate_pool(spec: SyntheticSpec) -> SyntheticPool:
    """Random G(n, p) pool with extracted and min-max normalized attributes x1..x6."""
    d_v = spec.size
    attempts = np.zeros(spec.size, dtype=int)
    graphs = [_sample_graph(spec, i, 0, d_v) for i in range(spec.size)]
    raw = np.array([extract_global_attributes(g, ATTRIBUTE_NAMES, spec.seed) for g in graphs])
    for retry in range(spec.max_retries + 1):
        const = np.flatnonzero(raw.max(axis=0) == raw.min(axis=0))
        if len(const) == 0:
            break
        if retry == spec.max_retries:
            raise ValueError(
                f"degenerate pool: attribute column(s) {const.tolist()} constant after "
                f"{spec.max_retries} regenerations"
            )
        # regenerate the graphs sharing the constant value, i.e. all of them
        for i in range(spec.size):
            attempts[i] += 1
            graphs[i] = _sample_graph(spec, i, int(attempts[i]), d_v)
            raw[i] = extract_global_attributes(graphs[i], ATTRIBUTE_NAMES, spec.seed)
    mm = minmax_normalize(raw)
    graphs = [g.with_global_attributes(row) for g, row in zip(graphs, mm.values)]
    return SyntheticPool(GraphPool(graphs), raw, mm.mins, mm.maxs, spec,
                         {"regenerations": int(attempts.max())})


def load_synthetic(path: str | Path) -> SyntheticPool:
    """Read a pool file written by :meth:`SyntheticPool.write` together with its sidecar."""
    pool = read_pool(path)
    meta = json.loads(sidecar_path(path).read_text())
    rng_ = np.asarray(meta["attribute_ranges"], dtype=float)
    mins, maxs = rng_[:, 0], rng_[:, 1]
    norm = np.vstack([g.global_attributes for g in pool])
    raw = norm * (maxs - mins) + mins
    gen = meta["generator"]
    spec = SyntheticSpec(size=len(pool), n_range=tuple(gen["n_range"]),
                         p_range=tuple(gen["p_range"]), seed=int(meta["seed"]))
    return SyntheticPool(pool, raw, mins, maxs, spec)


def situation_pool(synthetic: SyntheticPool, situation: str) -> GraphPool:
    """Pool whose global attributes are the columns exposed in ``situation``."""
    if situation not in SITUATIONS:
        raise ValueError(f"unknown situation {situation!r}; expected one of {sorted(SITUATIONS)}")
    cols = list(SITUATIONS[situation])
    return synthetic.pool.with_global_attributes(synthetic.normalized[:, cols])


def situation_objective(synthetic: SyntheticPool, situation: str,
                        constants: HartmannConstants | None = None) -> HartmannObjective:
    """The target is the same in every situation; only the exposure differs."""
    if situation not in SITUATIONS:
        raise ValueError(f"unknown situation {situation!r}; expected one of {sorted(SITUATIONS)}")
    return synthetic.objective(constants)


@dataclass
class ScalingRow:
    n: int
    iteration: int
    t_select_ms: float
    t_retrain_ms: float
    t_gp_ms: float

    @property
    def total_ms(self) -> float:
        return self.t_select_ms + self.t_retrain_ms


def loglog_slope(ns, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(n)``."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(times, float)), 1)[0])


def scaling_harness(sizes=(100, 200, 400, 800), config=None, iterations: int | None = None,
                    pool_factor: float = 2.0, seed: int = 0, gp_reference: bool = True):
    """Per-iteration cost of the loop at several observation counts.

    For each ``N`` a fresh pool of ``pool_factor * N`` graphs is generated, ``N``
    random graphs form the initial data, and ``iterations`` loop iterations are
    timed with one retraining among them.  When ``gp_reference`` is set, a dense
    function-space predictor is timed on the same features and hyperparameter
    samples.  Returns a list of :class:`ScalingRow`.
    """
    from .loop import DGBO, ExperimentConfig, SeedBundle

    base = config or ExperimentConfig()
    iters = iterations or base.retrain_every
    rows: list[ScalingRow] = []
    for n in sorted(sizes):
        synth = generate_pool(SyntheticSpec(size=int(round(pool_factor * n)), seed=seed + n))
        cfg = ExperimentConfig(**{
            **{k: getattr(base, k) for k in base.__dataclass_fields__},
            "n_init": n, "max_iter": iters, "retrain_every": iters,
            "seeds": SeedBundle.from_base(seed + n),
        })
        opt = DGBO(synth.objective(), situation_pool(synth, "a"), cfg)
        opt.initialize()
        for t in range(1, iters + 1):
            row = opt.step(t)
            gp_ms = _time_gp(opt) if gp_reference else 0.0
            rows.append(ScalingRow(n, t, row.t_select_ms, row.t_retrain_ms, gp_ms))
            log.info("N=%d t=%d select=%.1fms update=%.1fms gp=%.1fms",
                     n, t, row.t_select_ms, row.t_retrain_ms, gp_ms)
    return rows


def _time_gp(opt) -> float:
    """Dense predictor on the current features for every hyperparameter sample."""
    rows = [opt.pool.index_of(g) for g in opt.data.ids]
    phi = opt.pool_phi[rows].T
    y = opt.data.standardized()
    evaluated = opt.data.evaluated
    cand = [i for i, g in enumerate(opt.pool.ids) if g not in evaluated]
    q = opt.pool_phi[cand].T
    start = time.perf_counter()
    for s in opt.samples:
        gp_predict(phi, y, q, BLRHyper(s.hyper.weight_var, s.hyper.noise_var))
    return (time.perf_counter() - start) * 1e3


def summarize_scaling(rows: list[ScalingRow]) -> dict:
    """Per-N aggregates and log-log slopes.

    ``slope`` is fitted to the mean per-iteration selection + update time, so
    the retraining round is amortized over the iterations rather than hidden
    by a median.  Selection alone is summarized by its median.
    """
    ns = sorted({r.n for r in rows})
    by_n = {n: [r for r in rows if r.n == n] for n in ns}
    mean_total = [float(np.mean([r.total_ms for r in by_n[n]])) for n in ns]
    med_select = [float(np.median([r.t_select_ms for r in by_n[n]])) for n in ns]
    out = {"n": ns, "mean_total_ms": mean_total, "median_select_ms": med_select,
           "slope": loglog_slope(ns, mean_total), "select_slope": loglog_slope(ns, med_select)}
    gp = [float(np.median([r.t_gp_ms for r in by_n[n]])) for n in ns]
    if all(v > 0 for v in gp):
        out["median_gp_ms"] = gp
        out["gp_slope"] = loglog_slope(ns, gp)
    return out
