"""The optimization loop: initial design, surrogate training, hyperparameter sampling and
sequential selection, plus the random-selection baseline."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .acquisition import PoolExhaustedError, select_next
from .graph import AttributedGraph, GraphPool
from .mcmc import DEFAULT_PRIOR, HyperSampleSet, sample_posterior
from .surrogate import (
    GraphBatch,
    SurrogateConfig,
    SurrogateParams,
    features,
    init_params,
    train,
)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "graph_id", "y", "best_y", "t_select_ms", "t_eval_ms", "t_retrain_ms")
TIME_COLUMNS = ("t_select_ms", "t_eval_ms", "t_retrain_ms")


class ObjectiveFunction(Protocol):
    cost_model: str

    def evaluate(self, graph: AttributedGraph) -> float: ...


@dataclass
class SeedBundle:
    pool: int = 0
    net: int = 0
    mcmc: int = 0
    selection: int = 0

    @classmethod
    def from_base(cls, base: int) -> "SeedBundle":
        return cls(pool=base, net=base + 1, mcmc=base + 2, selection=base + 3)


@dataclass
class ExperimentConfig:
    n_init: int = 20
    max_iter: int = 130
    n_samples: int = 10
    retrain_every: int = 20
    num_bases: int = 4
    candidate_budget: int | None = None
    seeds: SeedBundle = field(default_factory=SeedBundle)
    initial_epochs: int = 2000
    retrain_epochs: int = 500
    warm_start: bool = True
    n_walkers: int = 20
    burn_in: int = 200
    thin: int = 10
    target_value: float | None = None
    surrogate: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.seeds, dict):
            self.seeds = SeedBundle(**self.seeds)
        if self.n_init < 2:
            raise ValueError("n_init must be >= 2")
        if self.retrain_every < 1:
            raise ValueError("retrain_every must be >= 1")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def surrogate_config(self, pool: GraphPool) -> SurrogateConfig:
        return SurrogateConfig(
            input_dim=pool.input_dim, global_dim=pool.global_dim,
            num_relations=pool.num_relations, num_bases=self.num_bases, **self.surrogate,
        )


@dataclass
class EvaluationSet:
    """Evaluated graphs in order; failed evaluations are kept as exclusions."""

    ids: list[int] = field(default_factory=list)
    ys: list[float] = field(default_factory=list)
    failed: set[int] = field(default_factory=set)

    def add(self, graph_id: int, y: float | None) -> None:
        if graph_id in self.ids or graph_id in self.failed:
            raise ValueError(f"graph {graph_id} already evaluated")
        if y is None or not np.isfinite(y):
            self.failed.add(graph_id)
        else:
            self.ids.append(graph_id)
            self.ys.append(float(y))

    @property
    def evaluated(self) -> set[int]:
        return set(self.ids) | self.failed

    @property
    def y_max(self) -> float:
        return max(self.ys) if self.ys else -np.inf

    @property
    def best_id(self) -> int | None:
        return self.ids[int(np.argmax(self.ys))] if self.ys else None

    def standardization(self) -> tuple[float, float]:
        y = np.asarray(self.ys)
        sd = float(y.std())
        return float(y.mean()), sd if sd > 0 else 1.0

    def standardized(self) -> np.ndarray:
        mean, sd = self.standardization()
        return (np.asarray(self.ys) - mean) / sd


@dataclass
class IterationRecord:
    t: int
    graph_id: int
    y: float
    best_y: float
    t_select_ms: float = 0.0
    t_eval_ms: float = 0.0
    t_retrain_ms: float = 0.0
    retrained: bool = False
    resampled: bool = False


@dataclass
class RunRecord:
    rows: list[IterationRecord] = field(default_factory=list)
    best_id: int | None = None
    best_y: float = -np.inf
    config: dict = field(default_factory=dict)
    method: str = "dgbo"

    def append(self, row: IterationRecord) -> None:
        self.rows.append(row)

    @property
    def trajectory(self) -> np.ndarray:
        """Incumbent best after each evaluation."""
        return np.array([r.best_y for r in self.rows])

    def to_csv(self, include_times: bool = True) -> str:
        cols = CSV_COLUMNS if include_times else tuple(c for c in CSV_COLUMNS if c not in TIME_COLUMNS)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows:
            vals = {
                "t": r.t, "graph_id": r.graph_id, "y": repr(float(r.y)), "best_y": repr(float(r.best_y)),
                "t_select_ms": f"{r.t_select_ms:.3f}", "t_eval_ms": f"{r.t_eval_ms:.3f}",
                "t_retrain_ms": f"{r.t_retrain_ms:.3f}",
            }
            w.writerow([vals[c] for c in cols])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())

    def summary(self) -> dict:
        return {
            "method": self.method,
            "evaluations": len(self.rows),
            "best_id": self.best_id,
            "best_y": self.best_y,
            "config": self.config,
        }

    @classmethod
    def read_csv(cls, path: str | Path) -> "RunRecord":
        rec = cls()
        with open(path) as fh:
            for row in csv.DictReader(fh):
                rec.rows.append(IterationRecord(
                    int(row["t"]), int(row["graph_id"]), float(row["y"]), float(row["best_y"]),
                    float(row.get("t_select_ms") or 0), float(row.get("t_eval_ms") or 0),
                    float(row.get("t_retrain_ms") or 0),
                ))
        ok = [r for r in rec.rows if np.isfinite(r.y)]
        if ok:
            best = max(ok, key=lambda r: r.y)
            rec.best_id, rec.best_y = best.graph_id, best.y
        return rec


def _ms(start: float) -> float:
    return (time.perf_counter() - start) * 1e3


def _safe_evaluate(objective: ObjectiveFunction, graph: AttributedGraph) -> float:
    try:
        y = float(objective.evaluate(graph))
    except Exception as exc:  # objective failures are recorded, not fatal
        log.warning("objective failed on graph %s: %s", graph.id, exc)
        return float("nan")
    return y


class DGBO:
    """Stateful optimizer; :meth:`run` drives initialization and all iterations."""

    def __init__(self, objective: ObjectiveFunction, pool: GraphPool, config: ExperimentConfig):
        if len(pool) <= config.n_init:
            raise ValueError(f"pool of {len(pool)} graphs needs more than n_init={config.n_init}")
        self.objective = objective
        self.pool = pool
        self.config = config
        self.net_config = config.surrogate_config(pool)
        self.data = EvaluationSet()
        self.record = RunRecord(config=config.to_dict(), method="dgbo")
        self.rng = np.random.default_rng(config.seeds.selection)
        self.params: SurrogateParams | None = None
        self.samples: HyperSampleSet | None = None
        self.pool_batch = GraphBatch(pool.graphs, pool.num_relations)
        self.pool_phi: np.ndarray | None = None
        self.train_loss = float("nan")

    # --- model updates -------------------------------------------------
    def _train(self, epochs: int, t: int) -> None:
        graphs = [self.pool.by_id(g) for g in self.data.ids]
        y = self.data.standardized()
        if self.params is None or not self.config.warm_start:
            self.params = init_params(self.net_config, self.config.seeds.net)
        self.params, self.train_loss = train(
            (graphs, y), self.params, self.net_config, epochs,
            seed=int(np.random.SeedSequence([self.config.seeds.net, t]).generate_state(1)[0]),
        )
        self.pool_phi = features(self.pool_batch, self.params, self.net_config)

    def _resample(self, t: int) -> None:
        rows = [self.pool.index_of(g) for g in self.data.ids]
        phi = self.pool_phi[rows].T
        self.samples = sample_posterior(
            phi, self.data.standardized(), self.config.n_samples,
            seed=[self.config.seeds.mcmc, t], prior=DEFAULT_PRIOR,
            n_walkers=self.config.n_walkers, burn_in=self.config.burn_in, thin=self.config.thin,
        )

    def _evaluate(self, graph_id: int) -> tuple[float, float]:
        start = time.perf_counter()
        y = _safe_evaluate(self.objective, self.pool.by_id(graph_id))
        elapsed = _ms(start)
        self.data.add(graph_id, y)
        return y, elapsed

    # --- phases ---------------------------------------------------------
    def initialize(self) -> None:
        cfg = self.config
        ids = self.rng.choice(np.array(self.pool.ids), size=cfg.n_init, replace=False)
        for gid in ids:
            y, t_eval = self._evaluate(int(gid))
            self.record.append(IterationRecord(0, int(gid), y, self.data.y_max, t_eval_ms=t_eval))
        if len(self.data.ys) < 2:
            raise RuntimeError("fewer than two successful initial evaluations")
        start = time.perf_counter()
        self._train(cfg.initial_epochs, 0)
        self._resample(0)
        last = self.record.rows[-1]
        last.t_retrain_ms, last.retrained, last.resampled = _ms(start), True, True

    def step(self, t: int) -> IterationRecord:
        cfg = self.config
        mean, sd = self.data.standardization()
        y_max_std = (self.data.y_max - mean) / sd
        start = time.perf_counter()
        gid = select_next(self.pool.ids, self.data.evaluated, self.pool_phi, self.samples,
                          y_max_std, cfg.candidate_budget, self.rng)
        t_select = _ms(start)
        y, t_eval = self._evaluate(gid)
        start = time.perf_counter()
        retrained = t % cfg.retrain_every == 0
        if retrained:
            self._train(cfg.retrain_epochs, t)
        self._resample(t)
        row = IterationRecord(t, gid, y, self.data.y_max, t_select, t_eval, _ms(start),
                              retrained=retrained, resampled=True)
        self.record.append(row)
        return row

    def run(self) -> RunRecord:
        self.initialize()
        cfg = self.config
        for t in range(1, cfg.max_iter + 1):
            if len(self.data.evaluated) >= len(self.pool):
                break
            try:
                row = self.step(t)
            except PoolExhaustedError:
                break
            log.debug("t=%d graph=%d y=%.5f best=%.5f", t, row.graph_id, row.y, row.best_y)
            if cfg.target_value is not None and self.data.y_max >= cfg.target_value:
                break
        self.record.best_id, self.record.best_y = self.data.best_id, self.data.y_max
        return self.record


def run(objective: ObjectiveFunction, pool: GraphPool, config: ExperimentConfig) -> RunRecord:
    return DGBO(objective, pool, config).run()


def random_baseline(objective: ObjectiveFunction, pool: GraphPool | Sequence[AttributedGraph],
                    budget: int, seed: int) -> RunRecord:
    """Uniform selection without replacement."""
    graphs = list(pool)
    if budget > len(graphs):
        raise ValueError(f"budget {budget} exceeds pool size {len(graphs)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(graphs))[:budget]
    data = EvaluationSet()
    record = RunRecord(config={"budget": budget, "seed": seed}, method="random")
    for t, i in enumerate(order, start=1):
        g = graphs[int(i)]
        start = time.perf_counter()
        y = _safe_evaluate(objective, g)
        t_eval = _ms(start)
        data.add(g.id, y)
        record.append(IterationRecord(t, g.id, y, data.y_max, t_eval_ms=t_eval))
    record.best_id, record.best_y = data.best_id, data.y_max
    return record


def evaluations_to_reach(record: RunRecord, target: float, tol: float = 1e-12) -> int | None:
    """1-based evaluation count at which the incumbent first reaches ``target``."""
    for i, r in enumerate(record.rows, start=1):
        if r.best_y >= target - tol:
            return i
    return None


def write_summary(path: str | Path, record: RunRecord, extra: dict | None = None) -> None:
    data = record.summary()
    if extra:
        data.update(extra)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o)}")
