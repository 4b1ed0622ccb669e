"""Expected Improvement, its sum over hyperparameter samples, and candidate selection."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import erfc

from .blr import predict
from .mcmc import HyperSampleSet
from .surrogate import SurrogateConfig, SurrogateParams, forward

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class PoolExhaustedError(RuntimeError):
    """No unevaluated graph is left to select."""


def norm_cdf(z):
    return 0.5 * erfc(-np.asarray(z, dtype=float) / math.sqrt(2.0))


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return INV_SQRT_2PI * np.exp(-0.5 * z * z)


def expected_improvement(mu, sigma, y_max):
    """``(mu - y_max) Phi(z) + sigma phi(z)`` with ``z = (mu - y_max) / sigma``.

    Works element-wise on arrays; where ``sigma == 0`` the limit
    ``max(mu - y_max, 0)`` is returned.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    diff = mu - y_max
    safe = np.where(sigma > 0, sigma, 1.0)
    z = diff / safe
    ei = diff * norm_cdf(z) + sigma * norm_pdf(z)
    ei = np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(diff, 0.0))
    return float(ei) if ei.ndim == 0 else ei


def integrated_ei_features(phi: np.ndarray, samples: HyperSampleSet, y_max: float) -> np.ndarray:
    """Sum of EI over hyperparameter samples for each row of ``phi`` (``C x M``)."""
    phi = np.atleast_2d(phi)
    total = np.zeros(phi.shape[0])
    for s in samples:
        mu, var = predict(phi.T, s.posterior)
        total += expected_improvement(mu, np.sqrt(var), y_max)
    return total


def integrated_ei(graph, params: SurrogateParams, config: SurrogateConfig,
                  samples: HyperSampleSet, y_max: float) -> float:
    """One forward pass for the features, then EI summed over all samples."""
    if len(samples) == 0:
        raise ValueError("need at least one hyperparameter sample")
    _, phi, _ = forward(graph, params, config)
    return float(integrated_ei_features(phi[None, :], samples, y_max)[0])


@dataclass
class Candidate:
    graph_id: int
    phi: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    acquisition: float


def score_candidates(ids: Sequence[int], phi: np.ndarray, samples: HyperSampleSet,
                     y_max: float) -> list[Candidate]:
    """Per-sample predictions and integrated EI for candidate rows of ``phi``."""
    mus, sigmas = [], []
    for s in samples:
        mu, var = predict(phi.T, s.posterior)
        mus.append(mu)
        sigmas.append(np.sqrt(var))
    mus, sigmas = np.array(mus), np.array(sigmas)
    acq = expected_improvement(mus, sigmas, y_max).sum(axis=0)
    return [Candidate(int(g), phi[i], mus[:, i], sigmas[:, i], float(acq[i]))
            for i, g in enumerate(ids)]


def default_candidate_budget(pool_size: int) -> int:
    return pool_size if pool_size <= 2048 else 1024


def select_next(pool_ids: Sequence[int], evaluated: set[int] | Sequence[int],
                pool_features: np.ndarray, samples: HyperSampleSet, y_max: float,
                candidate_budget: int | None, rng: np.random.Generator,
                scored: list | None = None) -> int:
    """Argmax of integrated EI over a random subset of the unevaluated graphs.

    ``pool_features`` holds one feature row per entry of ``pool_ids``.  At most
    ``candidate_budget`` distinct unevaluated graphs are scored; ties are
    broken uniformly at random.  Scored candidates are appended to ``scored``
    when a list is given.
    """
    evaluated = set(evaluated)
    open_idx = np.array([i for i, g in enumerate(pool_ids) if g not in evaluated], dtype=np.int64)
    if len(open_idx) == 0:
        raise PoolExhaustedError("every graph in the pool has been evaluated")
    if len(open_idx) == 1:
        return int(pool_ids[open_idx[0]])
    budget = default_candidate_budget(len(pool_ids)) if candidate_budget is None else candidate_budget
    if budget < len(open_idx):
        open_idx = np.sort(rng.choice(open_idx, size=budget, replace=False))
    ids = [pool_ids[i] for i in open_idx]
    cands = score_candidates(ids, pool_features[open_idx], samples, y_max)
    if scored is not None:
        scored.extend(cands)
    acq = np.array([c.acquisition for c in cands])
    best = np.flatnonzero(acq == acq.max())
    pick = best[0] if len(best) == 1 else rng.choice(best)
    return int(ids[pick])
