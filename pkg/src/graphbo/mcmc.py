"""Posterior sampling of the BLR hyperparameters with an affine-invariant ensemble sampler.

The sampler walks in ``(ln 1/s_w^2, ln s_n^2)``.  The weight prior is a normal
density on the first coordinate directly; the horseshoe bound is a density on
``s_n^2`` and picks up the Jacobian ``+ ln s_n^2`` in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .blr import BLRHyper, BLRPosterior, SpectralEvidence, fit, log_marginal_likelihood


class SamplerStalledError(RuntimeError):
    """Every proposal was rejected for too many consecutive sweeps."""


@dataclass(frozen=True)
class PriorSpec:
    log_precision_mean: float = -10.0
    log_precision_std: float = 0.1
    horseshoe_scale: float = 0.1
    use_weight_prior: bool = True
    use_horseshoe: bool = True

    def __post_init__(self):
        if not self.log_precision_std > 0:
            raise ValueError("log_precision_std must be positive")
        if not self.horseshoe_scale > 0:
            raise ValueError("horseshoe_scale must be positive")


DEFAULT_PRIOR = PriorSpec()
FLAT_PRIOR = PriorSpec(use_weight_prior=False, use_horseshoe=False)


def _log_prior_terms(log_precision, noise_var, prior: PriorSpec):
    out = 0.0
    if prior.use_weight_prior:
        s = prior.log_precision_std
        z = (log_precision - prior.log_precision_mean) / s
        out = out - 0.5 * z * z - math.log(s * math.sqrt(2.0 * math.pi))
    if prior.use_horseshoe:
        with np.errstate(divide="ignore"):
            out = out + np.log(np.log1p(2.0 * prior.horseshoe_scale ** 2 / noise_var))
    return out


def log_prior(weight_var: float, noise_var: float, prior: PriorSpec = DEFAULT_PRIOR) -> float:
    """Normal log density of ``ln 1/s_w^2`` plus ``ln ln(1 + 2 tau^2 / s_n^2)``.

    The horseshoe term is its standard closed-form bound, up to an additive
    constant.  Returns ``-inf`` outside the positive quadrant.
    """
    if not (weight_var > 0 and noise_var > 0):
        return -math.inf
    return float(_log_prior_terms(-math.log(weight_var), noise_var, prior))


def log_posterior(hyper: BLRHyper | tuple[float, float], phi: np.ndarray, y: np.ndarray,
                  prior: PriorSpec = DEFAULT_PRIOR) -> float:
    """Unnormalized ``ln p(y | theta) + ln p(theta)``."""
    if isinstance(hyper, BLRHyper):
        sw2, sn2 = hyper.weight_var, hyper.noise_var
    else:
        sw2, sn2 = hyper
    if not (sw2 > 0 and sn2 > 0):
        return -math.inf
    lp = log_prior(sw2, sn2, prior)
    if lp == -math.inf:
        return lp
    return log_marginal_likelihood(phi, y, BLRHyper(sw2, sn2)) + lp


def stretch_factor(rng: np.random.Generator, a: float, size) -> np.ndarray:
    """Draws from ``g(z) ~ 1/sqrt(z)`` on ``[1/a, a]`` by inverting its CDF."""
    u = rng.random(size)
    return ((a - 1.0) * u + 1.0) ** 2 / a


@dataclass
class EnsembleRun:
    chain: np.ndarray          # (sweeps, walkers, dim)
    log_prob: np.ndarray       # (sweeps, walkers)
    acceptance: np.ndarray     # per-walker acceptance fraction

    @property
    def flat(self) -> np.ndarray:
        return self.chain.reshape(-1, self.chain.shape[-1])


def run_ensemble(log_prob: Callable[[np.ndarray], np.ndarray], p0: np.ndarray, n_sweeps: int,
                 rng: np.random.Generator, a: float = 2.0, max_stall: int = 50) -> EnsembleRun:
    """Stretch-move ensemble sampler with the two-halves parallel update.

    ``log_prob`` maps a ``(k, dim)`` array of positions to ``k`` log densities.
    Within a sweep each half of the ensemble is moved using the other half
    as the complementary set.
    """
    pos = np.array(p0, dtype=float)
    n_walkers, dim = pos.shape
    if n_walkers < 4 or n_walkers % 2:
        raise ValueError("need an even number of at least 4 walkers")
    lp = np.asarray(log_prob(pos), dtype=float)
    if not np.all(np.isfinite(lp)):
        raise ValueError("initial walker positions have non-finite log density")
    half = n_walkers // 2
    halves = (np.arange(half), np.arange(half, n_walkers))
    chain = np.empty((n_sweeps, n_walkers, dim))
    lps = np.empty((n_sweeps, n_walkers))
    accepted = np.zeros(n_walkers)
    stall = 0
    for t in range(n_sweeps):
        any_accept = False
        for k in (0, 1):
            active, other = halves[k], halves[1 - k]
            z = stretch_factor(rng, a, len(active))
            partners = other[rng.integers(0, len(other), size=len(active))]
            prop = pos[partners] + z[:, None] * (pos[active] - pos[partners])
            lp_prop = np.asarray(log_prob(prop), dtype=float)
            log_ratio = (dim - 1) * np.log(z) + lp_prop - lp[active]
            accept = np.log(rng.random(len(active))) < log_ratio
            accept &= np.isfinite(lp_prop)
            idx = active[accept]
            pos[idx] = prop[accept]
            lp[idx] = lp_prop[accept]
            accepted[idx] += 1
            any_accept |= bool(accept.any())
        chain[t] = pos
        lps[t] = lp
        stall = 0 if any_accept else stall + 1
        if stall >= max_stall:
            raise SamplerStalledError(
                f"no proposal accepted for {max_stall} consecutive sweeps (sweep {t}); "
                "the posterior may be pathologically peaked"
            )
    return EnsembleRun(chain, lps, accepted / max(n_sweeps, 1))


@dataclass
class HyperSample:
    hyper: BLRHyper
    log_posterior: float
    posterior: BLRPosterior | None = None


@dataclass
class HyperSampleSet:
    samples: list[HyperSample] = field(default_factory=list)
    acceptance: float = float("nan")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def hypers(self) -> list[BLRHyper]:
        return [s.hyper for s in self.samples]


def log_space_target(phi: np.ndarray, y: np.ndarray, prior: PriorSpec = DEFAULT_PRIOR):
    """Vectorized log density over ``(ln 1/s_w^2, ln s_n^2)`` rows."""
    evidence = SpectralEvidence(phi, y)

    def target(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        log_prec, log_noise = x[:, 0], x[:, 1]
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            sw2 = np.exp(-log_prec)
            sn2 = np.exp(log_noise)
            val = evidence(sw2, sn2) + _log_prior_terms(log_prec, sn2, prior) + log_noise
        return np.where(np.isfinite(val), val, -np.inf)

    return target


def sample_posterior(phi: np.ndarray, y: np.ndarray, n_samples: int, seed,
                     prior: PriorSpec = DEFAULT_PRIOR, n_walkers: int = 20, burn_in: int = 200,
                     thin: int = 10, a: float = 2.0, init_noise_var: float | None = None,
                     fit_posteriors: bool = True) -> HyperSampleSet:
    """Draw ``n_samples`` hyperparameter pairs from ``p(theta | phi, y)``.

    Walkers start at ``(mean of ln 1/s_w^2, ln init_noise_var)`` plus
    ``N(0, 0.1^2)`` jitter, run ``burn_in`` sweeps, and then the ensemble
    positions are collected every ``thin`` sweeps until enough samples exist.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    target = log_space_target(phi, y, prior)
    noise0 = prior.horseshoe_scale if init_noise_var is None else init_noise_var
    center = np.array([prior.log_precision_mean, math.log(noise0)])
    p0 = center + 0.1 * rng.standard_normal((n_walkers, 2))
    n_collect = -(-n_samples // n_walkers)
    run = run_ensemble(target, p0, burn_in + n_collect * thin, rng, a=a)
    picks = run.chain[burn_in + thin - 1::thin][:n_collect].reshape(-1, 2)[:n_samples]
    lps = run.log_prob[burn_in + thin - 1::thin][:n_collect].reshape(-1)[:n_samples]
    out = HyperSampleSet(acceptance=float(run.acceptance.mean()))
    for (log_prec, log_noise), lp in zip(picks, lps):
        hyper = BLRHyper(math.exp(-log_prec), math.exp(log_noise))
        post = fit(phi, y, hyper) if fit_posteriors else None
        # report the posterior in the (s_w^2, s_n^2) parameterization
        out.samples.append(HyperSample(hyper, float(lp - log_noise), post))
    return out
