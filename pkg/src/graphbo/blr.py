"""Bayesian linear regression on fixed basis features.

Conventions: ``phi`` is the ``M x N`` design matrix whose columns are the
feature vectors of the N observations.  With weight prior ``N(0, s_w^2 I)`` and
noise ``N(0, s_n^2)`` the posterior precision is
``K = phi phi^T / s_n^2 + I / s_w^2`` and every quantity below is computed from
that ``M x M`` system, so cost grows linearly in N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .numerics import NotPositiveDefiniteError, cholesky

JITTER_RETRIES = 3


@dataclass(frozen=True)
class BLRHyper:
    weight_var: float
    noise_var: float

    def __post_init__(self):
        for name in ("weight_var", "noise_var"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")


@dataclass
class BLRPosterior:
    phi: np.ndarray
    y: np.ndarray
    hyper: BLRHyper
    K: np.ndarray
    chol: np.ndarray
    k_inv_phi_y: np.ndarray

    @property
    def mean_weights(self) -> np.ndarray:
        """Posterior mean of the weights, ``K^-1 phi y / s_n^2``."""
        return self.k_inv_phi_y / self.hyper.noise_var


def _precision(phi_phi_t: np.ndarray, hyper: BLRHyper) -> np.ndarray:
    m = phi_phi_t.shape[0]
    return phi_phi_t / hyper.noise_var + np.eye(m) / hyper.weight_var


def fit(phi: np.ndarray, y: np.ndarray, hyper: BLRHyper) -> BLRPosterior:
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if phi.shape[1] != y.shape[0] or y.shape[0] < 1:
        raise ValueError(f"design matrix {phi.shape} does not match {y.shape[0]} targets")
    if not np.all(np.isfinite(phi)):
        raise ValueError("design matrix has non-finite entries")
    k = _precision(phi @ phi.T, hyper)
    try:
        c = cholesky(k, jitter_retries=JITTER_RETRIES)
    except NotPositiveDefiniteError as exc:
        raise NotPositiveDefiniteError(
            exc.minor, f"{exc}; try a larger noise variance than {hyper.noise_var:g}"
        ) from exc
    phi_y = phi @ y
    z = solve_triangular(c, phi_y, lower=True)
    k_inv_phi_y = solve_triangular(c.T, z, lower=False)
    return BLRPosterior(phi, y, hyper, k, c, k_inv_phi_y)


def predict(phi_star: np.ndarray, post: BLRPosterior) -> tuple[np.ndarray | float, np.ndarray | float]:
    """Predictive mean and variance at one feature vector or at the columns of an ``M x C`` matrix."""
    q = np.asarray(phi_star, dtype=float)
    single = q.ndim == 1
    q2 = q.reshape(-1, 1) if single else q
    mu = (q2.T @ post.k_inv_phi_y) / post.hyper.noise_var
    v = solve_triangular(post.chol, q2, lower=True)
    var = np.einsum("ij,ij->j", v, v) + post.hyper.noise_var
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def log_marginal_likelihood(phi: np.ndarray, y: np.ndarray, hyper: BLRHyper,
                            post: BLRPosterior | None = None) -> float:
    """``ln N(y; 0, s_w^2 phi^T phi + s_n^2 I)`` evaluated through the ``M x M`` system."""
    if post is None:
        post = fit(phi, y, hyper)
    phi, y = post.phi, post.y
    m, n = phi.shape
    sn2, sw2 = hyper.noise_var, hyper.weight_var
    phi_y = phi @ y
    logdet = 2.0 * float(np.sum(np.log(np.diag(post.chol))))
    quad = y @ y / sn2 - (phi_y @ post.k_inv_phi_y) / sn2 ** 2
    return -0.5 * (quad + logdet + m * math.log(sw2) + n * math.log(2.0 * math.pi * sn2))


class SpectralEvidence:
    """Log marginal likelihood for many hyperparameter values at once.

    ``phi phi^T = U diag(lam) U^T`` is diagonalized once; ``K`` then shares the
    eigenvectors with eigenvalues ``lam / s_n^2 + 1 / s_w^2`` and the evidence
    costs O(M) per hyperparameter pair.
    """

    def __init__(self, phi: np.ndarray, y: np.ndarray):
        phi = np.atleast_2d(np.asarray(phi, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        self.m, self.n = phi.shape
        lam, u = np.linalg.eigh(phi @ phi.T)
        self.lam = np.maximum(lam, 0.0)
        self.proj2 = (u.T @ (phi @ y)) ** 2
        self.yy = float(y @ y)

    def __call__(self, weight_var, noise_var) -> np.ndarray:
        sw2 = np.asarray(weight_var, dtype=float)[..., None]
        sn2 = np.asarray(noise_var, dtype=float)[..., None]
        kappa = self.lam / sn2 + 1.0 / sw2
        logdet = np.sum(np.log(kappa), axis=-1)
        quad = self.yy / sn2[..., 0] - np.sum(self.proj2 / kappa, axis=-1) / sn2[..., 0] ** 2
        return -0.5 * (quad + logdet + self.m * np.log(sw2[..., 0])
                       + self.n * np.log(2.0 * np.pi * sn2[..., 0]))


def gp_predict(phi: np.ndarray, y: np.ndarray, phi_star: np.ndarray, hyper: BLRHyper):
    """Function-space predictor with kernel ``s_w^2 phi^T phi' + s_n^2 delta``.

    Works on the ``N x N`` Gram matrix; returns the predictive mean and the
    variance of a noisy observation at each column of ``phi_star``.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    q = np.asarray(phi_star, dtype=float)
    single = q.ndim == 1
    q = q.reshape(-1, 1) if single else q
    gram = hyper.weight_var * (phi.T @ phi) + hyper.noise_var * np.eye(phi.shape[1])
    gram_inv = np.linalg.inv(gram)
    k_star = hyper.weight_var * (phi.T @ q)
    mu = k_star.T @ (gram_inv @ y)
    var = (hyper.weight_var * np.einsum("ij,ij->j", q, q)
           - np.einsum("ij,ij->j", k_star, gram_inv @ k_star) + hyper.noise_var)
    if single:
        return float(mu[0]), float(var[0])
    return mu, var


def gp_log_evidence(phi: np.ndarray, y: np.ndarray, hyper: BLRHyper) -> float:
    """Direct ``N``-dimensional Gaussian log density of ``y``."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    n = phi.shape[1]
    cov = hyper.weight_var * (phi.T @ phi) + hyper.noise_var * np.eye(n)
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    return float(-0.5 * (y @ np.linalg.solve(cov, y) + logdet + n * math.log(2 * math.pi)))
