"""Mixture of Gaussians with a normal-inverse-Wishart prior per component.

Component natural parameters follow :mod:`trsvi.expfam`'s NIW layout, so the
trust-region interpolation is a plain convex combination of rows of ``lam``.
With ``f(x) = (1, -2x, vec(x x^T), 1)`` the sufficient-statistic increment of a
point is exactly one unit of ``s`` and ``nu``.
"""

import math

import numpy as np
from scipy.linalg import solve_triangular

from trsvi import expfam
from trsvi.errors import DomainError, UsageError
from trsvi.models.base import GlobalState, MixtureModel, Prior
from trsvi.special import digamma

_LOG_PI = math.log(math.pi)


def _chol(psi):
    try:
        L = np.linalg.cholesky(psi)
    except np.linalg.LinAlgError:
        raise DomainError("Psi is not positive definite") from None
    if np.any(np.diag(L) <= expfam.PD_PIVOT):
        raise DomainError("Psi is not positive definite")
    return L


def _expected_loglik_rows(s, m, psi, nu, X):
    D = len(m)
    L = _chol(psi)
    z = solve_triangular(L, (X - m).T, lower=True)
    quad = np.sum(z * z, axis=0)
    logdet_inv = -2.0 * np.sum(np.log(np.diag(L)))
    const = -0.5 * D / s + 0.5 * np.sum(digamma(0.5 * (nu - np.arange(D)))) + 0.5 * logdet_inv - 0.5 * D * _LOG_PI
    return -0.5 * nu * quad + const


def gaussian_expected_loglik(p, x):
    """``E_q[log N(x | mu, Sigma)]`` under ``(mu, Sigma) ~ NIW(p)``.

    Equals ``-nu/2 (x-m)^T Psi^-1 (x-m) - D/(2s) + 1/2 sum_i psi((nu+1-i)/2)
    + 1/2 log|Psi^-1| - D/2 log(pi)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.dim,):
        raise UsageError("x has the wrong dimension")
    return float(_expected_loglik_rows(p.s, np.asarray(p.m, float), np.asarray(p.psi, float), p.nu, x[None, :])[0])


class GaussianMixture(MixtureModel):
    def __init__(self, K, D, s=1.0, m=None, psi=None, nu=None, alpha=1.0):
        super().__init__(K, alpha)
        self.D = int(D)
        m = np.zeros(self.D) if m is None else np.asarray(m, dtype=np.float64)
        psi = np.eye(self.D) if psi is None else np.asarray(psi, dtype=np.float64)
        nu = self.D + 2.0 if nu is None else float(nu)
        self.niw = expfam.NiwParams(float(s), m, psi, nu)
        self.family = expfam.FamilySpec.niw(self.D)
        self._eta = expfam.niw_to_natural(self.niw).values.copy()

    def prior(self):
        return Prior(self._eta.copy(), self.alpha.copy())

    def niw_params(self, state, k):
        return expfam.natural_to_niw(self.component(state, k))

    def expected_loglik(self, state, X):
        out = np.empty((len(X), self.K))
        for k in range(self.K):
            p = self.niw_params(state, k)
            out[:, k] = _expected_loglik_rows(p.s, p.m, p.psi, p.nu, X)
        return out

    def sufficient_stats(self, X):
        n = len(X)
        outer = np.einsum("ni,nj->nij", X, X).reshape(n, -1)
        return np.hstack([np.ones((n, 1)), -2.0 * X, outer, np.ones((n, 1))])

    def log_base_measure(self, X):
        return np.full(len(X), -0.5 * self.D * math.log(2.0 * math.pi))

    def weighted_stats(self, X, phi):
        w = phi.sum(axis=0)
        first = phi.T @ X
        second = np.einsum("nk,ni,nj->kij", phi, X, X).reshape(self.K, -1)
        return np.hstack([w[:, None], -2.0 * first, second, w[:, None]])

    def init_state(self, rng, data=None):
        """Component means at randomly chosen data points, everything else at the prior."""
        lam = np.tile(self._eta, (self.K, 1))
        if data is not None and len(data):
            X = np.asarray(data, dtype=np.float64)
            picks = rng.choice(len(X), size=self.K, replace=len(X) < self.K)
            for k, i in enumerate(picks):
                p = expfam.NiwParams(self.niw.s, X[i], self.niw.psi, self.niw.nu)
                lam[k] = expfam.niw_to_natural(p).values
        return GlobalState(lam, np.ones(self.K))

    def mean_params(self, state):
        """Posterior-mean ``(means, covariances)``; covariance falls back to ``Psi/nu`` when ``nu <= D + 1``."""
        means = np.empty((self.K, self.D))
        covs = np.empty((self.K, self.D, self.D))
        for k in range(self.K):
            p = self.niw_params(state, k)
            means[k] = p.m
            denom = p.nu - self.D - 1.0
            covs[k] = p.psi / denom if denom > 0 else p.psi / p.nu
        return means, covs
