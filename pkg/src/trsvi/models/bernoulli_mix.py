"""Mixture of multivariate Bernoullis with Beta priors on every pixel."""

import numpy as np

from trsvi import expfam
from trsvi.errors import UsageError
from trsvi.models.base import GlobalState, MixtureModel, Prior
from trsvi.special import digamma


def bernoulli_expected_loglik(a, b, x):
    """``x . psi(a) + (1 - x) . psi(b) - 1 . psi(a + b)`` for one binary vector."""
    a, b, x = (np.asarray(v, dtype=np.float64) for v in (a, b, x))
    if not (a.shape == b.shape == x.shape):
        raise UsageError("a, b and x must have equal shapes")
    return float(x @ digamma(a) + (1.0 - x) @ digamma(b) - np.sum(digamma(a + b)))


class BernoulliMixture(MixtureModel):
    def __init__(self, K, D, a=1.0, b=1.0, alpha=1.0):
        super().__init__(K, alpha)
        if D < 1 or a <= 0 or b <= 0:
            raise UsageError("need D >= 1 and positive Beta prior parameters")
        self.D = int(D)
        self.a, self.b = float(a), float(b)
        self.family = expfam.FamilySpec.beta_vector(self.D)

    def prior(self):
        eta = np.concatenate([np.full(self.D, self.a), np.full(self.D, self.b)])
        return Prior(eta, self.alpha.copy())

    def split(self, lam):
        return lam[..., : self.D], lam[..., self.D :]

    def expected_loglik(self, state, X):
        a, b = self.split(state.lam)
        dab = digamma(a + b)
        return X @ (digamma(a) - dab).T + (1.0 - X) @ (digamma(b) - dab).T

    def sufficient_stats(self, X):
        return np.hstack([X, 1.0 - X])

    def log_base_measure(self, X):
        return np.zeros(len(X))

    def weighted_stats(self, X, phi):
        on = phi.T @ X
        return np.hstack([on, phi.sum(axis=0)[:, None] - on])

    def init_state(self, rng, data=None):
        lam = rng.gamma(100.0, 0.01, size=(self.K, 2 * self.D))
        return GlobalState(lam, np.ones(self.K))

    def mean_params(self, state):
        a, b = self.split(state.lam)
        return a / (a + b)
