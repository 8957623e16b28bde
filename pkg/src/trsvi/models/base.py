"""Shared containers and the conjugate-mixture base class."""

from dataclasses import dataclass, field

import numpy as np

from trsvi import expfam
from trsvi.errors import UsageError
from trsvi.special import digamma


@dataclass
class GlobalState:
    """Variational natural parameters: one row of ``lam`` per component or topic.

    ``gamma`` is the Dirichlet over mixture weights; it is ``None`` for LDA, whose
    document weights are local.
    """

    lam: np.ndarray
    gamma: np.ndarray = None

    @property
    def K(self):
        return self.lam.shape[0]

    def copy(self):
        return GlobalState(self.lam.copy(), None if self.gamma is None else self.gamma.copy())

    def interpolate(self, target, rho):
        """``(1 - rho) * self + rho * target``, componentwise in natural coordinates."""
        if self.lam.shape != target.lam.shape or (self.gamma is None) != (target.gamma is None):
            raise UsageError("state shapes differ")
        if self.gamma is not None and self.gamma.shape != target.gamma.shape:
            raise UsageError("state shapes differ")
        lam = (1.0 - rho) * self.lam + rho * target.lam
        gamma = None if self.gamma is None else (1.0 - rho) * self.gamma + rho * target.gamma
        return GlobalState(lam, gamma)


@dataclass
class Prior:
    """Prior natural parameters ``eta`` (shared by all components) and Dirichlet ``alpha``.

    For mixtures ``alpha`` is the prior over mixture weights; for LDA it is the
    per-document topic prior.
    """

    eta: np.ndarray
    alpha: np.ndarray

    def copy(self):
        return Prior(self.eta.copy(), self.alpha.copy())


@dataclass(frozen=True)
class Docs:
    """Bag-of-words documents in CSR layout, one row per document.

    ``ids`` hold unique word ids per document, ``counts`` their multiplicities.
    """

    indptr: np.ndarray
    ids: np.ndarray
    counts: np.ndarray

    def __len__(self):
        return len(self.indptr) - 1

    @classmethod
    def from_lists(cls, docs):
        """Build from a sequence of ``(ids, counts)`` pairs."""
        lengths = [len(ids) for ids, _ in docs]
        indptr = np.zeros(len(docs) + 1, dtype=np.int64)
        np.cumsum(lengths, out=indptr[1:])
        if docs:
            ids = np.concatenate([np.asarray(i, dtype=np.int64) for i, _ in docs]) if indptr[-1] else np.zeros(0, np.int64)
            counts = (
                np.concatenate([np.asarray(c, dtype=np.float64) for _, c in docs]) if indptr[-1] else np.zeros(0)
            )
        else:
            ids, counts = np.zeros(0, np.int64), np.zeros(0)
        return cls(indptr, ids, counts)

    def doc(self, i):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.ids[lo:hi], self.counts[lo:hi]

    def doc_lengths(self):
        owner = np.repeat(np.arange(len(self)), np.diff(self.indptr))
        return np.bincount(owner, weights=self.counts, minlength=len(self))

    def take(self, idx):
        return Docs.from_lists([self.doc(i) for i in idx])


@dataclass
class Batch:
    """A mini-batch: observations plus the dataset-size scale ``N``.

    ``data`` is a ``(B, D)`` array for mixtures or :class:`Docs` for LDA.
    """

    data: object
    N: float

    @property
    def B(self):
        return len(self.data)

    @property
    def scale(self):
        return self.N / self.B if self.B else 0.0


@dataclass
class MixtureBeliefs:
    phi: np.ndarray
    log_phi: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.log_phi is None:
            with np.errstate(divide="ignore"):
                self.log_phi = np.log(self.phi)


def softmax_rows(scores):
    """Row-wise softmax with max subtraction; returns ``(probs, log_probs)``."""
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_norm
    return np.exp(log_p), log_p


class MixtureModel:
    """Mixture with a Dirichlet over weights and a conjugate prior on each component.

    Subclasses supply the component family, ``f(x)``, ``log g(x)`` and the expected
    log-likelihood; everything else follows from the shared conjugate structure.
    """

    family: expfam.FamilySpec

    def __init__(self, K, alpha=1.0):
        if K < 1:
            raise UsageError("K must be >= 1")
        self.K = int(K)
        self.alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (self.K,)).copy()
        if not np.all(self.alpha > 0):
            raise UsageError("alpha must be positive")

    # -- to be provided by subclasses
    def prior(self):
        raise NotImplementedError

    def expected_loglik(self, state, X):
        """``E_q[log p(x_n | k)]`` as an ``(n, K)`` array."""
        raise NotImplementedError

    def sufficient_stats(self, X):
        """``f(x_n)`` rows in the natural-parameter layout of one component."""
        raise NotImplementedError

    def log_base_measure(self, X):
        """``log g(x_n)``."""
        raise NotImplementedError

    def weighted_stats(self, X, phi):
        """``sum_n phi_nk f(x_n)`` as a ``(K, P)`` array."""
        return phi.T @ self.sufficient_stats(X)

    def init_state(self, rng, data=None):
        raise NotImplementedError

    # -- shared machinery
    def check_batch(self, batch):
        X = np.asarray(batch.data)
        if X.ndim != 2 or X.shape[1] != self.D:
            raise UsageError(f"expected data of shape (B, {self.D}), got {X.shape}")
        return X

    def component(self, state, k):
        return expfam.NaturalParams(self.family, state.lam[k])

    def weight_expectation(self, state):
        return digamma(state.gamma) - digamma(state.gamma.sum())

    def scores(self, state, X):
        return self.expected_loglik(state, X) + self.weight_expectation(state)

    def uniform_beliefs(self, batch, prior=None):
        B = batch.B
        return MixtureBeliefs(np.full((B, self.K), 1.0 / self.K))

    def local_step(self, state, batch, init=None, iters=None, prior=None):
        """Closed-form responsibilities; ``init``, ``iters`` and ``prior`` only exist for interface parity."""
        X = self.check_batch(batch)
        phi, log_phi = softmax_rows(self.scores(state, X))
        return MixtureBeliefs(phi, log_phi)

    def expected_stats(self, batch, beliefs, prior=None):
        """Target natural parameters ``prior + (N/B) sum_n phi_nk f(x_n)``."""
        prior = self.prior() if prior is None else prior
        X = self.check_batch(batch)
        phi = beliefs.phi
        if phi.shape != (batch.B, self.K):
            raise UsageError("beliefs do not match the batch")
        lam = prior.eta[None, :] + batch.scale * self.weighted_stats(X, phi)
        gamma = prior.alpha + batch.scale * phi.sum(axis=0)
        return GlobalState(lam, gamma)

    def raw_stats(self, batch, beliefs):
        """Unscaled sufficient statistics ``sum_n phi_nk f(x_n)`` without the prior."""
        X = self.check_batch(batch)
        return GlobalState(self.weighted_stats(X, beliefs.phi), beliefs.phi.sum(axis=0))

    def local_elbo_terms(self, state, batch, beliefs, prior=None):
        """Per-datapoint ``E_q[log p(x_n, z_n | beta) / q(z_n)]``."""
        X = self.check_batch(batch)
        s = self.scores(state, X)
        ent = np.where(beliefs.phi > 0, beliefs.phi * beliefs.log_phi, 0.0)
        return (beliefs.phi * s).sum(axis=1) - ent.sum(axis=1)

    def global_kl(self, state, prior=None):
        prior = self.prior() if prior is None else prior
        eta = expfam.NaturalParams(self.family, prior.eta)
        kl = sum(expfam.kl_divergence(self.component(state, k), eta) for k in range(self.K))
        fam = expfam.FamilySpec.dirichlet(self.K)
        kl += expfam.kl_divergence(expfam.NaturalParams(fam, state.gamma), expfam.NaturalParams(fam, prior.alpha))
        return kl

    def elbo(self, state, batch, beliefs, prior=None):
        """Stochastic ELBO ``(N/B) sum_n E[log p(x_n, z_n|beta)/q(z_n)] - KL(q(beta) || p(beta))``."""
        data = self.local_elbo_terms(state, batch, beliefs, prior).sum() * batch.scale if batch.B else 0.0
        return float(data - self.global_kl(state, prior))

    def prior_state(self, prior=None):
        prior = self.prior() if prior is None else prior
        return GlobalState(np.tile(prior.eta, (self.K, 1)), prior.alpha.copy())

    def mixture_weights(self, state):
        return state.gamma / state.gamma.sum()
