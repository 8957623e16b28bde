"""Latent Dirichlet allocation with Dirichlet topics ``q(beta_k) = Dir(lam_k)``."""

from dataclasses import dataclass

import numpy as np

from trsvi import expfam
from trsvi.errors import UsageError
from trsvi.models._lda_kernel import lda_estep
from trsvi.models.base import Docs, GlobalState, Prior
from trsvi.special import dirichlet_expectation, gammaln


@dataclass
class DocBeliefs:
    """Per-document topic Dirichlets ``gamma`` (B, K) and per-word topic beliefs ``phi`` (nnz, K)."""

    gamma: np.ndarray
    phi: np.ndarray


def dirichlet_kl_rows(g, a):
    """``KL(Dir(g_i) || Dir(a))`` for every row of ``g``."""
    g = np.atleast_2d(g)
    gs = g.sum(axis=1)
    elog = dirichlet_expectation(g)
    return (
        ((g - a) * elog).sum(axis=1)
        - (gammaln(g).sum(axis=1) - gammaln(gs))
        + (gammaln(a).sum() - gammaln(a.sum()))
    )


class LDA:
    def __init__(self, K, V, alpha=0.1, eta=0.01, local_iters=10, tol=0.0):
        if K < 1 or V < 1:
            raise UsageError("K and V must be >= 1")
        self.K, self.V = int(K), int(V)
        self.alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (self.K,)).copy()
        self.eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (self.V,)).copy()
        if not (np.all(self.alpha > 0) and np.all(self.eta > 0)):
            raise UsageError("alpha and eta must be positive")
        self.local_iters = int(local_iters)
        self.tol = float(tol)
        self.family = expfam.FamilySpec.dirichlet(self.V)

    def prior(self):
        return Prior(self.eta.copy(), self.alpha.copy())

    def check_batch(self, batch):
        docs = batch.data
        if not isinstance(docs, Docs):
            raise UsageError("LDA batches hold Docs")
        if docs.ids.size and (docs.ids.max() >= self.V or docs.ids.min() < 0):
            raise UsageError(f"word id out of range for vocabulary of size {self.V}")
        return docs

    def component(self, state, k):
        return expfam.NaturalParams(self.family, state.lam[k])

    def init_state(self, rng, data=None):
        return GlobalState(rng.gamma(100.0, 0.01, size=(self.K, self.V)))

    def prior_state(self, prior=None):
        prior = self.prior() if prior is None else prior
        return GlobalState(np.tile(prior.eta, (self.K, 1)))

    def uniform_beliefs(self, batch, prior=None):
        """Uniform word beliefs with the matching ``gamma = alpha + length / K``."""
        prior = self.prior() if prior is None else prior
        docs = self.check_batch(batch)
        gamma = prior.alpha[None, :] + docs.doc_lengths()[:, None] / self.K
        return DocBeliefs(gamma, np.full((docs.ids.size, self.K), 1.0 / self.K))

    def local_step(self, state, batch, init=None, iters=None, prior=None):
        """``iters`` rounds of document coordinate ascent, warm-started from ``init``."""
        prior = self.prior() if prior is None else prior
        docs = self.check_batch(batch)
        if init is None:
            gamma0 = prior.alpha[None, :] + docs.doc_lengths()[:, None] / self.K
        else:
            gamma0 = init.gamma
            if gamma0.shape != (len(docs), self.K):
                raise UsageError("initial beliefs do not match the batch")
        iters = self.local_iters if iters is None else iters
        gamma, phi = lda_estep(docs, dirichlet_expectation(state.lam), prior.alpha, gamma0, iters, self.tol)
        return DocBeliefs(gamma, phi)

    def word_topic_counts(self, docs, phi):
        """``sum_m I[z_m = k, x_m = w]`` in expectation under ``phi``: a (K, V) array."""
        weighted = phi * docs.counts[:, None]
        out = np.empty((self.K, self.V))
        for k in range(self.K):
            out[k] = np.bincount(docs.ids, weights=weighted[:, k], minlength=self.V)
        return out

    def expected_stats(self, batch, beliefs, prior=None):
        prior = self.prior() if prior is None else prior
        docs = self.check_batch(batch)
        return GlobalState(prior.eta[None, :] + batch.scale * self.word_topic_counts(docs, beliefs.phi))

    def raw_stats(self, batch, beliefs):
        docs = self.check_batch(batch)
        return GlobalState(self.word_topic_counts(docs, beliefs.phi))

    def local_elbo_terms(self, state, batch, beliefs, prior=None):
        """Per-document ``E_q[log p(x_d, z_d, theta_d | beta) - log q(z_d, theta_d)]``."""
        prior = self.prior() if prior is None else prior
        docs = self.check_batch(batch)
        phi = beliefs.phi
        owner = np.repeat(np.arange(len(docs)), np.diff(docs.indptr))
        elogtheta = dirichlet_expectation(beliefs.gamma) if len(docs) else np.zeros((0, self.K))
        elogbeta = dirichlet_expectation(state.lam)
        logphi = np.log(np.where(phi > 0, phi, 1.0))
        per_word = (phi * (elogtheta[owner] + elogbeta[:, docs.ids].T - logphi)).sum(axis=1) * docs.counts
        words = np.bincount(owner, weights=per_word, minlength=len(docs))
        return words - dirichlet_kl_rows(beliefs.gamma, prior.alpha) if len(docs) else words

    def global_kl(self, state, prior=None):
        prior = self.prior() if prior is None else prior
        return float(dirichlet_kl_rows(state.lam, prior.eta).sum())

    def elbo(self, state, batch, beliefs, prior=None):
        data = self.local_elbo_terms(state, batch, beliefs, prior).sum() * batch.scale if batch.B else 0.0
        return float(data - self.global_kl(state, prior))

    def mean_params(self, state):
        return state.lam / state.lam.sum(axis=1, keepdims=True)
