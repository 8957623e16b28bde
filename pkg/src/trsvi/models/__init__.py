"""Conjugate model plugins sharing one contract.

Every model exposes ``prior``, ``init_state``, ``uniform_beliefs``, ``local_step``,
``expected_stats``, ``raw_stats`` and ``elbo``; :mod:`trsvi.inference` only talks
to models through these.
"""

from trsvi.models.base import Batch, Docs, GlobalState, MixtureBeliefs, MixtureModel, Prior, softmax_rows
from trsvi.models.bernoulli_mix import BernoulliMixture, bernoulli_expected_loglik
from trsvi.models.gaussian_mix import GaussianMixture, gaussian_expected_loglik
from trsvi.models.lda import LDA, DocBeliefs, dirichlet_kl_rows

__all__ = [
    "Batch",
    "BernoulliMixture",
    "DocBeliefs",
    "Docs",
    "GaussianMixture",
    "GlobalState",
    "LDA",
    "MixtureBeliefs",
    "MixtureModel",
    "Prior",
    "bernoulli_expected_loglik",
    "dirichlet_kl_rows",
    "gaussian_expected_loglik",
    "softmax_rows",
]
