"""Held-out predictive scores, ranking metrics and component diagnostics."""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from trsvi.errors import DataError, UsageError
from trsvi.models.base import Batch, Docs, MixtureModel
from trsvi.models.bernoulli_mix import BernoulliMixture
from trsvi.models.gaussian_mix import GaussianMixture
from trsvi.models.lda import LDA

log = logging.getLogger(__name__)


def data_hash(data):
    h = hashlib.sha256()
    if isinstance(data, Docs):
        for arr in (data.indptr, data.ids, data.counts):
            h.update(np.ascontiguousarray(arr).tobytes())
    else:
        h.update(np.ascontiguousarray(np.asarray(data, dtype=np.float64)).tobytes())
    return h.hexdigest()


@dataclass
class EvalReport:
    """A named scalar metric; when ``per_record`` is given the value is its mean."""

    metric: str
    value: float = None
    per_record: np.ndarray = None
    config: dict = field(default_factory=dict)
    data_hash: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.per_record is not None:
            self.per_record = np.asarray(self.per_record, dtype=np.float64)
            mean = float(self.per_record.mean()) if self.per_record.size else float("nan")
            if self.value is not None and not abs(self.value - mean) <= 1e-12 * max(1.0, abs(mean)):
                raise UsageError("aggregate disagrees with the per-record mean")
            self.value = mean

    def to_dict(self):
        return {
            "metric": self.metric,
            "value": self.value,
            "n_records": None if self.per_record is None else int(self.per_record.size),
            "data_hash": self.data_hash,
            "config": self.config,
            **self.extra,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps({"metric": self.metric, "config": self.config}, sort_keys=True) + "\n")
            w = csv.writer(fh)
            w.writerow(["record", self.metric])
            for i, v in enumerate([] if self.per_record is None else self.per_record):
                w.writerow([i, repr(float(v))])


def _logsumexp_rows(a):
    mx = a.max(axis=1, keepdims=True)
    return (mx + np.log(np.exp(a - mx).sum(axis=1, keepdims=True)))[:, 0]


# --- mixtures -----------------------------------------------------------------------------


def _component_logpdf(model, state, X):
    if isinstance(model, BernoulliMixture):
        p = model.mean_params(state)
        with np.errstate(divide="ignore"):
            lp, lq = np.log(p), np.log1p(-p)
        # 0 * log 0 = 0 so that deterministic parameters score exactly
        return np.where(X[:, None, :] > 0, lp[None], 0.0).sum(-1) + np.where(X[:, None, :] < 1, lq[None], 0.0).sum(-1)
    if isinstance(model, GaussianMixture):
        D = model.D
        means, covs = model.mean_params(state)
        for k in range(model.K):
            if model.niw_params(state, k).nu <= D + 1:
                log.warning("component %d: nu <= D + 1, covariance falls back to Psi / nu", k)
        out = np.empty((len(X), model.K))
        for k in range(model.K):
            L = np.linalg.cholesky(covs[k])
            z = np.linalg.solve(L, (X - means[k]).T)
            out[:, k] = -0.5 * (z * z).sum(0) - np.log(np.diag(L)).sum() - 0.5 * D * np.log(2 * np.pi)
        return out
    raise UsageError(f"no plug-in density for {type(model).__name__}")


def mixture_heldout_loglik(model, state, X, config=None):
    """Plug-in predictive ``log sum_k E[pi_k] p(x | E[beta_k])`` per held-out point."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.D:
        raise DataError(f"held-out data has shape {X.shape}, model expects D = {model.D}")
    weights = model.mixture_weights(state)
    with np.errstate(divide="ignore"):
        scores = _component_logpdf(model, state, X) + np.log(weights)[None, :]
    per = _logsumexp_rows(scores)
    return EvalReport("heldout_loglik", per_record=per, config=dict(config or {}), data_hash=data_hash(X))


# --- LDA ----------------------------------------------------------------------------------


def topic_means(state):
    return state.lam / state.lam.sum(axis=1, keepdims=True)


def _theta_means(model, state, docs, prior=None):
    prior = model.prior() if prior is None else prior
    if len(docs) == 0:
        return np.zeros((0, model.K))
    gamma = model.local_step(state, Batch(docs, float(len(docs))), prior=prior).gamma
    empty = docs.doc_lengths() == 0
    gamma[empty] = prior.alpha
    return gamma / gamma.sum(axis=1, keepdims=True)


def lda_predictive_scores(model, state, history, candidates=None, prior=None):
    """``sum_k E[theta_k | history] E[beta_k, w]`` for each candidate word ``w``.

    ``history`` is an ``(ids, counts)`` pair; an empty history gives the normalized prior.
    """
    ids, counts = history
    docs = Docs.from_lists([(np.asarray(ids, dtype=np.int64), np.asarray(counts, dtype=np.float64))])
    theta = _theta_means(model, state, docs, prior)[0]
    beta = topic_means(state)
    cand = np.arange(model.V) if candidates is None else np.asarray(candidates, dtype=np.int64)
    return theta @ beta[:, cand]


def split_documents(docs, observed_frac=0.5, seed=0):
    """Split each document's tokens into an observed and a held-out part (document completion)."""
    rng = np.random.default_rng(seed)
    obs, held = [], []
    for d in range(len(docs)):
        ids, counts = docs.doc(d)
        tokens = np.repeat(ids, counts.astype(np.int64))
        tokens = tokens[rng.permutation(len(tokens))]
        cut = int(np.floor(observed_frac * len(tokens)))
        for part, out in ((tokens[:cut], obs), (tokens[cut:], held)):
            u, c = np.unique(part, return_counts=True)
            out.append((u, c.astype(np.float64)))
    return Docs.from_lists(obs), Docs.from_lists(held)


def lda_heldout_loglik(model, state, observed, heldout, prior=None, config=None):
    """Per-word plug-in predictive of the held-out words given the observed ones.

    Reported per held-out token; this is a document-completion score, not a
    marginal-likelihood estimate.
    """
    if len(observed) != len(heldout):
        raise UsageError("observed and held-out parts must pair up")
    for part in (observed, heldout):
        if part.ids.size and part.ids.max() >= model.V:
            raise DataError(f"word id {int(part.ids.max())} outside the model vocabulary of size {model.V}")
    theta = _theta_means(model, state, observed, prior)
    beta = topic_means(state)
    owner = np.repeat(np.arange(len(heldout)), np.diff(heldout.indptr))
    probs = np.einsum("nk,kn->n", theta[owner], beta[:, heldout.ids])
    per_token = np.repeat(np.log(probs), heldout.counts.astype(np.int64))
    return EvalReport("heldout_loglik_per_word", per_record=per_token, config=dict(config or {}), data_hash=data_hash(heldout))


# --- ranking --------------------------------------------------------------------------------


def precision_recall_at_m(predicted, heldout):
    """``(|L & P| / min(|L|, |P|), |L & P| / |L|)``; ``None`` when ``L`` is empty."""
    P = list(predicted)
    if len(set(P)) != len(P):
        raise UsageError("predicted items must be distinct")
    L = set(heldout)
    if not L:
        return None
    if not P:
        raise UsageError("need at least one prediction")
    hits = len(L.intersection(P))
    return hits / min(len(L), len(P)), hits / len(L)


def top_m(scores, M, exclude=()):
    """Indices of the ``M`` best scores, ties broken by the smaller item id, skipping ``exclude``."""
    if M < 1:
        raise UsageError("M must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(len(scores)), -scores))
    excl = set(int(e) for e in exclude)
    return [int(i) for i in order if int(i) not in excl][:M]


@dataclass
class RankingTask:
    history: tuple
    heldout: np.ndarray
    M: int = 20

    def __post_init__(self):
        if self.M < 1:
            raise UsageError("M must be >= 1")
        if set(np.asarray(self.history[0]).tolist()) & set(np.asarray(self.heldout).tolist()):
            raise UsageError("held-out items overlap the history")


def ranking_eval(model, state, tasks, prior=None, config=None):
    """Mean precision and recall at ``M`` over users; users with no held-out items are skipped."""
    prec, rec = [], []
    skipped = 0
    for task in tasks:
        scores = lda_predictive_scores(model, state, task.history, prior=prior)
        P = top_m(scores, task.M, exclude=task.history[0])
        pr = precision_recall_at_m(P, task.heldout)
        if pr is None:
            skipped += 1
            continue
        prec.append(pr[0])
        rec.append(pr[1])
    cfg = dict(config or {})
    return (
        EvalReport("precision_at_m", per_record=prec, config=cfg, extra={"skipped": skipped}),
        EvalReport("recall_at_m", per_record=rec, config=cfg, extra={"skipped": skipped}),
    )


# --- diagnostics ---------------------------------------------------------------------------


def responsibility_mass(model, state, data, prior=None):
    """Average posterior assignment mass per component (topic usage for LDA)."""
    batch = Batch(data, float(len(data)))
    if isinstance(model, MixtureModel):
        return model.local_step(state, batch).phi.mean(axis=0)
    if isinstance(model, LDA):
        phi = model.local_step(state, batch, prior=prior).phi
        w = phi * data.counts[:, None]
        return w.sum(axis=0) / max(data.counts.sum(), 1.0)
    raise UsageError(f"unsupported model {type(model).__name__}")


def effective_components(model, state, data, prior=None):
    """Number of components whose average responsibility exceeds ``1 / (10 K)``."""
    mass = responsibility_mass(model, state, data, prior)
    return int((mass > 1.0 / (10.0 * model.K)).sum())
