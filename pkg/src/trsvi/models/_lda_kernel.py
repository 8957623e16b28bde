"""Per-document coordinate ascent for LDA: the hot loop of every LDA run.

For each document the kernel alternates

    phi_wk  ∝ exp(E[log theta_k] + E[log beta_kw])
    gamma_k = alpha_k + sum_w count_w phi_wk

starting from the supplied ``gamma``. Each round is one coordinate-ascent sweep,
so the document's bound never decreases. Both exponentials are taken once per
round with their maximum over topics subtracted, so no row of ``phi`` can
underflow to all zeros except in the pathological case handled by the log-space
fallback.
"""

import math

import numpy as np

from trsvi._accel import USE_NUMBA, njit, prange
from trsvi.special import _digamma1, digamma

# below this normalizer a word's phi row is recomputed in log space
_TINY = 1e-280


def shifted_exp_elogbeta(elogbeta):
    """``exp(E[log beta_kw] - max_k E[log beta_kw])``: column maxima are exactly 1."""
    return np.exp(elogbeta - elogbeta.max(axis=0, keepdims=True))


@njit(parallel=True)
def _estep_nb(indptr, ids, counts, elogbeta, expbeta, alpha, gamma, iters, tol):
    n_docs, K = gamma.shape
    phi = np.empty((ids.size, K))
    for d in prange(n_docs):
        lo, hi = indptr[d], indptr[d + 1]
        g = gamma[d].copy()
        elogtheta = np.empty(K)
        exptheta = np.empty(K)
        for _ in range(iters):
            total = 0.0
            for k in range(K):
                total += g[k]
            dg_total = _digamma1(total)
            best = -np.inf
            for k in range(K):
                elogtheta[k] = _digamma1(g[k]) - dg_total
                if elogtheta[k] > best:
                    best = elogtheta[k]
            for k in range(K):
                exptheta[k] = math.exp(elogtheta[k] - best)
            new_g = alpha.copy()
            for j in range(lo, hi):
                w = ids[j]
                norm = 0.0
                for k in range(K):
                    phi[j, k] = exptheta[k] * expbeta[k, w]
                    norm += phi[j, k]
                if norm < _TINY:
                    top = -np.inf
                    for k in range(K):
                        v = elogtheta[k] + elogbeta[k, w]
                        if v > top:
                            top = v
                    norm = 0.0
                    for k in range(K):
                        phi[j, k] = math.exp(elogtheta[k] + elogbeta[k, w] - top)
                        norm += phi[j, k]
                for k in range(K):
                    phi[j, k] /= norm
                    new_g[k] += counts[j] * phi[j, k]
            change = 0.0
            for k in range(K):
                change += abs(new_g[k] - g[k])
                g[k] = new_g[k]
            if tol > 0.0 and change / K < tol:
                break
        if hi == lo:
            for k in range(K):
                g[k] = alpha[k]
        gamma[d] = g
    return gamma, phi


def _estep_np(indptr, ids, counts, elogbeta, expbeta, alpha, gamma, iters, tol):
    n_docs, K = gamma.shape
    phi = np.empty((ids.size, K))
    for d in range(n_docs):
        lo, hi = indptr[d], indptr[d + 1]
        g = gamma[d].copy()
        eb = expbeta[:, ids[lo:hi]].T
        c = counts[lo:hi]
        for _ in range(iters):
            elogtheta = digamma(g) - digamma(g.sum())
            p = np.exp(elogtheta - elogtheta.max())[None, :] * eb
            norm = p.sum(axis=1, keepdims=True)
            bad = norm[:, 0] < _TINY
            if bad.any():
                logp = elogtheta[None, :] + elogbeta[:, ids[lo:hi][bad]].T
                p[bad] = np.exp(logp - logp.max(axis=1, keepdims=True))
                norm[bad] = p[bad].sum(axis=1, keepdims=True)
            p /= norm
            phi[lo:hi] = p
            new_g = alpha + c @ p
            change = np.abs(new_g - g).sum()
            g = new_g
            if tol > 0.0 and change / K < tol:
                break
        gamma[d] = g
    return gamma, phi


def lda_estep(docs, elogbeta, alpha, gamma_init, iters, tol=0.0, use_numba=None):
    """Run ``iters`` rounds of the document updates; returns ``(gamma, phi)``.

    ``phi`` has one row per stored ``(doc, unique word)`` pair and is not scaled by
    the word count.
    """
    use_numba = USE_NUMBA if use_numba is None else use_numba
    impl = _estep_nb if use_numba else _estep_np
    gamma = np.array(gamma_init, dtype=np.float64, copy=True)
    return impl(
        np.ascontiguousarray(docs.indptr, dtype=np.int64),
        np.ascontiguousarray(docs.ids, dtype=np.int64),
        np.ascontiguousarray(docs.counts, dtype=np.float64),
        np.ascontiguousarray(elogbeta, dtype=np.float64),
        np.ascontiguousarray(shifted_exp_elogbeta(elogbeta), dtype=np.float64),
        np.ascontiguousarray(alpha, dtype=np.float64),
        gamma,
        int(iters),
        float(tol),
    )
