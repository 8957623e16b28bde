"""Regenerates ``frozen.json``: reference values computed without importing trsvi.

Run ``python tests/oracles/generate.py`` from the repository root. The output is
committed; the tests only read it. Sources: mpmath at 40 digits for special
functions and quadrature, scipy.stats samplers for Monte Carlo, and a separate
scipy.optimize polish for the grid-search optima.
"""

import itertools
import json
import math
from pathlib import Path

import mpmath as mp
import numpy as np
from scipy import optimize, special, stats

mp.mp.dps = 40
OUT = Path(__file__).with_name("frozen.json")

SPECIAL_POINTS = [1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0, 1.5, 2.0, 3.7, 9.5, 10.0, 10.5, 25.0, 100.0, 1e3, 1e5]


def special_values():
    return {
        "x": SPECIAL_POINTS,
        "digamma": [float(mp.digamma(mp.mpf(x))) for x in SPECIAL_POINTS],
        "trigamma": [float(mp.psi(1, mp.mpf(x))) for x in SPECIAL_POINTS],
        "gammaln": [float(mp.loggamma(mp.mpf(x))) for x in SPECIAL_POINTS],
    }


def beta_kl_quadrature():
    # KL(Beta(1,1) || Beta(2,1)) as a 1-D integral of q log(q/p)
    def integrand(x):
        q = mp.mpf(1)
        p = 2 * x
        return q * mp.log(q / p)

    return float(mp.quad(integrand, [0, 1]))


def dirichlet_kl_mc(seed=11, n=10**6):
    rng = np.random.default_rng(seed)
    a, b = np.array([3.0, 3.0, 3.0]), np.array([1.0, 1.0, 1.0])
    x = rng.dirichlet(a, size=n)
    x = np.clip(x, 1e-300, None)
    x /= x.sum(axis=1, keepdims=True)
    d = stats.dirichlet.logpdf(x.T, a) - stats.dirichlet.logpdf(x.T, b)
    return {"mean": float(d.mean()), "se": float(d.std(ddof=1) / math.sqrt(n))}


def _niw_sample(rng, s, m, psi, nu, n):
    sig = stats.invwishart(df=nu, scale=psi).rvs(size=n, random_state=rng)
    sig = np.asarray(sig).reshape(n, len(m), len(m))
    chol = np.linalg.cholesky(sig / s)
    mu = m + np.einsum("nij,nj->ni", chol, rng.standard_normal((n, len(m))))
    return mu, sig


def niw_log_normalizer_importance(seed=12, n=10**6):
    """``log int h(mu,Sigma) exp(lam . t) dmu dSigma`` for s=1, m=0, Psi=I, nu=4, D=2,
    with ``h = (2 pi)^{-D/2} |Sigma|^{-(D+2)/2}``, by importance sampling from a
    deliberately different NIW proposal."""
    D, s, nu = 2, 1.0, 4.0
    rng = np.random.default_rng(seed)
    ps, pm, ppsi, pnu = 0.7, np.zeros(D), 1.5 * np.eye(D), 5.0
    mu, sig = _niw_sample(rng, ps, pm, ppsi, pnu, n)
    inv = np.linalg.inv(sig)
    _, logdet = np.linalg.slogdet(sig)
    quad = np.einsum("ni,nij,nj->n", mu, inv, mu)
    tr = np.trace(inv, axis1=1, axis2=2)
    log_target = -0.5 * D * math.log(2 * math.pi) - 0.5 * (D + 2) * logdet - 0.5 * s * quad - 0.5 * tr - 0.5 * nu * logdet
    # proposal mean is zero, so its Gaussian quadratic form is ps * quad
    log_gauss = -0.5 * D * math.log(2 * math.pi) + 0.5 * D * math.log(ps) - 0.5 * logdet - 0.5 * ps * quad
    log_prop = stats.invwishart(df=pnu, scale=ppsi).logpdf(sig.transpose(1, 2, 0)) + log_gauss
    w = np.exp(log_target - log_prop)
    mean, se = w.mean(), w.std(ddof=1) / math.sqrt(n)
    return {"value": float(math.log(mean)), "se_log": float(se / mean)}


def niw_mean_stats_mc(seed=13, n=10**5):
    D = 2
    s, m = 2.0, np.array([0.5, -1.0])
    psi = np.array([[2.0, 0.3], [0.3, 1.0]])
    nu = 5.0
    rng = np.random.default_rng(seed)
    mu, sig = _niw_sample(rng, s, m, psi, nu, n)
    inv = np.linalg.inv(sig)
    _, logdet = np.linalg.slogdet(sig)
    t = np.column_stack(
        [
            -0.5 * np.einsum("ni,nij,nj->n", mu, inv, mu),
            -0.5 * np.einsum("nij,nj->ni", inv, mu),
            -0.5 * inv.reshape(n, -1),
            -0.5 * logdet,
        ]
    )
    return {
        "s": s, "m": m.tolist(), "psi": psi.tolist(), "nu": nu,
        "mean": t.mean(axis=0).tolist(), "se": (t.std(axis=0, ddof=1) / math.sqrt(n)).tolist(),
    }


def bernoulli_loglik_mc(seed, n=10**6, D=4):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.5, 10.0, D)
    b = rng.uniform(0.5, 10.0, D)
    x = (rng.random(D) < 0.5).astype(float)
    beta = rng.beta(a, b, size=(n, D))
    with np.errstate(divide="ignore"):
        ll = (x * np.log(beta) + (1 - x) * np.log1p(-beta)).sum(axis=1)
    return {"a": a.tolist(), "b": b.tolist(), "x": x.tolist(), "mean": float(ll.mean()),
            "se": float(ll.std(ddof=1) / math.sqrt(n))}


def _random_spd(rng, D):
    W = rng.standard_normal((D, D))
    return W @ W.T / D + 0.5 * np.eye(D)


def gaussian_loglik_mc(seed, n=10**5, D=3):
    rng = np.random.default_rng(seed)
    s = float(rng.uniform(0.5, 5.0))
    m = rng.standard_normal(D)
    psi = _random_spd(rng, D) * rng.uniform(1.0, 5.0)
    nu = float(D + 1 + rng.uniform(0.5, 10.0))
    x = m + rng.standard_normal(D)
    mu, sig = _niw_sample(rng, s, m, psi, nu, n)
    inv = np.linalg.inv(sig)
    _, logdet = np.linalg.slogdet(sig)
    r = x - mu
    ll = -0.5 * D * math.log(2 * math.pi) - 0.5 * logdet - 0.5 * np.einsum("ni,nij,nj->n", r, inv, r)
    return {"s": s, "m": m.tolist(), "psi": psi.tolist(), "nu": nu, "x": x.tolist(),
            "mean": float(ll.mean()), "se": float(ll.std(ddof=1) / math.sqrt(n))}


def normal_inverse_gamma_loglik(s, m, psi, nu, x):
    """D = 1: sigma^2 ~ IG(nu/2, psi/2), mu | sigma^2 ~ N(m, sigma^2/s); derived by hand."""
    s, m, psi, nu, x = (mp.mpf(v) for v in (s, m, psi, nu, x))
    e_prec = nu / psi
    e_logvar = mp.log(psi / 2) - mp.digamma(nu / 2)
    return float(-mp.log(2 * mp.pi) / 2 - e_logvar / 2 - (e_prec * (x - m) ** 2 + 1 / s) / 2)


# --- grid-search optima of the local objective ----------------------------------------


def _simplex_grid(K, steps):
    for c in itertools.product(range(steps + 1), repeat=K - 1):
        if sum(c) <= steps:
            yield np.array(list(c) + [steps - sum(c)], dtype=float) / steps


def _softmax(z):
    z = np.concatenate([z, [0.0]])
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def _polish(f, x0, dim):
    res = optimize.minimize(lambda z: -f(z), x0, method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 20000, "maxfev": 40000})
    return -res.fun


def _bernoulli_scores(a, b, gamma, x):
    el = x @ (special.digamma(a) - special.digamma(a + b)).T + (1 - x) @ (special.digamma(b) - special.digamma(a + b)).T
    return el + special.digamma(gamma) - special.digamma(gamma.sum())


def mixture_local_instance(seed):
    """Bernoulli mixture, one point: ``max_phi sum_k phi_k s_k - phi_k log phi_k``."""
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 4))
    D = int(rng.integers(1, 5))
    a = rng.uniform(0.5, 5.0, (K, D))
    b = rng.uniform(0.5, 5.0, (K, D))
    gamma = rng.uniform(0.5, 5.0, K)
    x = (rng.random(D) < 0.5).astype(float)
    sc = _bernoulli_scores(a, b, gamma, x)

    def L(phi):
        phi = np.asarray(phi)
        ent = np.where(phi > 0, phi * np.log(np.where(phi > 0, phi, 1.0)), 0.0)
        return float(phi @ sc - ent.sum())

    grid = max(L(p) for p in _simplex_grid(K, 200 if K == 2 else 100))
    best = max(grid, _polish(lambda z: L(_softmax(z)), np.zeros(K - 1), K - 1))
    return {"K": K, "D": D, "a": a.tolist(), "b": b.tolist(), "gamma": gamma.tolist(), "x": x.tolist(),
            "grid_opt": best}


def _lda_local_L(lam, alpha, ids, counts, gamma, phis):
    elogb = special.digamma(lam) - special.digamma(lam.sum(axis=1, keepdims=True))
    elogt = special.digamma(gamma) - special.digamma(gamma.sum())
    out = special.gammaln(alpha.sum()) - special.gammaln(alpha).sum() + ((alpha - 1) * elogt).sum()
    out -= special.gammaln(gamma.sum()) - special.gammaln(gamma).sum() + ((gamma - 1) * elogt).sum()
    for w, c, phi in zip(ids, counts, phis):
        ent = np.where(phi > 0, phi * np.log(np.where(phi > 0, phi, 1.0)), 0.0).sum()
        out += c * (phi @ (elogt + elogb[:, w]) - ent)
    return float(out)


def lda_local_instance(seed):
    """One short document; grid over (gamma, phi) then a Nelder-Mead polish."""
    rng = np.random.default_rng(seed)
    K = int(rng.integers(2, 4))
    V = int(rng.integers(2, 5))
    lam = rng.uniform(0.3, 5.0, (K, V))
    alpha = rng.uniform(0.1, 2.0, K)
    L_doc = int(rng.integers(1, 4))
    tokens = rng.integers(0, V, L_doc)
    ids, counts = np.unique(tokens, return_counts=True)
    U = len(ids)

    def unpack(z):
        gamma = np.exp(z[:K])
        phis = [_softmax(z[K + u * (K - 1): K + (u + 1) * (K - 1)]) for u in range(U)]
        return gamma, phis

    def f(z):
        g, p = unpack(z)
        return _lda_local_L(lam, alpha, ids, counts.astype(float), g, p)

    # coarse grid over gamma (log scale) and phi, ~10^4 points in total
    dim = K + U * (K - 1)
    per = max(2, int(round(10 ** (4 / dim))))
    gvals = np.linspace(-3.0, 2.0, per)
    pvals = np.linspace(-4.0, 4.0, per)
    best_z, best = None, -np.inf
    for combo in itertools.product(*([gvals] * K + [pvals] * (U * (K - 1)))):
        z = np.array(combo)
        v = f(z)
        if v > best:
            best, best_z = v, z
    polished = _polish(f, best_z, dim)
    return {"K": K, "V": V, "lam": lam.tolist(), "alpha": alpha.tolist(), "ids": ids.tolist(),
            "counts": counts.astype(float).tolist(), "grid_only": best, "grid_opt": max(best, polished)}


def _bernoulli_collapsed_elbo(X, phi, a0, b0, alpha):
    """Full ELBO of a Bernoulli mixture with q(beta), q(pi) at their conjugate optima for ``phi``."""
    N, D = X.shape
    K = phi.shape[1]
    a = a0 + phi.T @ X
    b = b0 + phi.T @ (1 - X)
    g = alpha + phi.sum(axis=0)
    elogpi = special.digamma(g) - special.digamma(g.sum())
    ea = special.digamma(a) - special.digamma(a + b)
    eb = special.digamma(b) - special.digamma(a + b)
    ell = X @ ea.T + (1 - X) @ eb.T
    ent = np.where(phi > 0, phi * np.log(np.where(phi > 0, phi, 1.0)), 0.0).sum()
    out = float((phi * (ell + elogpi)).sum() - ent)
    kl_beta = (
        special.betaln(a0, b0) - special.betaln(a, b)
        + (a - a0) * special.digamma(a) + (b - b0) * special.digamma(b)
        + (a0 - a + b0 - b) * special.digamma(a + b)
    ).sum()
    kl_pi = (
        special.gammaln(g.sum()) - special.gammaln(g).sum() - special.gammaln(alpha.sum()) + special.gammaln(alpha).sum()
        + ((g - alpha) * elogpi).sum()
    )
    return out - kl_beta - kl_pi


def batch_vb_grid_instance(seed=500, levels=6):
    """K = 2, N = 6, D = 3: exhaustive grid over the six responsibilities, then L-BFGS polishes."""
    rng = np.random.default_rng(seed)
    X = (rng.random((6, 3)) < np.array([0.85, 0.2, 0.5])).astype(float)
    X[3:] = 1 - X[3:]
    a0 = b0 = 1.0
    alpha = np.ones(2)

    def f(p):
        p = np.clip(p, 0.0, 1.0)
        return _bernoulli_collapsed_elbo(X, np.column_stack([p, 1 - p]), a0, b0, alpha)

    grid = np.linspace(0.0, 1.0, levels)
    scored = sorted(((f(np.array(c)), c) for c in itertools.product(grid, repeat=6)), reverse=True)
    best = scored[0][0]
    for _, c in scored[:20]:
        res = optimize.minimize(lambda p: -f(p), np.array(c), method="L-BFGS-B", bounds=[(0, 1)] * 6,
                                options={"ftol": 1e-15, "gtol": 1e-10})
        best = max(best, -res.fun)
    return {"X": X.tolist(), "a": a0, "b": b0, "alpha": alpha.tolist(), "K": 2, "opt": best}


def main():
    out = {
        "special": special_values(),
        "dirichlet_2_3_log_normalizer": float(mp.loggamma(2) + mp.loggamma(3) - mp.loggamma(5)),
        "beta11_vs_beta21_kl": beta_kl_quadrature(),
        "dirichlet333_vs_111_kl_mc": dirichlet_kl_mc(),
        "niw_d2_log_normalizer": niw_log_normalizer_importance(),
        "niw_mean_stats_mc": niw_mean_stats_mc(),
        "bernoulli_loglik_mc": [bernoulli_loglik_mc(100 + i) for i in range(20)],
        "gaussian_loglik_mc": [gaussian_loglik_mc(200 + i) for i in range(20)],
        "normal_inverse_gamma": [
            {"s": s, "m": m, "psi": psi, "nu": nu, "x": x, "value": normal_inverse_gamma_loglik(s, m, psi, nu, x)}
            for s, m, psi, nu, x in [(1.0, 0.0, 1.0, 3.0, 0.0), (2.5, -1.0, 0.7, 4.5, 1.3), (0.3, 2.0, 5.0, 1.5, -0.4)]
        ],
        "mixture_local_grid": [mixture_local_instance(300 + i) for i in range(10)],
        "lda_local_grid": [lda_local_instance(400 + i) for i in range(10)],
        "batch_vb_grid": batch_vb_grid_instance(),
    }
    OUT.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
