"""Exponential-family primitives in natural coordinates.

Four families back the models:

* ``dirichlet``: one Dirichlet, natural parameters are the concentrations.
* ``beta_vector``: independent Betas, laid out as ``[a_1..a_d, b_1..b_d]``.
* ``niw``: normal-inverse-Wishart over ``(mu, Sigma)``, laid out as
  ``[s, b_1..b_D, vec(C) row-major, nu]`` where ``b = -2 s m`` and
  ``C = s m m^T + Psi``. Sufficient statistics are
  ``-1/2 (mu^T Sigma^-1 mu, Sigma^-1 mu, vec Sigma^-1, log|Sigma|)``.
* ``dirichlet_product``: ``rows`` independent Dirichlets of size ``cols``.

For Dirichlet and Beta the standard concentrations are used directly as the
coordinates; they differ from the textbook natural parameters by a constant
shift, which leaves every interpolation, KL and gradient identical.
"""

from dataclasses import dataclass

import numpy as np

from trsvi.errors import DomainError, UsageError
from trsvi.special import digamma, gammaln, multidigamma, multigammaln, trigamma

DIRICHLET = "dirichlet"
BETA_VECTOR = "beta_vector"
NIW = "niw"
DIRICHLET_PRODUCT = "dirichlet_product"

# smallest admissible Cholesky diagonal entry when testing positive definiteness
PD_PIVOT = 1e-10
_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class FamilySpec:
    kind: str
    dim: int
    cols: int = 0

    def __post_init__(self):
        if self.kind not in (DIRICHLET, BETA_VECTOR, NIW, DIRICHLET_PRODUCT):
            raise UsageError(f"unknown family kind {self.kind!r}")
        if self.dim < 1:
            raise UsageError("family dimension must be >= 1")
        if self.kind == DIRICHLET_PRODUCT and self.cols < 1:
            raise UsageError("dirichlet_product needs cols >= 1")

    @classmethod
    def dirichlet(cls, dim):
        return cls(DIRICHLET, dim)

    @classmethod
    def beta_vector(cls, dim):
        return cls(BETA_VECTOR, dim)

    @classmethod
    def niw(cls, dim):
        return cls(NIW, dim)

    @classmethod
    def dirichlet_product(cls, rows, cols):
        return cls(DIRICHLET_PRODUCT, rows, cols)

    @property
    def size(self):
        """Length of a natural-parameter vector of this family."""
        if self.kind == DIRICHLET:
            return self.dim
        if self.kind == BETA_VECTOR:
            return 2 * self.dim
        if self.kind == NIW:
            return 2 + self.dim + self.dim * self.dim
        return self.dim * self.cols


@dataclass(frozen=True, eq=False)
class NaturalParams:
    family: FamilySpec
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.shape != (self.family.size,):
            raise UsageError(
                f"{self.family.kind} expects {self.family.size} natural parameters, got shape {values.shape}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


@dataclass(frozen=True, eq=False)
class NiwParams:
    """Traditional NIW parameters: scale-count ``s``, mean ``m``, scale matrix ``psi``, dof ``nu``."""

    s: float
    m: np.ndarray
    psi: np.ndarray
    nu: float

    @property
    def dim(self):
        return len(self.m)


# --- NIW helpers ---------------------------------------------------------------


def niw_blocks(values, dim):
    """Split an NIW natural vector into ``(s, b, C, nu)`` views."""
    values = np.asarray(values, dtype=np.float64)
    s = values[0]
    b = values[1 : 1 + dim]
    C = values[1 + dim : 1 + dim + dim * dim].reshape(dim, dim)
    nu = values[-1]
    return s, b, C, nu


def niw_pack(s, b, C, nu):
    return np.concatenate([[s], np.ravel(b), np.ravel(C), [nu]])


def _niw_psi(s, b, C):
    # the density sees C only through its symmetric part
    return 0.5 * (C + C.T) - np.outer(b, b) / (4.0 * s)


def is_positive_definite(A):
    """Cholesky membership test on the symmetric part of ``A``."""
    A = np.asarray(A, dtype=np.float64)
    try:
        L = np.linalg.cholesky(0.5 * (A + A.T))
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.diag(L) > PD_PIVOT))


def niw_to_natural(p):
    """Map :class:`NiwParams` to natural coordinates ``(s, -2 s m, s m m^T + Psi, nu)``."""
    m = np.asarray(p.m, dtype=np.float64)
    psi = np.asarray(p.psi, dtype=np.float64)
    D = len(m)
    if psi.shape != (D, D):
        raise UsageError("psi must be D x D")
    if not (p.s > 0 and p.nu > D - 1 and is_positive_definite(psi)):
        raise DomainError("NiwParams outside the valid set (s > 0, nu > D - 1, psi p.d.)")
    return NaturalParams(FamilySpec.niw(D), niw_pack(p.s, -2.0 * p.s * m, p.s * np.outer(m, m) + psi, p.nu))


def natural_to_niw(lam):
    """Inverse of :func:`niw_to_natural`: ``m = -b / (2 s)``, ``Psi = C - s m m^T``."""
    if lam.family.kind != NIW:
        raise UsageError("natural_to_niw needs an NIW family")
    D = lam.family.dim
    s, b, C, nu = niw_blocks(lam.values, D)
    if not (s > 0 and nu > D - 1):
        raise DomainError("NIW natural parameters need s > 0 and nu > D - 1")
    m = -b / (2.0 * s)
    psi = _niw_psi(s, b, C)
    if not is_positive_definite(psi):
        raise DomainError("C - s m m^T is not positive definite")
    return NiwParams(float(s), m, psi, float(nu))


# --- validity ------------------------------------------------------------------


def is_valid(family, values):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (family.size,) or not np.all(np.isfinite(values)):
        return False
    if family.kind != NIW:
        return bool(np.all(values > 0))
    D = family.dim
    s, b, C, nu = niw_blocks(values, D)
    return bool(s > 0 and nu > D - 1 and is_positive_definite(_niw_psi(s, b, C)))


def _check(lam):
    if not is_valid(lam.family, lam.values):
        raise DomainError(f"natural parameters outside the valid set of {lam.family.kind}")


def _check_pair(lam, lam2):
    if lam.family != lam2.family:
        raise UsageError(f"family mismatch: {lam.family} vs {lam2.family}")
    _check(lam)
    _check(lam2)


# --- log-normalizer and mean statistics ---------------------------------------


def _dirichlet_rows(lam):
    fam = lam.family
    if fam.kind == DIRICHLET:
        return lam.values.reshape(1, -1)
    return lam.values.reshape(fam.dim, fam.cols)


def log_normalizer(lam):
    """Cumulant function ``a(lambda)``."""
    _check(lam)
    fam = lam.family
    v = lam.values
    if fam.kind in (DIRICHLET, DIRICHLET_PRODUCT):
        rows = _dirichlet_rows(lam)
        return float(np.sum(gammaln(rows)) - np.sum(gammaln(rows.sum(axis=1))))
    if fam.kind == BETA_VECTOR:
        a, b = v[: fam.dim], v[fam.dim :]
        return float(np.sum(gammaln(a) + gammaln(b) - gammaln(a + b)))
    D = fam.dim
    s, b, C, nu = niw_blocks(v, D)
    sign, logdet = np.linalg.slogdet(_niw_psi(s, b, C))
    return float(-0.5 * D * np.log(s) - 0.5 * nu * logdet + 0.5 * nu * D * _LOG2 + multigammaln(0.5 * nu, D))


def mean_sufficient_stats(lam):
    """``E_lambda[t(beta)]``, the gradient of :func:`log_normalizer`, in the layout of ``lam``."""
    _check(lam)
    fam = lam.family
    v = lam.values
    if fam.kind in (DIRICHLET, DIRICHLET_PRODUCT):
        rows = _dirichlet_rows(lam)
        return (digamma(rows) - digamma(rows.sum(axis=1))[:, None]).ravel()
    if fam.kind == BETA_VECTOR:
        a, b = v[: fam.dim], v[fam.dim :]
        dab = digamma(a + b)
        return np.concatenate([digamma(a) - dab, digamma(b) - dab])
    D = fam.dim
    s, b, C, nu = niw_blocks(v, D)
    psi = _niw_psi(s, b, C)
    inv = np.linalg.inv(psi)
    inv = 0.5 * (inv + inv.T)
    sign, logdet = np.linalg.slogdet(psi)
    e_s = -0.5 * D / s - nu * (b @ inv @ b) / (8.0 * s * s)
    e_b = nu / (4.0 * s) * (inv @ b)
    e_C = -0.5 * nu * inv
    e_nu = -0.5 * logdet + 0.5 * D * _LOG2 + 0.5 * multidigamma(0.5 * nu, D)
    return niw_pack(e_s, e_b, e_C, e_nu)


def kl_divergence(lam, lam2):
    """``KL(q_lam || q_lam2) = (lam - lam2) . E_lam[t] - a(lam) + a(lam2)``."""
    _check_pair(lam, lam2)
    diff = lam.values - lam2.values
    return float(diff @ mean_sufficient_stats(lam) - log_normalizer(lam) + log_normalizer(lam2))


def fisher_vector_product(lam, v):
    """``I(lam) v`` with ``I`` the Hessian of the log-normalizer."""
    _check(lam)
    fam = lam.family
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (fam.size,):
        raise UsageError("direction has wrong length")
    x = lam.values
    if fam.kind in (DIRICHLET, DIRICHLET_PRODUCT):
        rows = _dirichlet_rows(lam)
        vr = v.reshape(rows.shape)
        out = trigamma(rows) * vr - trigamma(rows.sum(axis=1))[:, None] * vr.sum(axis=1, keepdims=True)
        return out.ravel()
    if fam.kind == BETA_VECTOR:
        d = fam.dim
        a, b = x[:d], x[d:]
        va, vb = v[:d], v[d:]
        tab = trigamma(a + b) * (va + vb)
        return np.concatenate([trigamma(a) * va - tab, trigamma(b) * vb - tab])
    return _niw_fvp(lam, v)


def _niw_fvp(lam, v):
    # central difference of the mean statistics along v
    norm = np.linalg.norm(v)
    if norm == 0.0:
        return np.zeros_like(v)
    x = lam.values
    eps = 1e-6 * (1.0 + np.linalg.norm(x)) / norm
    for _ in range(60):
        if is_valid(lam.family, x + eps * v) and is_valid(lam.family, x - eps * v):
            break
        eps *= 0.5
    hi = mean_sufficient_stats(NaturalParams(lam.family, x + eps * v))
    lo = mean_sufficient_stats(NaturalParams(lam.family, x - eps * v))
    return (hi - lo) / (2.0 * eps)


def kl_gradient(lam, lam2):
    """Gradient of ``KL(lam || lam2)`` in its first argument: ``I(lam) (lam - lam2)``."""
    _check_pair(lam, lam2)
    return fisher_vector_product(lam, lam.values - lam2.values)


def fisher_solve(lam, g):
    """``I(lam)^-1 g``: closed form for Dirichlet (Sherman-Morrison) and Beta (2 x 2
    blocks); NIW uses a least-squares solve against the dense Fisher, which is
    singular along antisymmetric directions of ``C`` (the minimum-norm solution is
    returned)."""
    _check(lam)
    fam = lam.family
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (fam.size,):
        raise UsageError("direction has wrong length")
    x = lam.values
    if fam.kind in (DIRICHLET, DIRICHLET_PRODUCT):
        rows = _dirichlet_rows(lam)
        gr = g.reshape(rows.shape)
        q = trigamma(rows)
        c = trigamma(rows.sum(axis=1))[:, None]
        u = gr / q
        corr = c * u.sum(axis=1, keepdims=True) / (1.0 - c * (1.0 / q).sum(axis=1, keepdims=True))
        return (u + corr / q).ravel()
    if fam.kind == BETA_VECTOR:
        d = fam.dim
        a, b = x[:d], x[d:]
        ga, gb = g[:d], g[d:]
        tab = trigamma(a + b)
        p, r = trigamma(a) - tab, trigamma(b) - tab
        det = p * r - tab * tab
        return np.concatenate([(r * ga + tab * gb) / det, (tab * ga + p * gb) / det])
    F = np.column_stack([_niw_fvp(lam, e) for e in np.eye(fam.size)])
    return np.linalg.lstsq(0.5 * (F + F.T), g, rcond=1e-10)[0]
