"""Digamma, trigamma and log-gamma on positive reals.

Each function shifts its argument above ``_SHIFT`` with the standard recurrence
and then evaluates the asymptotic (Stirling / de Moivre) series. Terms through
the Bernoulli number B14 keep the truncation error below 1e-16 there.

Both a numba kernel and a vectorized numpy implementation exist for every
function; :mod:`trsvi._accel` decides which one the public names use.
"""

import math

import numpy as np

from trsvi._accel import USE_NUMBA, njit
from trsvi.errors import DomainError

_SHIFT = 10.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_PI = math.log(math.pi)


# --- scalar kernels (numba) -------------------------------------------------


@njit
def _digamma1(x):
    n = 0
    if x < _SHIFT:
        n = int(math.ceil(_SHIFT - x))
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc += 1.0 / (x + i)
    y = x + n
    r = 1.0 / (y * y)
    series = r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (
        1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))))
    return math.log(y) - 0.5 / y - series - acc


@njit
def _trigamma1(x):
    n = 0
    if x < _SHIFT:
        n = int(math.ceil(_SHIFT - x))
    acc = 0.0
    for i in range(n - 1, -1, -1):
        acc += 1.0 / ((x + i) * (x + i))
    y = x + n
    r = 1.0 / (y * y)
    series = r * (1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (
        1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6)))))))
    return acc + 1.0 / y + 0.5 * r + series / y


@njit
def _gammaln1(x):
    n = 0
    if x < _SHIFT:
        n = int(math.ceil(_SHIFT - x))
    prod = 1.0
    for i in range(n):
        prod *= x + i
    y = x + n
    r = 1.0 / (y * y)
    series = (1.0 / 12 - r * (1.0 / 360 - r * (1.0 / 1260 - r * (
        1.0 / 1680 - r * (1.0 / 1188 - r * (691.0 / 360360 - r * (1.0 / 156))))))) / y
    out = (y - 0.5) * math.log(y) - y + _HALF_LOG_2PI + series
    if n > 0:
        out -= math.log(prod)
    return out


@njit
def _digamma_nb(x):
    out = np.empty(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        out[i] = _digamma1(flat[i])
    return out.reshape(x.shape)


@njit
def _trigamma_nb(x):
    out = np.empty(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        out[i] = _trigamma1(flat[i])
    return out.reshape(x.shape)


@njit
def _gammaln_nb(x):
    out = np.empty(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        out[i] = _gammaln1(flat[i])
    return out.reshape(x.shape)


# --- vectorized numpy fallback ----------------------------------------------


def _shift_counts(x):
    return np.where(x < _SHIFT, np.ceil(_SHIFT - x), 0.0).astype(np.int64)


def _digamma_np(x):
    x = np.asarray(x, dtype=np.float64)
    n = _shift_counts(x)
    acc = np.zeros_like(x)
    for i in range(int(n.max(initial=0)) - 1, -1, -1):
        m = n > i
        acc[m] += 1.0 / (x[m] + i)
    y = x + n
    r = 1.0 / (y * y)
    series = r * (1.0 / 12 - r * (1.0 / 120 - r * (1.0 / 252 - r * (
        1.0 / 240 - r * (1.0 / 132 - r * (691.0 / 32760 - r * (1.0 / 12)))))))
    return np.log(y) - 0.5 / y - series - acc


def _trigamma_np(x):
    x = np.asarray(x, dtype=np.float64)
    n = _shift_counts(x)
    acc = np.zeros_like(x)
    for i in range(int(n.max(initial=0)) - 1, -1, -1):
        m = n > i
        acc[m] += 1.0 / ((x[m] + i) * (x[m] + i))
    y = x + n
    r = 1.0 / (y * y)
    series = r * (1.0 / 6 - r * (1.0 / 30 - r * (1.0 / 42 - r * (
        1.0 / 30 - r * (5.0 / 66 - r * (691.0 / 2730 - r * (7.0 / 6)))))))
    return acc + 1.0 / y + 0.5 * r + series / y


def _gammaln_np(x):
    x = np.asarray(x, dtype=np.float64)
    n = _shift_counts(x)
    prod = np.ones_like(x)
    for i in range(int(n.max(initial=0))):
        m = n > i
        prod[m] *= x[m] + i
    y = x + n
    r = 1.0 / (y * y)
    series = (1.0 / 12 - r * (1.0 / 360 - r * (1.0 / 1260 - r * (
        1.0 / 1680 - r * (1.0 / 1188 - r * (691.0 / 360360 - r * (1.0 / 156))))))) / y
    return (y - 0.5) * np.log(y) - y + _HALF_LOG_2PI + series - np.log(prod)


# --- public API ---------------------------------------------------------------


def _dispatch(nb_impl, np_impl, x, name):
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(arr > 0):
        raise DomainError(f"{name} requires positive arguments")
    out = nb_impl(arr) if USE_NUMBA else np_impl(arr)
    if arr.ndim == 0:
        return float(out)
    return out


def digamma(x):
    """Logarithmic derivative of the gamma function, elementwise on ``x > 0``."""
    return _dispatch(_digamma_nb, _digamma_np, x, "digamma")


def trigamma(x):
    """Derivative of :func:`digamma`, elementwise on ``x > 0``."""
    return _dispatch(_trigamma_nb, _trigamma_np, x, "trigamma")


def gammaln(x):
    """``log Gamma(x)`` elementwise on ``x > 0``."""
    return _dispatch(_gammaln_nb, _gammaln_np, x, "gammaln")


def multigammaln(a, d):
    """Log of the d-dimensional multivariate gamma function."""
    if a <= 0.5 * (d - 1):
        raise DomainError(f"multigammaln needs a > (d - 1) / 2, got a={a}, d={d}")
    half = a - 0.5 * np.arange(d)
    return 0.25 * d * (d - 1) * _LOG_PI + float(np.sum(gammaln(half)))


def multidigamma(a, d):
    """Sum over i = 1..d of digamma(a + (1 - i) / 2); derivative of multigammaln."""
    if a <= 0.5 * (d - 1):
        raise DomainError(f"multidigamma needs a > (d - 1) / 2, got a={a}, d={d}")
    return float(np.sum(digamma(a - 0.5 * np.arange(d))))


def dirichlet_expectation(alpha):
    """``E[log theta]`` for ``theta ~ Dir(alpha)``; rows are independent Dirichlets."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim == 1:
        return digamma(alpha) - digamma(alpha.sum())
    return digamma(alpha) - digamma(alpha.sum(axis=-1))[..., np.newaxis]
