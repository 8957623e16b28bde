"""Numba kernels against the numpy fallback.

Times digamma and the LDA document E-step on both paths, checks that the two
agree, and prints one row per (kernel, size). Run with ``python benchmarks/bench_kernels.py``;
``--quick`` shrinks the sizes.
"""

import argparse
import time

import numpy as np

from trsvi import special
from trsvi.data import gen_lda
from trsvi.models._lda_kernel import lda_estep


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def bench_digamma(n, repeat):
    x = np.random.default_rng(0).uniform(1e-3, 50.0, n)
    special._digamma_nb(x[:4])  # compile outside the timing
    t_nb, a = best_of(lambda: special._digamma_nb(x), repeat)
    t_np, b = best_of(lambda: special._digamma_np(x), repeat)
    return t_nb, t_np, float(np.max(np.abs(a - b)))


def bench_estep(n_docs, repeat, K=20, V=2000):
    corpus, _ = gen_lda(K, V, n_docs, 80, 0.1, 0.05, seed=1)
    rng = np.random.default_rng(2)
    lam = rng.gamma(100.0, 0.01, (K, V))
    elogbeta = special.dirichlet_expectation(lam)
    alpha = np.full(K, 0.1)
    g0 = np.ones((n_docs, K))
    lda_estep(corpus.docs.take(range(2)), elogbeta, alpha, g0[:2], 2, use_numba=True)
    t_nb, a = best_of(lambda: lda_estep(corpus.docs, elogbeta, alpha, g0, 20, use_numba=True), repeat)
    t_np, b = best_of(lambda: lda_estep(corpus.docs, elogbeta, alpha, g0, 20, use_numba=False), repeat)
    return t_nb, t_np, float(np.max(np.abs(a[0] - b[0])))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    digamma_sizes = [10**3, 10**5] if args.quick else [10**3, 10**5, 10**6]
    doc_counts = [50, 200] if args.quick else [50, 500, 2000]

    print(f"{'kernel':<10} {'size':>9} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max diff':>10}")
    for n in digamma_sizes:
        t_nb, t_np, diff = bench_digamma(n, args.repeat)
        print(f"{'digamma':<10} {n:>9} {1e3 * t_nb:>10.2f} {1e3 * t_np:>10.2f} {t_np / t_nb:>8.1f} {diff:>10.1e}")
    for n in doc_counts:
        t_nb, t_np, diff = bench_estep(n, args.repeat)
        print(f"{'lda_estep':<10} {n:>9} {1e3 * t_nb:>10.2f} {1e3 * t_np:>10.2f} {t_np / t_nb:>8.1f} {diff:>10.1e}")


if __name__ == "__main__":
    main()
