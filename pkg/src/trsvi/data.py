"""Dataset formats and synthetic generators.

Sparse bag-of-words text format (1-indexed ids)::

    N V NNZ
    doc word count
    ...

The classic three-line header (``N``, ``V``, ``NNZ`` on separate lines) is
accepted as well. Dense datasets are stored as a little-endian binary file:
8-byte magic ``TRSVIDN1``, 1-byte dtype code (``b`` uint8, ``f`` float64),
``N`` and ``D`` as uint64, then the row-major payload.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from trsvi.errors import DataError
from trsvi.models.base import Docs

DENSE_MAGIC = b"TRSVIDN1"


@dataclass
class Corpus:
    docs: Docs
    V: int
    labels: np.ndarray = None

    def __len__(self):
        return len(self.docs)

    def take(self, idx):
        return self.docs.take(idx)


@dataclass
class DenseDataset:
    X: np.ndarray
    binary: bool = False
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.X)


# --- bag of words ------------------------------------------------------------------


def _parse_ints(line, lineno, n):
    parts = line.split()
    if len(parts) != n:
        raise DataError(f"line {lineno}: expected {n} integers, got {line.strip()!r}")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise DataError(f"line {lineno}: non-integer field in {line.strip()!r}") from None


def load_bow(path):
    lines = Path(path).read_text().splitlines()
    numbered = [(i + 1, ln) for i, ln in enumerate(lines) if ln.strip()]
    if not numbered:
        raise DataError("empty bag-of-words file")
    lineno, first = numbered[0]
    if len(first.split()) == 1:
        if len(numbered) < 3:
            raise DataError("truncated three-line header")
        n_docs, V, nnz = (_parse_ints(ln, no, 1)[0] for no, ln in numbered[:3])
        body = numbered[3:]
    else:
        n_docs, V, nnz = _parse_ints(first, lineno, 3)
        body = numbered[1:]
    if len(body) != nnz:
        raise DataError(f"NNZ mismatch: header says {nnz} entries, found {len(body)}")
    per_doc = [dict() for _ in range(n_docs)]
    for no, ln in body:
        d, w, c = _parse_ints(ln, no, 3)
        if not (1 <= d <= n_docs):
            raise DataError(f"line {no}: document id {d} outside 1..{n_docs}")
        if not (1 <= w <= V):
            raise DataError(f"line {no}: word id {w} outside 1..{V}")
        if c < 1:
            raise DataError(f"line {no}: count must be >= 1")
        per_doc[d - 1][w - 1] = per_doc[d - 1].get(w - 1, 0) + c
    docs = [(np.array(sorted(m), dtype=np.int64), np.array([m[k] for k in sorted(m)], dtype=np.float64)) for m in per_doc]
    return Corpus(Docs.from_lists(docs), V)


def save_bow(corpus, path):
    docs = corpus.docs
    rows = []
    for d in range(len(docs)):
        ids, counts = docs.doc(d)
        rows.extend(f"{d + 1} {w + 1} {int(c)}" for w, c in zip(ids, counts))
    Path(path).write_text(f"{len(docs)} {corpus.V} {len(rows)}\n" + "".join(r + "\n" for r in rows))


def tokens_to_bow(tokens):
    """Word-id sequence to sorted ``(ids, counts)``."""
    ids, counts = np.unique(np.asarray(tokens, dtype=np.int64), return_counts=True)
    return ids, counts.astype(np.float64)


# --- dense ------------------------------------------------------------------------------


def write_dense(ds, path):
    X = np.asarray(ds.X)
    code, dtype = (b"b", "<u1") if ds.binary else (b"f", "<f8")
    with open(path, "wb") as fh:
        fh.write(DENSE_MAGIC + code + struct.pack("<QQ", *X.shape))
        fh.write(np.ascontiguousarray(X, dtype=dtype).tobytes())


def read_dense(path):
    raw = Path(path).read_bytes()
    if raw[:8] != DENSE_MAGIC:
        raise DataError("not a dense dataset file (bad magic)")
    code = raw[8:9]
    n, d = struct.unpack("<QQ", raw[9:25])
    if code not in (b"b", b"f"):
        raise DataError(f"unknown dtype code {code!r}")
    dtype = "<u1" if code == b"b" else "<f8"
    payload = np.frombuffer(raw[25:], dtype=dtype)
    if payload.size != n * d:
        raise DataError(f"payload holds {payload.size} values, header says {n} x {d}")
    return DenseDataset(payload.reshape(n, d).astype(np.float64), binary=code == b"b")


def write_csv(ds, path):
    np.savetxt(path, ds.X, delimiter=",", fmt="%d" if ds.binary else "%.17g")


def read_csv(path, binary=False):
    try:
        X = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    if binary and not np.isin(X, (0.0, 1.0)).all():
        raise DataError("binary dataset contains values other than 0 and 1")
    return DenseDataset(X, binary=binary)


def load_dense(path, binary=None):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_csv(path, binary=bool(binary))
    return read_dense(path)


# --- generators -------------------------------------------------------------------------


def binarize(gray, seed):
    """Independent Bernoulli draw per entry with the grayscale value as probability."""
    gray = np.asarray(gray, dtype=np.float64)
    if gray.size and (np.nanmin(gray) < 0 or np.nanmax(gray) > 1 or np.isnan(gray).any()):
        raise DataError("grayscale values must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    X = (rng.random(gray.shape) < gray).astype(np.float64)
    return DenseDataset(X, binary=True, meta={"binarization_seed": seed})


def _templates(K, D, separation, rng):
    z = rng.standard_normal((K, D))
    if np.isinf(separation):
        return (z > 0).astype(np.float64)
    return 1.0 / (1.0 + np.exp(-separation * z))


def gen_bernoulli_mixture(K, D, N, separation, seed, weights=None):
    """Forward samples of a Bernoulli mixture; ``separation`` sharpens the templates toward 0/1."""
    rng = np.random.default_rng(seed)
    templates = _templates(K, D, separation, rng)
    weights = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=np.float64)
    labels = rng.choice(K, size=N, p=weights)
    X = (rng.random((N, D)) < templates[labels]).astype(np.float64)
    truth = {"templates": templates, "weights": weights, "labels": labels}
    return DenseDataset(X, binary=True, meta={"seed": seed}), truth


def gen_gmm(K, D, N, separation, seed, weights=None):
    """Forward samples of a Gaussian mixture with means spread by ``separation``."""
    rng = np.random.default_rng(seed)
    means = separation * rng.standard_normal((K, D))
    covs = np.empty((K, D, D))
    for k in range(K):
        W = rng.standard_normal((D, D)) / np.sqrt(D)
        covs[k] = 0.5 * (W @ W.T) + 0.5 * np.eye(D)
    weights = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=np.float64)
    labels = rng.choice(K, size=N, p=weights)
    chol = np.linalg.cholesky(covs)
    eps = rng.standard_normal((N, D))
    X = means[labels] + np.einsum("nij,nj->ni", chol[labels], eps)
    truth = {"means": means, "covs": covs, "weights": weights, "labels": labels}
    return DenseDataset(X, meta={"seed": seed}), truth


def gen_lda(K, V, N, doc_length, alpha, eta, seed):
    """Forward samples of LDA; ``doc_length`` is a Poisson mean or a callable ``rng -> int``."""
    rng = np.random.default_rng(seed)
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), (K,))
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (V,))
    topics = rng.dirichlet(eta, size=K)
    thetas = rng.dirichlet(alpha, size=N)
    docs = []
    for n in range(N):
        L = int(doc_length(rng)) if callable(doc_length) else max(1, int(rng.poisson(doc_length)))
        z = rng.choice(K, size=L, p=thetas[n])
        words = np.array([rng.choice(V, p=topics[k]) for k in z], dtype=np.int64) if L else np.zeros(0, np.int64)
        docs.append(words)
    corpus = Corpus(Docs.from_lists([tokens_to_bow(w) for w in docs]), V)
    return corpus, {"topics": topics, "thetas": thetas, "tokens": docs}


def _blur(img, sigma):
    r = max(1, int(np.ceil(3 * sigma)))
    k = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    k /= k.sum()
    img = np.apply_along_axis(np.convolve, 0, img, k, mode="same")
    return np.apply_along_axis(np.convolve, 1, img, k, mode="same")


def digit_templates(K, rng, side=8, strokes=3, blur=0.6, oversample=4):
    """Grayscale stroke prototypes on a ``side x side`` grid with an exactly-zero background."""
    hi = side * oversample
    out = np.empty((K, side * side))
    for k in range(K):
        img = np.zeros((hi, hi))
        for _ in range(strokes):
            r0, c0, r1, c1 = rng.uniform(oversample, hi - oversample - 1, 4)
            t = np.linspace(0.0, 1.0, 4 * hi)
            img[np.round(r0 + t * (r1 - r0)).astype(int), np.round(c0 + t * (c1 - c0)).astype(int)] = 1.0
        img = _blur(img, blur * oversample).reshape(side, oversample, side, oversample).mean(axis=(1, 3))
        out[k] = np.clip(1.2 * img / img.max(), 0.0, 1.0).ravel()
    return out


def gen_digit_benchmark(K=20, N=20000, seed=0, side=8, strokes=3, blur=0.6):
    """Binarized stroke-digit images: sample a prototype, then binarize its grayscale."""
    rng = np.random.default_rng(seed)
    templates = digit_templates(K, rng, side, strokes, blur)
    labels = rng.integers(0, K, size=N)
    ds = binarize(templates[labels], int(rng.integers(2**63)))
    ds.meta["seed"] = seed
    return ds, {"templates": templates, "weights": np.full(K, 1.0 / K), "labels": labels}
