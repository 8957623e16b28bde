"""Checkpoints and metric logs.

A checkpoint is a JSON document::

    {"format": "trsvi-checkpoint", "version": 1,
     "model": {"kind": ..., ...constructor arguments},
     "state": {"lam": [[...]], "gamma": [...] | null},
     "prior": {"eta": [...], "alpha": [...]},
     "t": int, "seed": int, "config": {...}}

Floats are written with their shortest round-trip representation, so loading a
checkpoint restores every array bit-for-bit.
"""

import json
import math

import numpy as np

from trsvi.errors import DataError
from trsvi.models import LDA, BernoulliMixture, GaussianMixture, GlobalState, Prior

FORMAT = "trsvi-checkpoint"
VERSION = 1


def model_spec(model):
    if isinstance(model, BernoulliMixture):
        return {"kind": "bernoulli", "K": model.K, "D": model.D, "alpha": model.alpha.tolist(),
                "a": model.a, "b": model.b}
    if isinstance(model, GaussianMixture):
        niw = model.niw
        return {"kind": "gmm", "K": model.K, "D": model.D, "alpha": model.alpha.tolist(), "s": niw.s,
                "m": niw.m.tolist(), "psi": niw.psi.tolist(), "nu": niw.nu}
    if isinstance(model, LDA):
        return {"kind": "lda", "K": model.K, "V": model.V, "alpha": model.alpha.tolist(),
                "eta": model.eta.tolist(), "local_iters": model.local_iters, "tol": model.tol}
    raise DataError(f"cannot serialize model {type(model).__name__}")


def model_from_spec(spec):
    kind = spec.get("kind")
    if kind == "bernoulli":
        return BernoulliMixture(spec["K"], spec["D"], a=spec["a"], b=spec["b"], alpha=spec["alpha"])
    if kind == "gmm":
        return GaussianMixture(spec["K"], spec["D"], s=spec["s"], m=np.array(spec["m"]), psi=np.array(spec["psi"]),
                               nu=spec["nu"], alpha=spec["alpha"])
    if kind == "lda":
        return LDA(spec["K"], spec["V"], alpha=spec["alpha"], eta=spec["eta"], local_iters=spec["local_iters"],
                   tol=spec["tol"])
    raise DataError(f"unknown model kind {kind!r} in checkpoint")


def _jsonable(x):
    return None if x is None else np.asarray(x, dtype=np.float64).tolist()


def save_checkpoint(path, model, state, prior, t, seed, config=None):
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "model": model_spec(model),
        "state": {"lam": _jsonable(state.lam), "gamma": _jsonable(state.gamma)},
        "prior": {"eta": _jsonable(prior.eta), "alpha": _jsonable(prior.alpha)},
        "t": int(t),
        "seed": int(seed),
        "config": config or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path):
    """Returns ``(model, state, prior, t, seed, config)``."""
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from None
    if doc.get("format") != FORMAT:
        raise DataError(f"{path} is not a checkpoint")
    if doc.get("version") != VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')}")
    model = model_from_spec(doc["model"])
    gamma = doc["state"]["gamma"]
    state = GlobalState(np.array(doc["state"]["lam"], dtype=np.float64), None if gamma is None else np.array(gamma))
    prior = Prior(np.array(doc["prior"]["eta"], dtype=np.float64), np.array(doc["prior"]["alpha"], dtype=np.float64))
    return model, state, prior, doc["t"], doc["seed"], doc.get("config", {})


def _clean(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def write_metrics_csv(path, records, config):
    """Metric records as a CSV table (union of keys, sorted) under a ``# {config}`` header line."""
    import csv

    keys = sorted({k for r in records for k in r})
    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps({"config": _clean(config)}, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(keys)
        for r in records:
            w.writerow(["" if r.get(k) is None else repr(_clean(r[k])) for k in keys])


class MetricsWriter:
    """JSON-lines metric log whose first line echoes the run configuration."""

    def __init__(self, path, config):
        self._fh = open(path, "w")
        self.records = []
        self.write({"config": config})

    def write(self, record):
        if "config" not in record:
            self.records.append(record)
        self._fh.write(json.dumps(_clean(record), sort_keys=True, separators=(",", ":")) + "\n")
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
