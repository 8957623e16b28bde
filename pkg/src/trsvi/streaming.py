"""Append-only observation database, stream simulation and streaming drivers.

Event-log files hold one JSON object per line::

    {"kind": "new_record", "record_id": 0, "tick": 3, "payload": {...}}
    {"kind": "word_reveal", "record_id": 0, "tick": 4, "word_id": 17}

Keys are sorted and absent fields omitted, so a log written twice from the same
events is byte-identical.
"""

import json
import threading
from dataclasses import dataclass, replace

import numpy as np

from trsvi import inference as inf
from trsvi.data import tokens_to_bow
from trsvi.errors import DataError, UsageError
from trsvi.models.base import Batch, Docs

NEW_RECORD = "new_record"
WORD_REVEAL = "word_reveal"

DOCS = "docs"
DENSE = "dense"

RECORDS = "records"
WORDS = "words"


@dataclass(frozen=True)
class StreamEvent:
    tick: int
    kind: str
    record_id: int = None
    word_id: int = None
    payload: dict = None

    def __post_init__(self):
        if self.kind not in (NEW_RECORD, WORD_REVEAL):
            raise UsageError(f"unknown event kind {self.kind!r}")
        if self.kind == WORD_REVEAL and (self.record_id is None or self.word_id is None):
            raise UsageError("word_reveal needs record_id and word_id")

    def to_json(self):
        d = {"tick": self.tick, "kind": self.kind}
        for key in ("record_id", "word_id", "payload"):
            v = getattr(self, key)
            if v is not None:
                d[key] = v
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        try:
            return cls(int(d["tick"]), d["kind"], d.get("record_id"), d.get("word_id"), d.get("payload"))
        except KeyError as e:
            raise DataError(f"event is missing field {e}") from None


def write_events(events, path):
    with open(path, "w") as fh:
        for e in events:
            fh.write(e.to_json() + "\n")


def read_events(path):
    out = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(StreamEvent.from_json(line))
                except (ValueError, UsageError) as e:
                    raise DataError(f"{path}:{i}: {e}") from None
    return out


@dataclass(frozen=True)
class DbSnapshot:
    """Consistent view of the first ``n`` records at their lengths at snapshot time."""

    n: int
    lengths: tuple
    N: float


class ObservationDb:
    """Append-only store of records that can grow after insertion.

    ``kind`` is ``docs`` (records are word-id sequences) or ``dense`` (records
    are fixed rows). ``count_unit`` decides what ``N`` counts: whole records, or
    observed words. All mutation and snapshotting happen under one lock, so a
    sampler never sees a half-applied event.
    """

    def __init__(self, kind=DOCS, count_unit=RECORDS, log_path=None):
        if kind not in (DOCS, DENSE):
            raise UsageError(f"unknown db kind {kind!r}")
        if count_unit not in (RECORDS, WORDS):
            raise UsageError(f"unknown counting unit {count_unit!r}")
        self.kind = kind
        self.count_unit = count_unit
        self._records = []
        self._lengths = []
        self._words = 0
        self._lock = threading.Lock()
        self.arrivals = []
        self._log = open(log_path, "a") if log_path else None

    def close(self):
        if self._log:
            self._log.close()
            self._log = None

    def __len__(self):
        return len(self._records)

    @property
    def N(self):
        return float(len(self._records) if self.count_unit == RECORDS else self._words)

    def ingest(self, event):
        with self._lock:
            if event.kind == NEW_RECORD:
                rid = len(self._records)
                if event.record_id is not None and event.record_id != rid:
                    raise UsageError(f"new record id {event.record_id} out of sequence (expected {rid})")
                rec = self._initial_record(event.payload)
                self._records.append(rec)
                self._lengths.append(len(rec))
                if self.kind == DOCS:
                    self._words += len(rec)
            else:
                rid = event.record_id
                if self.kind != DOCS:
                    raise UsageError("word reveals need a docs database")
                if not 0 <= rid < len(self._records):
                    raise UsageError(f"word reveal for unknown record {rid}")
                self._records[rid].append(int(event.word_id))
                self._lengths[rid] += 1
                self._words += 1
            self.arrivals.append((event.tick, event.kind, rid))
            if self._log:
                self._log.write(event.to_json() + "\n")
                self._log.flush()
        return self

    def _initial_record(self, payload):
        payload = payload or {}
        if self.kind == DOCS:
            return [int(w) for w in payload.get("words", [])]
        if "row" not in payload:
            raise UsageError("dense records need a 'row' payload")
        return np.asarray(payload["row"], dtype=np.float64)

    def snapshot(self):
        with self._lock:
            return DbSnapshot(len(self._records), tuple(self._lengths), self.N)

    def record(self, i, snap=None):
        rec = self._records[i]
        if self.kind == DENSE:
            return rec
        n = self._lengths[i] if snap is None else snap.lengths[i]
        return rec[:n]

    def materialize(self, idx=None, snap=None):
        """Records ``idx`` (default: all) as ``Docs`` or a dense array, as of ``snap``."""
        snap = self.snapshot() if snap is None else snap
        idx = range(snap.n) if idx is None else idx
        if self.kind == DENSE:
            return np.array([self.record(i) for i in idx]).reshape(len(idx), -1)
        return Docs.from_lists([tokens_to_bow(self.record(i, snap)) for i in idx])

    def sample_batch(self, B, rng):
        """``B`` records uniformly with replacement; ``Batch.N`` is ``N_t`` of the same snapshot."""
        snap = self.snapshot()
        if snap.n == 0:
            raise UsageError("cannot sample from an empty database")
        idx = inf.sample_indices(rng, snap.n, B)
        return Batch(self.materialize(idx, snap), snap.N)

    def state_digest(self):
        """Hashable summary of the full content, for replay comparisons."""
        with self._lock:
            recs = tuple(tuple(r) if self.kind == DOCS else tuple(np.asarray(r).tolist()) for r in self._records)
            return (recs, self.N)

    @classmethod
    def replay(cls, events, **kwargs):
        db = cls(**kwargs)
        for e in events:
            db.ingest(e)
        return db


def ingest(db, event):
    return db.ingest(event)


# --- simulation -----------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamSimConfig:
    """Poisson ``rate`` of new documents per tick; each active document reveals its
    next word with probability ``p`` once ``delay`` ticks have passed since its last
    observation. ``max_docs`` caps activations (default: the whole corpus)."""

    rate: float
    p: float = 1.0
    delay: int = 1
    ticks: int = 1000
    seed: int = 0
    max_docs: int = None

    def __post_init__(self):
        if not self.rate > 0:
            raise UsageError("rate must be > 0")
        if not 0.0 < self.p <= 1.0:
            raise UsageError("p must lie in (0, 1]")
        if self.delay < 1 or self.ticks < 0:
            raise UsageError("delay must be >= 1 and ticks >= 0")


def corpus_token_sequences(corpus, seed=0):
    """Token order per document: the bag of words expanded and shuffled with a per-document stream."""
    out = []
    docs = corpus.docs if hasattr(corpus, "docs") else corpus
    for d in range(len(docs)):
        ids, counts = docs.doc(d)
        tokens = np.repeat(ids, counts.astype(np.int64))
        rng = np.random.default_rng([seed, d])
        out.append(tokens[rng.permutation(len(tokens))])
    return out


def simulate_stream(cfg, tokens):
    """Events of a word-reveal stream over ``tokens`` (one word-id sequence per document).

    Documents enter in corpus order. A new record carries its corpus index in the
    payload; its words arrive only through reveal events.
    """
    if len(tokens) == 0:
        raise UsageError("corpus is empty")
    rng = np.random.default_rng(cfg.seed)
    limit = len(tokens) if cfg.max_docs is None else min(cfg.max_docs, len(tokens))
    events = []
    active = []  # [record_id, next position, last observation tick]
    next_doc = 0
    for tick in range(cfg.ticks):
        R = int(rng.poisson(cfg.rate))
        for _ in range(R):
            if next_doc >= limit:
                break
            events.append(StreamEvent(tick, NEW_RECORD, next_doc, payload={"doc": next_doc}))
            active.append([next_doc, 0, tick - cfg.delay])
            next_doc += 1
        draws = rng.random(len(active))
        still = []
        for entry, u in zip(active, draws):
            rid, pos, last = entry
            doc = tokens[rid]
            if pos < len(doc) and tick - last >= cfg.delay and u < cfg.p:
                events.append(StreamEvent(tick, WORD_REVEAL, rid, int(doc[pos])))
                entry[1] += 1
                entry[2] = tick
            if entry[1] < len(doc):
                still.append(entry)
        active = still
        if next_doc >= limit and not active:
            break
    return events


def simulate_dense_stream(X, rate, ticks, seed=0):
    """Arrivals of dense rows in order, ``Poisson(rate)`` per tick, carrying the row in the payload."""
    rng = np.random.default_rng(seed)
    events, nxt = [], 0
    for tick in range(ticks):
        for _ in range(int(rng.poisson(rate))):
            if nxt >= len(X):
                return events
            events.append(StreamEvent(tick, NEW_RECORD, nxt, payload={"row": [float(v) for v in X[nxt]]}))
            nxt += 1
    return events


# --- drivers ------------------------------------------------------------------------------


class _Feed:
    """Pushes events with ``tick < clock`` into the database."""

    def __init__(self, db, events):
        self.db = db
        self.events = list(events or [])
        self.pos = 0

    def advance(self, clock):
        while self.pos < len(self.events) and self.events[self.pos].tick < clock:
            self.db.ingest(self.events[self.pos])
            self.pos += 1

    @property
    def exhausted(self):
        return self.pos >= len(self.events)


def _should_stop(stop):
    if stop is None:
        return False
    if hasattr(stop, "is_set"):
        return stop.is_set()
    return bool(stop())


def _resolve_n0(schedule, db):
    if schedule.kind == inf.STREAMING and schedule.n0 is None:
        return replace(schedule, n0=db.N)
    return schedule


def streaming_svi_driver(
    model,
    db,
    schedule,
    method=inf.TR,
    cfg=None,
    eb=False,
    steps=100,
    seed=0,
    events=None,
    ticks_per_step=1,
    prior=None,
    state=None,
    ng_local_iters=None,
    log_elbo=False,
    evaluate=None,
    eval_every=0,
    stop=None,
    callback=None,
    catch_interrupt=False,
):
    """Optimize the evolving bound over ``db`` while ``events`` are ingested.

    In the single-threaded interleaved mode, the clock advances ``ticks_per_step``
    before every optimizer step and all events with earlier ticks are ingested.
    Steps are skipped while the database is empty. With no events and a frozen db
    the trajectory equals :func:`trsvi.inference.fit` with the same seed.
    """
    cfg = inf.TrustRegionConfig() if cfg is None else cfg
    feed = _Feed(db, events)
    init_rng, sample_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    prior = model.prior() if prior is None else prior.copy()
    schedule = _resolve_n0(schedule, db)
    if state is None:
        init_data = db.materialize() if (db.kind == DENSE and len(db)) else None
        state = model.init_state(init_rng, init_data)
    run = inf.RunState(state.copy(), prior, 0, seed)
    clock = 0
    try:
        for _ in range(steps):
            if _should_stop(stop):
                break
            clock += ticks_per_step
            feed.advance(clock)
            if len(db) == 0:
                continue
            batch = db.sample_batch(schedule.batch_size, sample_rng)
            rho = inf.learning_rate(schedule, run.t, batch.N)
            record = inf.svi_step(model, run, batch, rho, method, cfg, eb, ng_local_iters, log_elbo)
            record["N_t"] = batch.N
            record["tick"] = clock
            if evaluate is not None and eval_every > 0 and run.t % eval_every == 0:
                record.update(evaluate(run))
            run.log.append(record)
            if callback is not None:
                callback(run, record)
    except KeyboardInterrupt:
        if not catch_interrupt:
            raise
        run.interrupted = True
    if evaluate is not None and run.log and "tick" in run.log[-1]:
        run.log[-1].update(evaluate(run))
    return run


def streaming_batch_driver(
    model,
    db,
    batch_cap,
    iters,
    rounds=10,
    seed=0,
    events=None,
    ticks_per_round=1,
    prior=None,
    local_iters=None,
    evaluate=None,
    stop=None,
    publish=None,
    catch_interrupt=False,
):
    """Repeated batch VB on ``min(batch_cap, N_t)`` freshly sampled records.

    When the database holds at most ``batch_cap`` records the round trains on all
    of them. The published state is swapped only between rounds.
    """
    feed = _Feed(db, events)
    rng = np.random.default_rng(seed)
    prior = model.prior() if prior is None else prior.copy()
    run = inf.RunState(None, prior, 0, seed)
    clock = 0
    try:
        for _ in range(rounds):
            if _should_stop(stop):
                break
            clock += ticks_per_round
            feed.advance(clock)
            snap = db.snapshot()
            if snap.n == 0:
                continue
            if snap.n <= batch_cap:
                idx = np.arange(snap.n)
            else:
                idx = np.sort(rng.choice(snap.n, size=batch_cap, replace=False))
            data = db.materialize(idx, snap)
            init_rng = np.random.default_rng(rng.integers(2**63))
            state = model.init_state(init_rng, data)
            state, _, trace = inf.batch_vb(model, data, iters, prior, state, local_iters=local_iters)
            run.state = state  # atomic swap at the round boundary
            record = {"round": run.t, "N_t": snap.N, "batch": int(len(idx)), "elbo_batch": trace[-1] if trace else None, "tick": clock}
            if evaluate is not None:
                record.update(evaluate(run))
            run.log.append(record)
            run.t += 1
            if publish is not None:
                publish(run.state.copy())
    except KeyboardInterrupt:
        if not catch_interrupt:
            raise
        run.interrupted = True
    return run


def svb_stream_driver(model, events, documents, batch_size, local_iters=None, prior=None, eb_alpha=False, evaluate=None, eval_every=1):
    """SVB over arriving records, each seen once and in full at its arrival.

    ``documents`` maps a record's corpus index to its data (token sequence or
    row). Records are processed in groups of ``batch_size`` in arrival order.
    With ``eb_alpha`` the Dirichlet over topic proportions is adapted with a
    ``1 / updates`` step size.
    """
    prior = model.prior() if prior is None else prior.copy()
    state = model.prior_state(prior)
    run = inf.RunState(state, prior, 0, 0)
    pending = []
    n_seen = 0

    def flush():
        nonlocal pending, n_seen
        if isinstance(documents, np.ndarray):
            data = documents[pending]
        else:
            data = Docs.from_lists([tokens_to_bow(documents[i]) for i in pending])
        batch = Batch(data, float(len(pending)))
        beliefs = model.local_step(run.state, batch, iters=local_iters, prior=run.prior)
        run.state = inf.svb_update(model, run.state, batch, local_iters, run.prior, beliefs)
        n_seen += len(pending)
        record = {"step": run.t, "N_t": float(n_seen)}
        if eb_alpha and hasattr(beliefs, "gamma"):
            rho = 1.0 / (run.t + 1)
            new_prior, n_proj = inf.empirical_bayes_update(model, run.prior, run.state, rho, beliefs)
            run.prior = type(run.prior)(run.prior.eta, new_prior.alpha)
            record["eb_projected"] = n_proj
        if evaluate is not None and eval_every > 0 and run.t % eval_every == 0:
            record.update(evaluate(run))
        run.log.append(record)
        run.t += 1
        pending = []

    for e in events:
        if e.kind == NEW_RECORD:
            pending.append(int((e.payload or {}).get("doc", e.record_id)))
            if len(pending) == batch_size:
                flush()
    if pending:
        flush()
    if evaluate is not None and run.log and "heldout" not in run.log[-1]:
        run.log[-1].update(evaluate(run))
    return run
