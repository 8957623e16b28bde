"""``trsvi train|stream|eval|replay --config PATH [--set section.key=value]...``

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure,
130 interrupted (after writing a final checkpoint). Failures print one line
``trsvi: error=<Class>: <message>`` on stderr.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from trsvi import checkpoint as ckpt
from trsvi import data as datamod
from trsvi import evaluation as ev
from trsvi import inference as inf
from trsvi import streaming as st
from trsvi._accel import set_threads_from_env
from trsvi.config import ConfigError, load_config
from trsvi.errors import DataError, DomainError, UsageError
from trsvi.models import LDA, BernoulliMixture, GaussianMixture

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_INTERRUPTED = 130


# --- construction -------------------------------------------------------------------------


def load_data(cfg, path=None):
    path = Path(path or cfg.data.path)
    if not path.exists():
        raise DataError(f"data file {path} does not exist")
    fmt = cfg.data.format
    if fmt == "auto":
        if cfg.run.model == "lda":
            fmt = "bow"
        else:
            fmt = "csv" if path.suffix.lower() == ".csv" else "dense"
    if fmt == "bow":
        if cfg.run.model != "lda":
            raise ConfigError("bag-of-words data needs run.model = lda")
        return datamod.load_bow(path)
    if cfg.run.model == "lda":
        raise ConfigError("LDA needs bag-of-words data")
    if fmt == "csv":
        return datamod.read_csv(path, binary=cfg.run.model == "bernoulli")
    if fmt == "dense":
        return datamod.read_dense(path)
    raise ConfigError(f"unknown data.format {fmt!r}")


def build_model(cfg, data):
    m = cfg.model
    if cfg.run.model == "lda":
        V = m.V or data.V
        if V != data.V:
            raise DataError(f"dimension mismatch: data vocabulary has V = {data.V}, model.V = {V}")
        return LDA(m.K, V, alpha=m.alpha, eta=m.eta, local_iters=cfg.trust_region.local_iters, tol=cfg.trust_region.tol)
    D = m.D or data.X.shape[1]
    if D != data.X.shape[1]:
        raise DataError(f"dimension mismatch: data has D = {data.X.shape[1]}, model.D = {D}")
    if cfg.run.model == "bernoulli":
        return BernoulliMixture(m.K, D, a=m.a, b=m.b, alpha=m.alpha)
    nu = m.nu if m.nu > 0 else D + 2.0
    return GaussianMixture(m.K, D, s=m.s, psi=m.psi_scale * np.eye(D), nu=nu, alpha=m.alpha)


def raw_data(model, dataset):
    return dataset.docs if isinstance(model, LDA) else dataset.X


def schedule_of(cfg):
    s = cfg.schedule
    return inf.Schedule(s.kind, s.kappa, s.tau, s.batch_size, None if s.n0 < 0 else s.n0)


def tr_config(cfg):
    t = cfg.trust_region
    return inf.TrustRegionConfig(t.inner_iters, t.local_iters, t.init, t.tol)


def ng_iters(cfg):
    return cfg.ng.local_iters or None


def heldout_evaluator(cfg, model):
    """``run -> {"heldout": value}`` on ``data.heldout``, or ``None`` without held-out data."""
    if not cfg.data.heldout:
        return None
    held = load_data(cfg, cfg.data.heldout)
    if isinstance(model, LDA):
        if held.V != model.V:
            raise DataError(f"dimension mismatch: held-out vocabulary has V = {held.V}, model has V = {model.V}")
        obs, rest = ev.split_documents(held.docs, cfg.data.observed_frac, cfg.data.split_seed)
        return lambda run: {"heldout": ev.lda_heldout_loglik(model, run.state, obs, rest, run.prior).value}
    return lambda run: {"heldout": ev.mixture_heldout_loglik(model, run.state, held.X).value}


# --- commands -------------------------------------------------------------------------------


def _finish(cfg, model, run, echo, records=()):
    if cfg.output.csv:
        ckpt.write_metrics_csv(cfg.output.csv, records, echo)
    ckpt.save_checkpoint(cfg.output.checkpoint, model, run.state, run.prior, run.t, run.seed, echo)
    return EXIT_INTERRUPTED if run.interrupted else 0


def cmd_train(cfg):
    dataset = load_data(cfg)
    model = build_model(cfg, dataset)
    X = raw_data(model, dataset)
    echo = cfg.echo()
    with ckpt.MetricsWriter(cfg.output.metrics, echo) as out:
        if cfg.run.method == "batch":
            run = _train_batch(cfg, model, X, out)
        else:
            run = inf.fit(
                model, X, schedule_of(cfg), cfg.run.method, tr_config(cfg), cfg.run.epochs, cfg.run.seed,
                eb=cfg.run.eb, ng_local_iters=ng_iters(cfg), elbo_every=cfg.run.elbo_every,
                full_elbo_every_epoch=cfg.run.full_elbo_every_epoch, timing=cfg.run.timing,
                callback=lambda run, rec: out.write(rec), catch_interrupt=True,
            )
    return _finish(cfg, model, run, echo, out.records)


def _train_batch(cfg, model, X, out):
    rng = np.random.default_rng(cfg.run.seed)
    prior = model.prior()
    state = model.init_state(rng, X)
    run = inf.RunState(state, prior, 0, cfg.run.seed)
    try:
        for _ in range(cfg.run.epochs):
            run.state, _, trace = inf.batch_vb(model, X, 1, prior, run.state, local_iters=cfg.trust_region.local_iters)
            out.write({"step": run.t, "elbo_full": trace[-1]})
            run.t += 1
    except KeyboardInterrupt:
        run.interrupted = True
    return run


def _documents(cfg, model, dataset):
    if isinstance(model, LDA):
        return st.corpus_token_sequences(dataset, cfg.stream.token_seed)
    return dataset.X


def simulate(cfg, model, dataset):
    s = cfg.stream
    if isinstance(model, LDA):
        sim = st.StreamSimConfig(s.rate, s.p, s.delay, s.ticks, s.sim_seed)
        return st.simulate_stream(sim, _documents(cfg, model, dataset))
    return st.simulate_dense_stream(dataset.X, s.rate, s.ticks, s.sim_seed)


def run_stream(cfg, model, dataset, events):
    s = cfg.stream
    evaluate = heldout_evaluator(cfg, model)
    method = cfg.run.method
    kind = st.DOCS if isinstance(model, LDA) else st.DENSE
    db = st.ObservationDb(kind, s.count_unit)
    if method in ("ng", "tr"):
        return st.streaming_svi_driver(
            model, db, schedule_of(cfg), method, tr_config(cfg), eb=cfg.run.eb, steps=s.steps, seed=cfg.run.seed,
            events=events, ticks_per_step=s.ticks_per_step, ng_local_iters=ng_iters(cfg), evaluate=evaluate,
            eval_every=s.eval_every, catch_interrupt=True,
        )
    if method == "streaming-batch":
        return st.streaming_batch_driver(
            model, db, s.batch_cap, s.iters_per_round, rounds=s.rounds, seed=cfg.run.seed, events=events,
            ticks_per_round=s.ticks_per_step, local_iters=cfg.trust_region.local_iters, evaluate=evaluate,
            catch_interrupt=True,
        )
    if method == "svb":
        run = st.svb_stream_driver(
            model, events, _documents(cfg, model, dataset), s.svb_batch, cfg.trust_region.local_iters,
            eb_alpha=cfg.run.eb, evaluate=evaluate, eval_every=max(s.eval_every, 1),
        )
        return run
    raise ConfigError(f"method {method} cannot stream")


def _write_stream_outputs(cfg, model, run):
    echo = cfg.echo()
    with ckpt.MetricsWriter(cfg.output.metrics, echo) as out:
        for rec in run.log:
            out.write(rec)
    if run.state is None:
        run.state = model.init_state(np.random.default_rng(cfg.run.seed))
    return _finish(cfg, model, run, echo, run.log)


def cmd_stream(cfg):
    dataset = load_data(cfg)
    model = build_model(cfg, dataset)
    events = simulate(cfg, model, dataset)
    st.write_events(events, cfg.output.events)
    return _write_stream_outputs(cfg, model, run_stream(cfg, model, dataset, events))


def cmd_replay(cfg):
    dataset = load_data(cfg)
    model = build_model(cfg, dataset)
    path = Path(cfg.output.events)
    if not path.exists():
        raise DataError(f"event log {path} does not exist")
    events = st.read_events(path)
    return _write_stream_outputs(cfg, model, run_stream(cfg, model, dataset, events))


def cmd_eval(cfg):
    model, state, prior, t, seed, _ = ckpt.load_checkpoint(cfg.eval.checkpoint)
    cfg.run.model = {BernoulliMixture: "bernoulli", GaussianMixture: "gmm", LDA: "lda"}[type(model)]
    dataset = load_data(cfg)
    echo = cfg.echo()
    metric = cfg.eval.metric
    if isinstance(model, LDA):
        if dataset.V != model.V:
            raise DataError(f"dimension mismatch: data vocabulary has V = {dataset.V}, checkpoint model has V = {model.V}")
        docs = dataset.docs
    else:
        if dataset.X.shape[1] != model.D:
            raise DataError(f"dimension mismatch: data has D = {dataset.X.shape[1]}, checkpoint model has D = {model.D}")
    if metric == "heldout_loglik":
        if isinstance(model, LDA):
            obs, rest = ev.split_documents(docs, cfg.data.observed_frac, cfg.data.split_seed)
            report = ev.lda_heldout_loglik(model, state, obs, rest, prior, config=echo)
        else:
            report = ev.mixture_heldout_loglik(model, state, dataset.X, config=echo)
    elif metric == "effective_components":
        data = docs if isinstance(model, LDA) else dataset.X
        n = ev.effective_components(model, state, data, prior)
        report = ev.EvalReport("effective_components", float(n), config=echo, data_hash=ev.data_hash(data))
    elif metric == "ranking":
        if not isinstance(model, LDA):
            raise ConfigError("ranking needs an LDA checkpoint")
        hist, rest = ev.split_documents(docs, cfg.data.observed_frac, cfg.data.split_seed)
        tasks = []
        for i in range(len(docs)):
            h = hist.doc(i)
            # a word seen in the history is not a prediction target
            tasks.append(ev.RankingTask(h, np.setdiff1d(rest.doc(i)[0], h[0]), cfg.eval.M))
        p, r = ev.ranking_eval(model, state, tasks, prior, config=echo)
        report = ev.EvalReport("precision_recall_at_m", p.value, config=echo, data_hash=ev.data_hash(docs),
                               extra={"recall": r.value, "skipped": p.extra["skipped"], "M": cfg.eval.M})
        if cfg.output.csv:
            _ranking_csv(cfg.output.csv, p, r, echo)
    else:
        raise ConfigError(f"unknown eval.metric {metric!r}")
    report.to_json(cfg.output.report)
    if cfg.output.csv and metric != "ranking":
        report.to_csv(cfg.output.csv)
    return 0


def _ranking_csv(path, p, r, echo):
    import csv
    import json

    with open(path, "w", newline="") as fh:
        fh.write("# " + json.dumps({"config": echo}, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        w.writerow(["precision", repr(p.value)])
        w.writerow(["recall", repr(r.value)])


COMMANDS = {"train": cmd_train, "stream": cmd_stream, "eval": cmd_eval, "replay": cmd_replay}


def main(argv=None):
    parser = argparse.ArgumentParser(prog="trsvi", description="Trust-region and natural-gradient SVI")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="INI configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    args = parser.parse_args(argv)
    set_threads_from_env()
    try:
        cfg = load_config(args.config, args.set).validate(args.command)
        return COMMANDS[args.command](cfg)
    except (ConfigError, UsageError) as e:
        return _fail(e, EXIT_CONFIG)
    except (DataError, OSError) as e:
        return _fail(e, EXIT_DATA)
    except (DomainError, FloatingPointError, np.linalg.LinAlgError) as e:
        return _fail(e, EXIT_NUMERIC)


def _fail(e, code):
    msg = " ".join(str(e).split())
    print(f"trsvi: error={type(e).__name__}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
