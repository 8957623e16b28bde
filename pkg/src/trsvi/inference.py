"""Natural-gradient and trust-region SVI, empirical Bayes, and the SVB / batch baselines.

The trust-region step maximizes ``L_n(lam) - xi KL(lam || lam_t)`` by alternating
two closed-form coordinate updates, with ``rho = 1 / (1 + xi)``:

    lam <- (1 - rho) lam_t + rho (eta + (N/B) E_phi[f(x, z)])
    phi <- argmax_phi L_n(lam, phi)

A natural-gradient step is the special case that starts ``phi`` at the optimum
for ``lam_t`` and performs a single ``lam`` update.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from trsvi import expfam
from trsvi.errors import UsageError
from trsvi.models.base import Batch, GlobalState, Prior

CLASSIC = "classic"
STREAMING = "streaming"

UNIFORM = "uniform"
CARRY_OVER = "carry_over"
NG_EQUIVALENT = "ng_equivalent"

EB_FLOOR = 1e-6


@dataclass(frozen=True)
class Schedule:
    """Learning-rate law ``(tau + progress)^-kappa``.

    ``classic`` counts optimizer steps; ``streaming`` counts data added since the
    start, ``(N_t - n0) / batch_size``. ``n0 = None`` means "the data count when
    the run starts" and is resolved by the drivers.
    """

    kind: str = CLASSIC
    kappa: float = 0.5
    tau: float = 100.0
    batch_size: int = 1
    n0: float = None

    def __post_init__(self):
        if self.kind not in (CLASSIC, STREAMING):
            raise UsageError(f"unknown schedule kind {self.kind!r}")
        if not 0.0 < self.kappa <= 1.0:
            raise UsageError("kappa must lie in (0, 1]")
        if self.tau < 0:
            raise UsageError("tau must be >= 0")
        if self.batch_size < 1:
            raise UsageError("batch_size must be >= 1")


def learning_rate(schedule, t, n_t=None):
    if t < 0:
        raise UsageError("step index must be >= 0")
    if schedule.kind == CLASSIC:
        progress = float(t)
    else:
        n0 = 0.0 if schedule.n0 is None else schedule.n0
        if n_t is None or n_t < n0:
            raise UsageError("streaming schedule needs N_t >= n0")
        progress = (n_t - n0) / schedule.batch_size
    base = schedule.tau + progress
    if base <= 0.0:
        return 1.0
    return min(1.0, base ** -schedule.kappa)


@dataclass(frozen=True)
class TrustRegionConfig:
    """``inner_iters`` lam-updates per step (m) and ``local_iters`` local rounds (M).

    ``init`` picks the starting beliefs: ``uniform`` (1/K everywhere), ``carry_over``
    (optimal for ``lam_t``) or ``ng_equivalent`` (``carry_over`` with a single
    lam-update, which reproduces a natural-gradient step exactly). ``tol`` > 0 stops
    the inner loop once the relative change of lam drops below it.
    """

    inner_iters: int = 2
    local_iters: int = 10
    init: str = UNIFORM
    tol: float = 0.0

    def __post_init__(self):
        if self.inner_iters < 1 or self.local_iters < 1:
            raise UsageError("inner_iters and local_iters must be >= 1")
        if self.init not in (UNIFORM, CARRY_OVER, NG_EQUIVALENT):
            raise UsageError(f"unknown init strategy {self.init!r}")


@dataclass
class RunState:
    state: GlobalState
    prior: Prior
    t: int = 0
    seed: int = 0
    log: list = field(default_factory=list)
    interrupted: bool = False

    def snapshot(self):
        return RunState(self.state.copy(), self.prior.copy(), self.t, self.seed, list(self.log), self.interrupted)


def _check_rho(rho):
    if not 0.0 <= rho <= 1.0:
        raise UsageError(f"rho must lie in [0, 1], got {rho}")


def natural_gradient_step(state, target, rho):
    """``(1 - rho) lam_t + rho * target`` for every component (and the weight Dirichlet)."""
    _check_rho(rho)
    return state.interpolate(target, rho)


def _relative_change(new, old):
    num = np.linalg.norm(new.lam - old.lam)
    den = np.linalg.norm(old.lam)
    if new.gamma is not None:
        num = np.hypot(num, np.linalg.norm(new.gamma - old.gamma))
        den = np.hypot(den, np.linalg.norm(old.gamma))
    return num / den if den else num


def trust_region_solve(model, state, batch, rho, cfg, prior=None):
    """Alternating solve of the trust-region problem; returns ``(lam_next, beliefs)``.

    The loop always ends on a lam update, so ``beliefs`` are those that produced
    the returned parameters.
    """
    _check_rho(rho)
    prior = model.prior() if prior is None else prior
    if cfg.init == UNIFORM:
        beliefs = model.uniform_beliefs(batch, prior=prior)
    else:
        beliefs = model.local_step(state, batch, iters=cfg.local_iters, prior=prior)
    m = 1 if cfg.init == NG_EQUIVALENT else cfg.inner_iters
    lam = None
    for i in range(m):
        if i > 0:
            beliefs = model.local_step(lam, batch, init=beliefs, iters=cfg.local_iters, prior=prior)
        new = natural_gradient_step(state, model.expected_stats(batch, beliefs, prior), rho)
        done = lam is not None and cfg.tol > 0 and _relative_change(new, lam) < cfg.tol
        lam = new
        if done:
            break
    return lam, beliefs


def trust_region_step(model, state, batch, rho, cfg, prior=None):
    return trust_region_solve(model, state, batch, rho, cfg, prior)[0]


def natural_gradient_update(model, state, batch, rho, local_iters, prior=None):
    """Full SVI step: optimal local beliefs for ``lam_t`` followed by one interpolation."""
    prior = model.prior() if prior is None else prior
    beliefs = model.local_step(state, batch, iters=local_iters, prior=prior)
    return natural_gradient_step(state, model.expected_stats(batch, beliefs, prior), rho), beliefs


# --- empirical Bayes --------------------------------------------------------------


def empirical_bayes_step(eta, lams, rho, floor=EB_FLOOR):
    """One stochastic natural-gradient step on the shared prior ``eta``.

    The gradient of the prior term is ``mean_k E_lam_k[t] - E_eta[t]`` and the
    step is taken along ``I(eta)^-1`` times it, which is scale-free and stable
    for small concentrations. ``lams`` holds one natural-parameter row per
    component sharing the prior. Returns ``(new_eta, n_projected)``:
    Dirichlet/Beta entries falling below ``floor`` are clamped to it, and an NIW
    step leaving the valid set is halved until it is valid.
    """
    fam = eta.family
    lams = np.atleast_2d(np.asarray(lams, dtype=np.float64))
    target = np.mean([expfam.mean_sufficient_stats(expfam.NaturalParams(fam, row)) for row in lams], axis=0)
    direction = expfam.fisher_solve(eta, target - expfam.mean_sufficient_stats(eta))
    if fam.kind == expfam.NIW:
        step = rho
        for _ in range(50):
            cand = eta.values + step * direction
            if expfam.is_valid(fam, cand):
                return expfam.NaturalParams(fam, cand), int(step != rho)
            step *= 0.5
        return eta, 1
    cand = eta.values + rho * direction
    low = cand < floor
    cand[low] = floor
    return expfam.NaturalParams(fam, cand), int(low.sum())


def empirical_bayes_update(model, prior, state, rho, beliefs=None):
    """Empirical-Bayes step on both prior blocks.

    Component priors move toward the average component posterior. The Dirichlet
    ``alpha`` moves toward ``q(pi)`` for mixtures, or toward the batch's document
    Dirichlets for LDA (when ``beliefs`` are given).
    """
    eta, n_proj = empirical_bayes_step(expfam.NaturalParams(model.family, prior.eta), state.lam, rho)
    alpha = prior.alpha
    weight_rows = state.gamma if state.gamma is not None else getattr(beliefs, "gamma", None)
    if weight_rows is not None and len(np.atleast_2d(weight_rows)):
        fam = expfam.FamilySpec.dirichlet(len(alpha))
        new_alpha, n_a = empirical_bayes_step(expfam.NaturalParams(fam, alpha), weight_rows, rho)
        alpha = new_alpha.values.copy()
        n_proj += n_a
    return Prior(eta.values.copy(), alpha), n_proj


# --- baselines ---------------------------------------------------------------------


def svb_update(model, state, batch, local_iters, prior=None, beliefs=None):
    """Streaming variational Bayes: add the batch's unscaled expected statistics to lam."""
    if batch.B == 0:
        return state.copy()
    if beliefs is None:
        beliefs = model.local_step(state, batch, iters=local_iters, prior=prior)
    stats = model.raw_stats(batch, beliefs)
    gamma = None if state.gamma is None else state.gamma + stats.gamma
    return GlobalState(state.lam + stats.lam, gamma)


def batch_vb(model, data, iters, prior=None, state=None, rng=None, local_iters=None):
    """Full-data coordinate ascent; returns ``(state, beliefs, elbo_trace)``.

    Each iteration updates every local belief against the current lam (warm
    started) and then sets lam to its exact conditional optimum, so the traced
    ELBO never decreases.
    """
    prior = model.prior() if prior is None else prior
    batch = Batch(data, float(len(data)))
    if state is None:
        rng = np.random.default_rng(0) if rng is None else rng
        state = model.init_state(rng, data)
    beliefs = None
    trace = []
    for _ in range(iters):
        beliefs = model.local_step(state, batch, init=beliefs, iters=local_iters, prior=prior)
        state = model.expected_stats(batch, beliefs, prior)
        trace.append(model.elbo(state, batch, beliefs, prior))
    return state, beliefs, trace


# --- training loop ---------------------------------------------------------------


NG = "ng"
TR = "tr"


def subset(data, idx):
    return data.take(idx) if hasattr(data, "take") and not isinstance(data, np.ndarray) else data[idx]


def full_elbo(model, state, data, prior, local_iters=None):
    """ELBO on the whole dataset with locally optimal beliefs."""
    batch = Batch(data, float(len(data)))
    beliefs = model.local_step(state, batch, iters=local_iters, prior=prior)
    return model.elbo(state, batch, beliefs, prior)


def svi_step(model, run, batch, rho, method, cfg, eb=False, ng_local_iters=None, log_elbo=True):
    """One NG or TR update of ``run`` in place; returns the metric record."""
    if method == TR:
        new_state, beliefs = trust_region_solve(model, run.state, batch, rho, cfg, run.prior)
    elif method == NG:
        iters = cfg.local_iters if ng_local_iters is None else ng_local_iters
        new_state, beliefs = natural_gradient_update(model, run.state, batch, rho, iters, run.prior)
    else:
        raise UsageError(f"unknown method {method!r}")
    record = {"step": run.t, "rho": rho}
    run.state = new_state
    if eb:
        run.prior, n_proj = empirical_bayes_update(model, run.prior, new_state, rho, beliefs)
        record["eb_projected"] = n_proj
    if log_elbo:
        post = model.local_step(new_state, batch, init=None, iters=cfg.local_iters, prior=run.prior)
        record["elbo_stochastic"] = model.elbo(new_state, batch, post, run.prior)
    run.t += 1
    return record


def sample_indices(rng, n, size):
    return rng.integers(0, n, size=size)


def fit(
    model,
    data,
    schedule,
    method=TR,
    cfg=None,
    epochs=1,
    seed=0,
    prior=None,
    state=None,
    eb=False,
    ng_local_iters=None,
    elbo_every=1,
    full_elbo_every_epoch=True,
    timing=False,
    callback=None,
    catch_interrupt=False,
):
    """Run SVI with seeded uniform batch sampling (with replacement).

    ``epochs * ceil(N / B)`` steps are taken. Per-step records carry ``step``,
    ``epoch``, ``rho`` and (every ``elbo_every`` steps) ``elbo_stochastic``; the
    last step of each epoch also carries ``elbo_full``. ``wall_ms`` is only logged
    with ``timing=True`` so that logs stay byte-reproducible by default. With
    ``catch_interrupt`` a ``KeyboardInterrupt`` ends the loop and the run is
    returned with ``interrupted`` set.
    """
    cfg = TrustRegionConfig() if cfg is None else cfg
    init_rng, sample_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    prior = model.prior() if prior is None else prior.copy()
    state = model.init_state(init_rng, data) if state is None else state.copy()
    run = RunState(state, prior, 0, seed)
    N = len(data)
    if schedule.kind == STREAMING and schedule.n0 is None:
        schedule = replace(schedule, n0=float(N))
    B = schedule.batch_size
    steps_per_epoch = -(-N // B)
    try:
        for epoch in range(epochs):
            for i in range(steps_per_epoch):
                start = time.perf_counter()
                idx = sample_indices(sample_rng, N, B)
                batch = Batch(subset(data, idx), float(N))
                rho = learning_rate(schedule, run.t, N)
                log_elbo = elbo_every > 0 and run.t % elbo_every == 0
                record = svi_step(model, run, batch, rho, method, cfg, eb, ng_local_iters, log_elbo)
                record["epoch"] = epoch
                if full_elbo_every_epoch and i == steps_per_epoch - 1:
                    record["elbo_full"] = full_elbo(model, run.state, data, run.prior, cfg.local_iters)
                if timing:
                    record["wall_ms"] = 1000.0 * (time.perf_counter() - start)
                run.log.append(record)
                if callback is not None:
                    callback(run, record)
    except KeyboardInterrupt:
        if not catch_interrupt:
            raise
        run.interrupted = True
    return run
