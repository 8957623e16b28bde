import json

import numpy as np
import pytest

from trsvi import expfam as ef
from trsvi import inference as inf
from trsvi.errors import UsageError
from trsvi.models import LDA, Batch, BernoulliMixture, Docs, GaussianMixture, GlobalState, MixtureBeliefs


def binary_data(rng, N=40, D=5):
    return (rng.random((N, D)) < 0.3).astype(float)


# --- learning rates --------------------------------------------------------------------------


def test_learning_rate_examples():
    s = inf.Schedule(inf.STREAMING, kappa=0.5, tau=1.0, batch_size=10, n0=100)
    assert inf.learning_rate(s, 0, 100) == 1.0
    assert inf.learning_rate(inf.Schedule(kappa=0.5, tau=100), 0) == pytest.approx(0.1, abs=1e-15)
    # (0 + 4)^-1 is a quarter; no offset convention also keeps the t=0 case above at 0.1
    assert inf.learning_rate(inf.Schedule(kappa=1.0, tau=0.0), 4) == 0.25
    assert inf.learning_rate(inf.Schedule(kappa=1.0, tau=1.0), 4) == pytest.approx(0.2, abs=1e-15)


def test_learning_rate_streaming_uses_data_count():
    s = inf.Schedule(inf.STREAMING, kappa=0.5, tau=10.0, batch_size=50, n0=0)
    assert inf.learning_rate(s, 999, 500) == pytest.approx((10 + 10) ** -0.5)
    # the step index is ignored in streaming mode
    assert inf.learning_rate(s, 0, 500) == inf.learning_rate(s, 999, 500)


def test_learning_rate_clamped_and_validated():
    assert inf.learning_rate(inf.Schedule(kappa=0.5, tau=0.0), 0) == 1.0
    with pytest.raises(UsageError):
        inf.Schedule(kappa=0.0)
    with pytest.raises(UsageError):
        inf.Schedule(tau=-1.0)
    with pytest.raises(UsageError):
        inf.learning_rate(inf.Schedule(inf.STREAMING, n0=10), 0, 5)
    with pytest.raises(UsageError):
        inf.learning_rate(inf.Schedule(), -1)


# --- natural-gradient step -----------------------------------------------------------------


def test_natural_gradient_step_examples():
    lam = GlobalState(np.array([[2.0, 2.0]]))
    tgt = GlobalState(np.array([[4.0, 6.0]]))
    assert np.array_equal(inf.natural_gradient_step(lam, tgt, 0.0).lam, lam.lam)
    assert np.array_equal(inf.natural_gradient_step(lam, tgt, 1.0).lam, tgt.lam)
    assert np.array_equal(inf.natural_gradient_step(lam, tgt, 0.5).lam, [[3.0, 4.0]])
    with pytest.raises(UsageError):
        inf.natural_gradient_step(lam, GlobalState(np.ones((1, 3))), 0.5)
    with pytest.raises(UsageError):
        inf.natural_gradient_step(lam, tgt, 1.5)


# --- trust region -------------------------------------------------------------------------------


@pytest.mark.parametrize("model_kind", ["bernoulli", "gmm", "lda"])
def test_ng_equivalent_init_is_bit_identical(rng, model_kind):
    if model_kind == "bernoulli":
        model, data = BernoulliMixture(3, 5), binary_data(rng)
    elif model_kind == "gmm":
        model, data = GaussianMixture(3, 2), rng.standard_normal((30, 2))
    else:
        model = LDA(3, 8)
        data = Docs.from_lists([(np.array([0, 3, 5]), np.array([1.0, 2.0, 1.0])), (np.array([1, 7]), np.array([3.0, 1.0]))])
    state = model.init_state(rng, data if model_kind == "gmm" else None)
    batch = Batch(data, 100.0)
    cfg = inf.TrustRegionConfig(inner_iters=5, local_iters=7, init=inf.NG_EQUIVALENT)
    tr = inf.trust_region_step(model, state, batch, 0.3, cfg)
    ng, _ = inf.natural_gradient_update(model, state, batch, 0.3, 7)
    assert np.array_equal(tr.lam, ng.lam)
    assert (tr.gamma is None and ng.gamma is None) or np.array_equal(tr.gamma, ng.gamma)


def test_uniform_init_preserves_symmetry(rng):
    model = BernoulliMixture(3, 4)
    state = GlobalState(np.tile(rng.uniform(0.5, 2, 8), (3, 1)), np.ones(3))
    new = inf.trust_region_step(model, state, Batch(binary_data(rng, 10, 4), 50.0), 0.4, inf.TrustRegionConfig(3, 5))
    assert np.all(new.lam == new.lam[0])
    assert np.all(new.gamma == new.gamma[0])


def test_trust_region_uniform_first_update(rng):
    # with m = 1 and uniform beliefs the step uses phi = 1/K exactly
    model = BernoulliMixture(2, 3)
    X = binary_data(rng, 6, 3)
    state = model.init_state(rng)
    batch = Batch(X, 12.0)
    new = inf.trust_region_step(model, state, batch, 0.5, inf.TrustRegionConfig(1, 5))
    tgt = model.expected_stats(batch, MixtureBeliefs(np.full((6, 2), 0.5)))
    assert np.allclose(new.lam, 0.5 * state.lam + 0.5 * tgt.lam)


def test_trust_region_stays_valid_for_niw(rng):
    model = GaussianMixture(3, 2)
    X = rng.standard_normal((20, 2)) * 4
    state = model.init_state(rng, X)
    for rho in (0.0, 0.2, 0.7, 1.0):
        new = inf.trust_region_step(model, state, Batch(X[:5], 20.0), rho, inf.TrustRegionConfig(3, 2))
        for k in range(3):
            assert ef.is_valid(model.family, new.lam[k])


def test_trust_region_tolerance_stops_early(rng):
    model = BernoulliMixture(2, 3)
    X = binary_data(rng, 8, 3)
    state = model.init_state(rng)
    batch = Batch(X, 8.0)
    loose = inf.trust_region_step(model, state, batch, 0.01, inf.TrustRegionConfig(50, 5, tol=1e-1))
    two = inf.trust_region_step(model, state, batch, 0.01, inf.TrustRegionConfig(2, 5))
    assert np.array_equal(loose.lam, two.lam)


def test_trust_region_config_validation():
    with pytest.raises(UsageError):
        inf.TrustRegionConfig(inner_iters=0)
    with pytest.raises(UsageError):
        inf.TrustRegionConfig(init="random")


# --- empirical Bayes ------------------------------------------------------------------------


def test_empirical_bayes_fixed_point():
    eta = ef.NaturalParams(ef.FamilySpec.dirichlet(3), [0.5, 1.0, 2.0])
    new, n = inf.empirical_bayes_step(eta, [eta.values, eta.values], 0.3)
    assert np.allclose(new.values, eta.values, atol=1e-14) and n == 0


def test_empirical_bayes_full_step_self_consistent():
    eta = ef.NaturalParams(ef.FamilySpec.dirichlet(4), [0.2, 0.3, 1.0, 5.0])
    new, _ = inf.empirical_bayes_step(eta, eta.values[None], 1.0)
    assert np.allclose(new.values, eta.values, atol=1e-14)


def test_empirical_bayes_beta_converges_to_moment_match():
    fam = ef.FamilySpec.beta_vector(3)
    rng = np.random.default_rng(4)
    lams = rng.uniform(1.0, 20.0, (5, 6))
    target = np.mean([ef.mean_sufficient_stats(ef.NaturalParams(fam, r)) for r in lams], axis=0)
    eta = ef.NaturalParams(fam, np.ones(6))
    for t in range(400):
        eta, _ = inf.empirical_bayes_step(eta, lams, 0.5)
    assert np.linalg.norm(ef.mean_sufficient_stats(eta) - target) < 1e-6


def test_empirical_bayes_floor_projection():
    eta = ef.NaturalParams(ef.FamilySpec.dirichlet(3), [1e-5, 1.0, 1.0])
    # a target with a strongly negative first statistic pushes the first entry down
    lams = np.array([[1e-4, 50.0, 50.0]])
    new, n = inf.empirical_bayes_step(eta, lams, 1.0)
    assert ef.is_valid(eta.family, new.values)
    assert new.values.min() >= inf.EB_FLOOR
    assert n >= 0


def test_empirical_bayes_niw_stays_valid(rng):
    model = GaussianMixture(2, 2)
    eta = ef.NaturalParams(model.family, model.prior().eta)
    X = rng.standard_normal((30, 2)) * 5 + 10
    lams = model.init_state(rng, X).lam
    for rho in (0.1, 0.5, 1.0):
        new, _ = inf.empirical_bayes_step(eta, lams, rho)
        assert ef.is_valid(model.family, new.values)


def test_empirical_bayes_update_lda_moves_alpha(rng):
    model = LDA(3, 6, alpha=0.1, eta=0.2)
    docs = Docs.from_lists([(np.array([0, 1]), np.array([5.0, 5.0])), (np.array([2, 5]), np.array([4.0, 1.0]))])
    batch = Batch(docs, 2.0)
    state = model.init_state(rng)
    beliefs = model.local_step(state, batch)
    prior, _ = inf.empirical_bayes_update(model, model.prior(), state, 0.1, beliefs)
    assert prior.alpha.shape == (3,) and prior.eta.shape == (6,)
    assert not np.allclose(prior.alpha, 0.1)


# --- SVB -----------------------------------------------------------------------------------


def test_svb_empty_batch_is_noop(rng):
    model = BernoulliMixture(2, 3)
    state = model.init_state(rng)
    new = inf.svb_update(model, state, Batch(np.zeros((0, 3)), 0.0), 5)
    assert np.array_equal(new.lam, state.lam)


def test_svb_one_hot_assignments_are_conjugate(rng):
    model = BernoulliMixture(2, 3)
    X = binary_data(rng, 5, 3)
    phi = np.zeros((5, 2))
    phi[:3, 0] = 1
    phi[3:, 1] = 1
    state = model.prior_state()
    new = inf.svb_update(model, state, Batch(X, 5.0), 1, beliefs=MixtureBeliefs(phi))
    assert np.allclose(new.lam[0, :3], 1 + X[:3].sum(axis=0))
    assert np.allclose(new.lam[0, 3:], 1 + (1 - X[:3]).sum(axis=0))
    assert np.allclose(new.lam[1, :3], 1 + X[3:].sum(axis=0))
    assert np.allclose(new.gamma, [1 + 3, 1 + 2])


def test_svb_single_component_sequential_equals_batch_posterior(rng):
    model = BernoulliMixture(1, 4, a=0.5, b=2.0)
    X = binary_data(rng, 25, 4)
    state = model.prior_state()
    for n in range(len(X)):
        state = inf.svb_update(model, state, Batch(X[n : n + 1], 1.0), 1)
    assert np.array_equal(state.lam[0], np.concatenate([0.5 + X.sum(0), 2.0 + (1 - X).sum(0)]))


# --- batch VB ------------------------------------------------------------------------------


def test_batch_vb_single_component_posterior(rng):
    model = BernoulliMixture(1, 4, a=2.0, b=3.0)
    X = binary_data(rng, 30, 4)
    state, _, _ = inf.batch_vb(model, X, 1, rng=rng)
    assert np.allclose(state.lam[0], np.concatenate([2 + X.sum(0), 3 + (1 - X).sum(0)]), rtol=0, atol=1e-12)
    assert np.allclose(state.gamma, 1 + 30)


def test_batch_vb_reaches_grid_optimum(oracles):
    inst = oracles["batch_vb_grid"]
    X = np.array(inst["X"])
    model = BernoulliMixture(2, X.shape[1], a=inst["a"], b=inst["b"], alpha=inst["alpha"])
    best = max(inf.batch_vb(model, X, 300, rng=np.random.default_rng(s))[2][-1] for s in range(20))
    assert abs(best - inst["opt"]) < 1e-4


def test_batch_vb_monotone_short(rng):
    model = GaussianMixture(3, 2)
    X = np.vstack([rng.standard_normal((20, 2)) + c for c in ([0, 0], [5, 5], [-5, 4])])
    _, _, trace = inf.batch_vb(model, X, 30, rng=rng)
    assert np.all(np.diff(trace) >= -1e-8)


# --- fit ------------------------------------------------------------------------------------


def test_fit_zero_epochs(rng):
    model = BernoulliMixture(2, 5)
    run = inf.fit(model, binary_data(rng), inf.Schedule(batch_size=10), epochs=0, seed=3)
    init = model.init_state(np.random.default_rng(np.random.SeedSequence(3).spawn(2)[0]))
    assert run.log == [] and run.t == 0
    assert np.array_equal(run.state.lam, init.lam)


def test_fit_is_deterministic(rng):
    X = binary_data(rng, 60, 6)
    logs = []
    for _ in range(2):
        run = inf.fit(BernoulliMixture(3, 6), X, inf.Schedule(batch_size=7), inf.TR, epochs=2, seed=11, eb=True)
        logs.append(json.dumps(run.log, sort_keys=True))
    assert logs[0] == logs[1]


def test_fit_record_layout(rng):
    X = binary_data(rng, 30, 4)
    run = inf.fit(BernoulliMixture(2, 4), X, inf.Schedule(batch_size=10), inf.NG, epochs=2, seed=0, elbo_every=2)
    assert [r["step"] for r in run.log] == list(range(6))
    assert all("elbo_stochastic" in r for r in run.log[::2])
    assert all("elbo_stochastic" not in r for r in run.log[1::2])
    assert [("elbo_full" in r) for r in run.log] == [False, False, True, False, False, True]
    assert all("wall_ms" not in r for r in run.log)
    timed = inf.fit(BernoulliMixture(2, 4), X, inf.Schedule(batch_size=10), inf.NG, epochs=1, timing=True)
    assert all("wall_ms" in r for r in timed.log)


def test_fit_catches_interrupt(rng):
    X = binary_data(rng, 30, 4)

    def boom(run, rec):
        if run.t == 2:
            raise KeyboardInterrupt

    run = inf.fit(BernoulliMixture(2, 4), X, inf.Schedule(batch_size=10), epochs=5, callback=boom, catch_interrupt=True)
    assert run.interrupted and run.t == 2
    with pytest.raises(KeyboardInterrupt):
        inf.fit(BernoulliMixture(2, 4), X, inf.Schedule(batch_size=10), epochs=5, callback=boom)


def test_fit_rejects_unknown_method(rng):
    with pytest.raises(UsageError):
        inf.fit(BernoulliMixture(2, 4), binary_data(rng, 10, 4), inf.Schedule(batch_size=5), "adam")


def test_run_snapshot_is_a_copy(rng):
    model = BernoulliMixture(2, 3)
    run = inf.RunState(model.init_state(rng), model.prior())
    snap = run.snapshot()
    run.state.lam[:] = 0
    assert snap.state.lam.min() > 0
