import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from annealvi.estimators import (
    EstimationError,
    TemperatureSchedule,
    ais_run,
    elbo_and_grad_phi,
    effective_sample_size,
    grad_theta_ais,
    grad_theta_iwae,
    grad_theta_mh_hmc,
    grad_theta_vae,
    linear_schedule,
    mh_hmc_schedule,
    normalize_log_weights,
    tune_step_sizes,
)
from annealvi.gradcheck import check_reductions
from annealvi.hmc import HmcConfig, TemperedPotential, hmc_step
from annealvi.models import (
    BernoulliMlpModel,
    LinearGaussianEncoder,
    LinearGaussianModel,
    MlpGaussianEncoder,
    lg_log_marginal,
    lg_optimal_encoder,
)


def lg_pair(seed, dim_x=4, dim_z=2):
    rng = np.random.default_rng(seed)
    gen = LinearGaussianModel.from_arrays(rng.standard_normal((dim_x, dim_z)), rng.standard_normal(dim_x), -0.3)
    inf = LinearGaussianEncoder.init(dim_x, dim_z, rng)
    inf.phi = inf.phi + 0.3 * rng.standard_normal(inf.phi.size)
    return gen, inf, rng.standard_normal(dim_x)


# ---------------------------------------------------------------- schedules and weights


def test_schedules():
    assert np.array_equal(linear_schedule(4).betas, [0, 0.25, 0.5, 0.75, 1])
    assert np.array_equal(mh_hmc_schedule(3).betas, [0, 1, 1, 1])
    assert linear_schedule(7).T == 7
    assert np.array_equal(linear_schedule(2).reversed(), [1, 0.5, 0])
    for bad in ([0.0], [0.1, 1.0], [0.0, 0.9], [0.0, 0.6, 0.4, 1.0]):
        with pytest.raises(ValueError):
            TemperatureSchedule(np.array(bad))
    with pytest.raises(ValueError):
        linear_schedule(0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-700, 700)), st.floats(-1e3, 1e3))
def test_normalized_weights_sum_to_one_and_ignore_shifts(log_w, shift):
    w = normalize_log_weights(log_w)
    assert w.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(w >= 0)
    assert np.allclose(normalize_log_weights(log_w + shift), w, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-30, 30)))
def test_ess_matches_definition_and_bounds(log_w):
    w = np.exp(log_w)
    ess = effective_sample_size(log_w)
    assert ess == pytest.approx(w.sum() ** 2 / np.sum(w**2), rel=1e-10)
    assert 1.0 - 1e-9 <= ess <= log_w.size + 1e-9


def test_ess_extremes_and_degenerate_weights():
    assert effective_sample_size(np.zeros(8)) == pytest.approx(8.0)
    assert effective_sample_size(np.array([0.0, -np.inf, -np.inf])) == pytest.approx(1.0)
    w = normalize_log_weights(np.array([0.0, np.nan, 0.0]))
    assert np.array_equal(w, [0.5, 0.0, 0.5])
    with pytest.raises(EstimationError):
        normalize_log_weights(np.array([-np.inf, np.nan]))


# ---------------------------------------------------------------- AIS engine


def reference_ais(gen, inf, x, eps, betas, hmc, rng):
    """Straight-line single-chain AIS used as an indexing oracle."""
    z = inf.sample(x, eps)
    log_w = 0.0
    T = len(betas) - 1
    for t in range(1, T + 1):
        log_w += (betas[t] - betas[t - 1]) * (gen.log_joint(x, z) - inf.log_density(x, z))
        if t < T:
            pot = TemperedPotential(gen, inf, x, betas[t])
            z = hmc_step(pot, z[None, :], hmc.step_size(t), hmc.leapfrog_steps, rng).z[0]
    return z, log_w


def test_weights_accumulate_before_each_transition():
    gen, inf, x = lg_pair(3)
    betas = np.array([0.0, 0.1, 0.45, 0.8, 1.0])
    hmc = HmcConfig([0.3, 0.2, 0.25, 0.1], 4)
    res = ais_run(gen, inf, x, 1, TemperatureSchedule(betas), hmc, False, np.random.default_rng(5))
    ref_rng = np.random.default_rng(5)
    eps = ref_rng.standard_normal((1, 2))[0]
    z, log_w = reference_ais(gen, inf, x, eps, betas, hmc, ref_rng)
    assert res.log_weights[0] == pytest.approx(log_w, rel=1e-12)
    assert np.allclose(res.samples[0], z, rtol=1e-12)


def test_final_transition_moves_samples_but_not_weights():
    gen, inf, x = lg_pair(4)
    sched, hmc = linear_schedule(4), HmcConfig.constant(0.3, 4)
    a = ais_run(gen, inf, x, 6, sched, hmc, False, np.random.default_rng(1))
    b = ais_run(gen, inf, x, 6, sched, hmc, True, np.random.default_rng(1))
    assert np.array_equal(a.log_weights, b.log_weights)
    assert not np.array_equal(a.samples, b.samples)
    assert np.isnan(a.acceptance_rates[-1]) and not np.isnan(b.acceptance_rates[-1])


def test_exact_posterior_proposal_gives_constant_weights():
    # with dim_z = 1 the optimal encoder is the exact posterior, so log p - log q = log p(x)
    gen, _, _ = lg_pair(6, dim_x=3, dim_z=1)
    inf = lg_optimal_encoder(gen)
    x = np.random.default_rng(0).standard_normal((5, 3))
    res = ais_run(gen, inf, x, 8, linear_schedule(7), HmcConfig.constant(0.5, 7), False,
                  np.random.default_rng(2))
    expected = lg_log_marginal(gen, x)[:, None]
    assert np.allclose(res.log_weights, expected, atol=1e-10)
    assert np.allclose(res.ess, 8.0)


def test_result_shapes_and_diagnostics():
    gen, inf, _ = lg_pair(7)
    x = np.random.default_rng(0).standard_normal((3, 4))
    res = ais_run(gen, inf, x, 5, linear_schedule(3), HmcConfig.constant(0.2, 3), False,
                  np.random.default_rng(0))
    assert res.samples.shape == (3, 5, 2)
    assert res.log_weights.shape == res.normalized_weights.shape == (3, 5)
    assert res.ess.shape == (3,) and res.K == 5
    assert np.allclose(res.normalized_weights.sum(axis=-1), 1.0)
    assert res.transitions == 2 * 15
    assert res.acceptance_rates.shape == (3,)
    assert np.all((res.chain_acceptance >= 0) & (res.chain_acceptance <= 1))
    with pytest.raises(ValueError):
        ais_run(gen, inf, x, 0, linear_schedule(3), HmcConfig.constant(0.2, 3))
    with pytest.raises(ValueError):
        ais_run(gen, inf, x, 2, linear_schedule(3), HmcConfig.constant(0.2, 2))


class _BrokenModel(LinearGaussianModel):
    def log_joint_and_grad_z(self, x, z):
        val, grad = super().log_joint_and_grad_z(x, z)
        return np.full_like(val, np.nan), grad


def test_all_nonfinite_weights_raise():
    gen, inf, x = lg_pair(8)
    broken = _BrokenModel(4, 2, gen.theta)
    with pytest.raises(EstimationError):
        ais_run(broken, inf, x, 4, linear_schedule(2), HmcConfig.constant(0.1, 2), False,
                np.random.default_rng(0))


def test_jarzynski_on_small_instance():
    gen, _, _ = lg_pair(9, dim_x=3, dim_z=2)
    inf = lg_optimal_encoder(gen)
    x = gen.b + np.array([0.5, -0.3, 0.2])
    res = ais_run(gen, inf, np.broadcast_to(x, (4000, 3)), 1, linear_schedule(5),
                  HmcConfig.constant(0.4, 5), False, np.random.default_rng(3))
    w = np.exp(res.log_weights[:, 0] - lg_log_marginal(gen, x))
    assert abs(w.mean() - 1.0) < 3 * w.std(ddof=1) / math.sqrt(w.size)


# ---------------------------------------------------------------- gradient estimators


@pytest.mark.parametrize("seed", range(5))
def test_reductions_are_bit_exact(seed):
    gen, inf, _ = lg_pair(seed)
    x = np.random.default_rng(seed).standard_normal((3, 4))
    assert check_reductions(gen, inf, x, 4, seed) == {"ais_vs_iwae": True, "iwae_vs_vae": True}
    rng = np.random.default_rng(seed)
    mlp = BernoulliMlpModel.init(6, rng, 2, 3)
    enc = MlpGaussianEncoder.init(6, rng, 2, 3)
    xb = (rng.random((2, 6)) < 0.5).astype(float)
    assert all(check_reductions(mlp, enc, xb, 3, seed).values())


def test_batch_gradient_is_mean_of_per_example_estimates():
    gen, inf, _ = lg_pair(10)
    x = np.random.default_rng(1).standard_normal((3, 4))
    batch, _ = grad_theta_iwae(gen, inf, x, 5, np.random.default_rng(2))
    rng = np.random.default_rng(2)
    singles = [grad_theta_iwae(gen, inf, x[i], 5, rng)[0].grad_theta for i in range(3)]
    assert np.allclose(batch.grad_theta, np.mean(singles, axis=0), rtol=1e-12, atol=1e-14)


def test_iwae_bound_tightens_with_k():
    gen, inf, x = lg_pair(11)
    truth = float(lg_log_marginal(gen, x))
    xs = np.broadcast_to(x, (3000, 4))
    means = [float(np.mean(grad_theta_iwae(gen, inf, xs, K, np.random.default_rng(K))[1])) for K in (1, 5, 50)]
    assert means[0] < means[1] < means[2] < truth


def test_vae_gradient_is_single_sample_joint_gradient():
    gen, inf, x = lg_pair(12)
    est = grad_theta_vae(gen, inf, x, np.random.default_rng(4))
    eps = np.random.default_rng(4).standard_normal((1, 2))
    z = inf.sample(x, eps)[0]
    assert np.allclose(est.grad_theta, gen.grad_theta_log_joint(x, z), rtol=1e-13)


def test_mh_hmc_uses_uniform_weights():
    gen, inf, x = lg_pair(13)
    est = grad_theta_mh_hmc(gen, inf, x, 6, 3, HmcConfig.constant(0.3, 3), np.random.default_rng(0))
    d = est.diagnostics
    assert np.allclose(d.normalized_weights, 1 / 6)
    assert np.all(d.ess == 6)
    mean_grad = np.mean([gen.grad_theta_log_joint(x, z) for z in d.samples], axis=0)
    assert np.allclose(est.grad_theta, mean_grad, rtol=1e-12)
    zero = grad_theta_mh_hmc(gen, inf, x, 6, 0, HmcConfig.constant(0.3, 1), np.random.default_rng(0))
    eps = np.random.default_rng(0).standard_normal((6, 2))
    assert np.allclose(zero.diagnostics.samples, inf.sample(x, eps))


def test_ais_gradient_converges_to_posterior_expectation_with_exact_proposal():
    gen, _, _ = lg_pair(14, dim_x=3, dim_z=1)
    inf = lg_optimal_encoder(gen)
    x = np.array([0.4, -1.0, 0.3])
    from annealvi.models import lg_grad_log_marginal
    truth = lg_grad_log_marginal(gen, x)
    res = ais_run(gen, inf, np.broadcast_to(x, (2000, 3)), 8, linear_schedule(3),
                  HmcConfig.constant(0.5, 3), False, np.random.default_rng(0))
    g = grad_theta_ais(gen, np.broadcast_to(x, (2000, 3)), res).grad_theta
    assert np.allclose(g, truth, atol=0.05 * np.max(np.abs(truth)))


def test_tune_step_sizes_keeps_idle_temperatures():
    gen, inf, x = lg_pair(15)
    hmc = HmcConfig.constant(0.05, 4)
    tuned = tune_step_sizes(gen, inf, np.broadcast_to(x, (20, 4)), 4, linear_schedule(4), hmc,
                            np.random.default_rng(0), rounds=30)
    assert tuned.step_sizes[-1] == 0.05
    assert np.all(tuned.step_sizes[:-1] > 0.05)


# ---------------------------------------------------------------- phi gradient


def test_phi_gradient_is_isolated_from_annealing():
    gen, inf, x = lg_pair(16)
    eps = np.random.default_rng(3).standard_normal(2)
    before = elbo_and_grad_phi(gen, inf, x, None, eps=eps)
    for T, step in ((1, 0.1), (5, 0.9), (20, 0.01)):
        ais_run(gen, inf, x, 7, linear_schedule(T), HmcConfig.constant(step, T), True,
                np.random.default_rng(T))
        after = elbo_and_grad_phi(gen, inf, x, None, eps=eps)
        assert after[0] == before[0]
        assert np.array_equal(after[1], before[1])


def test_elbo_matches_definition_and_batch_mean():
    gen, inf, _ = lg_pair(17)
    x = np.random.default_rng(0).standard_normal((3, 4))
    eps = np.random.default_rng(1).standard_normal((3, 2))
    elbo, grad = elbo_and_grad_phi(gen, inf, x, None, eps=eps)
    z = inf.sample(x, eps)
    assert elbo == pytest.approx(float(np.mean(gen.log_joint(x, z) - inf.log_density(x, z))), rel=1e-13)
    parts = [elbo_and_grad_phi(gen, inf, x[i], None, eps=eps[i])[1] for i in range(3)]
    assert np.allclose(grad, np.mean(parts, axis=0), rtol=1e-12, atol=1e-14)
