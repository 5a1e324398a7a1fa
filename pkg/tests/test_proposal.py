import csv

import numpy as np
import pytest
from scipy import stats

from annealvi.estimators import linear_schedule
from annealvi.hmc import HmcConfig
from annealvi.models import CorrelatedGaussianTarget, LinearGaussianEncoder
from annealvi.proposal import (
    FIG1_COLUMNS,
    ImplicitProposalSpec,
    _categorical,
    fig1_experiment,
    gaussian_fit_kl,
    gaussian_kl,
    optimal_factorized_gaussian,
    sample_implicit,
    summarize_fig1,
    write_fig1_csv,
)


def test_spec_validation_and_budget():
    assert ImplicitProposalSpec("is", 60).budget() == 60
    ais = ImplicitProposalSpec("AIS", 2, linear_schedule(6), HmcConfig.constant(0.2, 6, 5), True)
    assert ais.budget() == 2 * 5 * 6
    no_final = ImplicitProposalSpec("AIS", 2, linear_schedule(6), HmcConfig.constant(0.2, 6, 5))
    assert no_final.budget() == 2 * 5 * 5
    with pytest.raises(ValueError):
        ImplicitProposalSpec("SMC", 3)
    with pytest.raises(ValueError):
        ImplicitProposalSpec("IS", 0)
    with pytest.raises(ValueError):
        ImplicitProposalSpec("AIS", 3)
    with pytest.raises(ValueError):
        ImplicitProposalSpec("IS", 3, linear_schedule(2), HmcConfig.constant(0.1, 2))


def test_categorical_frequencies():
    rng = np.random.default_rng(0)
    w = np.broadcast_to([0.1, 0.0, 0.6, 0.3], (100000, 4))
    idx = _categorical(w, rng)
    counts = np.bincount(idx, minlength=4) / idx.size
    assert counts[1] == 0
    assert np.allclose(counts, [0.1, 0.0, 0.6, 0.3], atol=3 * np.sqrt(0.25 / idx.size))


def test_optimal_factorized_gaussian():
    t = CorrelatedGaussianTarget.from_rho(0.95, mean=(1.0, 2.0))
    mean, var = optimal_factorized_gaussian(t)
    assert np.array_equal(mean, [1.0, 2.0])
    assert np.allclose(var, 1 - 0.95**2)


def test_gaussian_kl_against_monte_carlo():
    rng = np.random.default_rng(1)
    m0, c0 = np.array([0.2, -0.1]), np.array([[1.0, 0.3], [0.3, 0.5]])
    m1, c1 = np.array([0.0, 0.4]), np.array([[2.0, -0.4], [-0.4, 1.0]])
    s = rng.multivariate_normal(m0, c0, size=400000)
    d = stats.multivariate_normal(m0, c0).logpdf(s) - stats.multivariate_normal(m1, c1).logpdf(s)
    assert abs(gaussian_kl(m0, c0, m1, c1) - d.mean()) < 3 * d.std() / np.sqrt(d.size)
    assert gaussian_kl(m0, c0, m0, c0) == pytest.approx(0.0, abs=1e-14)


def test_fit_kl_errors_and_exact_samples():
    t = CorrelatedGaussianTarget.from_rho(0.5)
    with pytest.raises(ValueError):
        gaussian_fit_kl(np.zeros((2, 2)), t)
    with pytest.raises(ValueError):
        gaussian_fit_kl(np.column_stack([np.arange(10.0), np.arange(10.0)]), t)
    _, z = t.sample(50000, np.random.default_rng(2))
    report = gaussian_fit_kl(z, t, budget=7)
    assert report.budget == 7
    assert report.kl_to_target < 1e-3


def test_single_particle_is_proposal_is_the_base():
    t = CorrelatedGaussianTarget.from_rho(0.95)
    mean, var = optimal_factorized_gaussian(t)
    base = LinearGaussianEncoder.constant(1, mean, var)
    draws = sample_implicit(ImplicitProposalSpec("IS", 1), t, base, np.random.default_rng(3), n=20000)
    fit = gaussian_fit_kl(draws, t)
    assert np.allclose(np.diag(fit.covariance), var, rtol=0.05)
    assert abs(fit.covariance[0, 1]) < 0.01


def test_resampling_approaches_target_as_k_grows():
    t = CorrelatedGaussianTarget.from_rho(0.95)
    mean, var = optimal_factorized_gaussian(t)
    base = LinearGaussianEncoder.constant(1, mean, var)
    kls = [gaussian_fit_kl(sample_implicit(ImplicitProposalSpec("IS", K), t, base,
                                           np.random.default_rng(K), n=4000), t).kl_to_target
           for K in (1, 10, 200)]
    assert kls[0] > kls[1] > kls[2]
    single = sample_implicit(ImplicitProposalSpec("IS", 5), t, base, np.random.default_rng(0))
    assert single.shape == (2,)


def test_ais_proposal_draws():
    t = CorrelatedGaussianTarget.from_rho(0.95)
    mean, var = optimal_factorized_gaussian(t)
    base = LinearGaussianEncoder.constant(1, mean, var)
    spec = ImplicitProposalSpec("AIS", 2, linear_schedule(6), HmcConfig.constant(0.25, 6, 5), True)
    draws = sample_implicit(spec, t, base, np.random.default_rng(4), n=3000)
    assert draws.shape == (3000, 2)
    assert gaussian_fit_kl(draws, t).kl_to_target < 0.1


def test_fig1_rows_summary_and_csv(tmp_path):
    rows = fig1_experiment(budgets=(30, 60), L=5, T=6, n_draws=300, replicates=2, seed=1)
    assert len(rows) == 2 * 2 * 2
    assert {r["mode"] for r in rows} == {"IS", "AIS"}
    ais = [r for r in rows if r["mode"] == "AIS" and r["budget"] == 60]
    assert all(r["K"] == 2 and r["T"] == 6 and r["L"] == 5 for r in ais)
    summary = summarize_fig1(rows)
    assert set(summary) == {("IS", 30), ("IS", 60), ("AIS", 30), ("AIS", 60)}
    assert all(se >= 0 for _, se in summary.values())
    path = tmp_path / "fig1.csv"
    write_fig1_csv(rows, path)
    with open(path) as fh:
        back = list(csv.DictReader(fh))
    assert tuple(back[0]) == FIG1_COLUMNS
    assert [float(r["kl_nats"]) for r in back] == [r["kl_nats"] for r in rows]
    assert rows == fig1_experiment(budgets=(30, 60), L=5, T=6, n_draws=300, replicates=2, seed=1)
    with pytest.raises(ValueError):
        fig1_experiment(budgets=(45,), L=5, T=6)
