import csv

import numpy as np
import pytest

from annealvi.data import synthesize_linear_gaussian
from annealvi.models import LinearGaussianEncoder, LinearGaussianModel, lg_log_marginal
from annealvi.trainer import (
    METRIC_COLUMNS,
    Checkpoint,
    OptimizerState,
    TrainConfig,
    TrainingError,
    adam_step,
    load_checkpoint,
    save_checkpoint,
    train,
)


def lg_problem(seed=0, n=200, dim_x=5, dim_z=2):
    rng = np.random.default_rng(seed)
    truth = LinearGaussianModel.from_arrays(rng.standard_normal((dim_x, dim_z)), rng.standard_normal(dim_x),
                                            np.log(0.5))
    data = synthesize_linear_gaussian(truth, n, seed)
    return truth, data.x


def fresh_models(dim_x=5, dim_z=2, seed=1):
    rng = np.random.default_rng(seed)
    return LinearGaussianModel.init(dim_x, dim_z, rng), LinearGaussianEncoder.init(dim_x, dim_z, rng)


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_keeps_parameters():
    state = OptimizerState.zeros(3)
    params = np.array([1.0, -2.0, 3.0])
    new_state, new_params = adam_step(state, params, np.zeros(3), 1e-3)
    assert np.array_equal(new_params, params)
    assert new_state.step == 1


def test_adam_first_step_is_lr_times_sign():
    g = np.array([3.0, -1e-3, 250.0, -7.0])
    _, params = adam_step(OptimizerState.zeros(4), np.zeros(4), g, 0.01)
    # bias-corrected first step: lr * g / (|g| + 1e-8)
    assert np.allclose(params, 0.01 * np.sign(g), rtol=1e-5, atol=0)


def test_adam_constant_gradient_approaches_lr_sign():
    g = np.array([0.5, -4.0])
    state, params = OptimizerState.zeros(2), np.zeros(2)
    for _ in range(2000):
        prev = params
        state, params = adam_step(state, params, g, 1e-3)
    assert np.allclose(params - prev, 1e-3 * np.sign(g), rtol=1e-6)


def test_adam_skips_non_finite_gradients():
    state = OptimizerState.zeros(2)
    state, params = adam_step(state, np.ones(2), np.array([1.0, np.nan]), 0.1)
    assert state.skipped == 1 and state.step == 0
    assert np.array_equal(params, np.ones(2)) and np.all(state.m == 0)
    with pytest.raises(ValueError):
        adam_step(state, np.ones(2), np.ones(3), 0.1)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    gen, inf = fresh_models()
    ckpt = Checkpoint(
        gen_spec=gen.spec(), inf_spec=inf.spec(), theta=rng.standard_normal(gen.theta.size),
        phi=rng.standard_normal(inf.phi.size),
        opt_theta=OptimizerState(rng.standard_normal(gen.theta.size), rng.random(gen.theta.size), 7, 1),
        opt_phi=OptimizerState(rng.standard_normal(inf.phi.size), rng.random(inf.phi.size), 7, 0),
        iteration=7, epoch=1, seed=42, config=TrainConfig().to_dict(),
        step_sizes=np.array([0.1, 0.2 / 3]),
        adapter={"count": 3, "mu": np.array([0.5, 1 / 3]), "h_bar": np.array([1e-300, -0.0])},
    )
    save_checkpoint(ckpt, tmp_path / "c.bin")
    back = load_checkpoint(tmp_path / "c.bin")
    for name in ("theta", "phi", "step_sizes"):
        assert getattr(back, name).tobytes() == getattr(ckpt, name).tobytes()
    for name in ("m", "v"):
        assert getattr(back.opt_theta, name).tobytes() == getattr(ckpt.opt_theta, name).tobytes()
        assert getattr(back.opt_phi, name).tobytes() == getattr(ckpt.opt_phi, name).tobytes()
    assert (back.opt_theta.step, back.opt_theta.skipped) == (7, 1)
    assert (back.iteration, back.epoch, back.seed, back.config) == (7, 1, 42, ckpt.config)
    assert back.adapter["count"] == 3
    assert back.adapter["h_bar"].tobytes() == ckpt.adapter["h_bar"].tobytes()
    save_checkpoint(back, tmp_path / "d.bin")
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()
    g2, i2 = back.models()
    assert np.array_equal(g2.theta, ckpt.theta) and np.array_equal(i2.phi, ckpt.phi)
    assert (tmp_path / "c.bin").read_bytes()[:10] == b"ANNEALVI01"


# ---------------------------------------------------------------- training loop


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(estimator="sgd")
    with pytest.raises(ValueError):
        TrainConfig(K=0)
    with pytest.raises(ValueError):
        TrainConfig(adapt_fraction=2.0)


def test_same_seed_gives_identical_checkpoints(tmp_path):
    _, x = lg_problem()
    cfg = TrainConfig(estimator="ais", K=3, T=3, L=3, step_size=0.2, lr=1e-2, batch_size=32, epochs=3,
                      seed=5, adapt_fraction=0.3)
    blobs = []
    for run in range(2):
        gen, inf = fresh_models()
        train(cfg, x, gen, inf, checkpoint_path=tmp_path / f"{run}.bin", metrics_path=tmp_path / f"{run}.csv")
        blobs.append(((tmp_path / f"{run}.bin").read_bytes(), (tmp_path / f"{run}.csv").read_bytes()))
    assert blobs[0] == blobs[1]


@pytest.mark.parametrize("estimator", ["ais", "mh_hmc", "iwae"])
def test_resume_reproduces_uninterrupted_run(tmp_path, estimator):
    _, x = lg_problem(n=100)
    cfg = TrainConfig(estimator=estimator, K=3, T=3, L=2, step_size=0.2, lr=1e-2, batch_size=30, epochs=4,
                      seed=9, adapt_fraction=0.5)
    gen, inf = fresh_models()
    full = train(cfg, x, gen, inf, metrics_path=tmp_path / "full.csv")

    gen, inf = fresh_models()
    part = train(cfg, x, gen, inf, checkpoint_path=tmp_path / "part.bin",
                 metrics_path=tmp_path / "resumed.csv", max_iterations=6)
    assert part.checkpoint.iteration == 6
    ckpt = load_checkpoint(tmp_path / "part.bin")
    gen2, inf2 = ckpt.models()
    rest = train(cfg, x, gen2, inf2, resume=ckpt, metrics_path=tmp_path / "resumed.csv")

    assert rest.checkpoint.theta.tobytes() == full.checkpoint.theta.tobytes()
    assert rest.checkpoint.phi.tobytes() == full.checkpoint.phi.tobytes()
    assert rest.checkpoint.step_sizes.tobytes() == full.checkpoint.step_sizes.tobytes()
    assert (tmp_path / "resumed.csv").read_bytes() == (tmp_path / "full.csv").read_bytes()


def test_vae_and_single_sample_iwae_share_a_trajectory():
    _, x = lg_problem(n=64)
    results = []
    for estimator in ("vae", "iwae"):
        gen, inf = fresh_models()
        cfg = TrainConfig(estimator=estimator, K=1, lr=1e-2, batch_size=16, epochs=3, seed=2)
        results.append(train(cfg, x, gen, inf).checkpoint)
    assert np.array_equal(results[0].theta, results[1].theta)
    assert np.array_equal(results[0].phi, results[1].phi)


def test_metrics_and_timing_files(tmp_path):
    _, x = lg_problem(n=50)
    gen, inf = fresh_models()
    cfg = TrainConfig(K=2, T=2, L=2, batch_size=20, epochs=2, seed=0)
    res = train(cfg, x, gen, inf, metrics_path=tmp_path / "m.csv", timing_path=tmp_path / "t.csv")
    with open(tmp_path / "m.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert len(rows) == len(res.metrics) == 6
    assert [int(r["iteration"]) for r in rows] == list(range(6))
    assert [int(r["epoch"]) for r in rows] == [0, 0, 0, 1, 1, 1]
    assert all(0.0 <= float(r["acceptance_mean"]) <= 1.0 for r in rows)
    timing = (tmp_path / "t.csv").read_text().splitlines()
    assert timing[0] == "iteration,wall_time" and len(timing) == 7


class _NanGradModel(LinearGaussianModel):
    def grad_theta_log_joint(self, x, z, weights=None):
        return np.full(self.theta.size, np.nan)


def test_persistent_non_finite_gradients_abort():
    _, x = lg_problem(n=40)
    gen = _NanGradModel(5, 2, fresh_models()[0].theta)
    cfg = TrainConfig(estimator="iwae", K=2, batch_size=2, epochs=1, seed=0)
    with pytest.raises(TrainingError):
        train(cfg, x, gen, fresh_models()[1])
    with pytest.raises(ValueError):
        train(cfg, np.zeros((0, 5)), *fresh_models())


def test_theta_update_ignores_phi_gradient_and_vice_versa():
    # probe: an AIS config change must not alter phi's first update for a fixed noise stream
    _, x = lg_problem(n=20)
    phis = []
    for step in (0.05, 0.5):
        gen, inf = fresh_models()
        cfg = TrainConfig(estimator="vae", K=1, T=3, step_size=step, batch_size=20, epochs=1, seed=0)
        phis.append(train(cfg, x, gen, inf).checkpoint.phi)
    assert np.array_equal(phis[0], phis[1])


def test_learns_linear_gaussian_close_to_truth():
    truth, x = lg_problem(seed=3, n=1500, dim_x=6, dim_z=2)
    train_x, test_x = x[:1000], x[1000:]
    gen, inf = fresh_models(dim_x=6, dim_z=2, seed=4)
    cfg = TrainConfig(estimator="ais", K=4, T=5, L=5, step_size=0.2, lr=1e-2, batch_size=50, epochs=100, seed=0)
    train(cfg, train_x, gen, inf, max_iterations=2000)
    gap = float(np.mean(lg_log_marginal(truth, test_x)) - np.mean(lg_log_marginal(gen, test_x)))
    assert gap < 0.1
