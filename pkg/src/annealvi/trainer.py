"""Outer training loop: theta follows the selected estimator, phi follows the ELBO.

Each iteration draws a minibatch, estimates grad_theta log p(x) with the
configured estimator (vae, iwae, ais or mh_hmc), takes an Adam ascent step
on theta, then takes an Adam ascent step on phi using a fresh single-sample
reparameterized ELBO gradient. All randomness for iteration ``i`` comes from
``default_rng([seed, i])`` and the epoch permutation from
``default_rng([seed, epoch, SHUFFLE_STREAM])``, so a run resumed from a
checkpoint replays the uninterrupted trajectory exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import serialization
from .estimators import (
    EstimationError,
    ais_run,
    elbo_and_grad_phi,
    grad_theta_ais,
    grad_theta_iwae,
    grad_theta_mh_hmc,
    grad_theta_vae,
    linear_schedule,
)
from .hmc import DualAveraging, HmcConfig
from .models import build_from_spec

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
SHUFFLE_STREAM = 0x5F
MAX_CONSECUTIVE_SKIPS = 10
ESTIMATORS = ("vae", "iwae", "ais", "mh_hmc")
METRIC_COLUMNS = ("iteration", "epoch", "elbo", "ess_mean", "acceptance_mean", "skipped")


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    estimator: str = "ais"
    K: int = 5
    T: int = 5
    L: int = 5
    step_size: float = 0.1
    lr: float = 1e-3
    batch_size: int = 100
    epochs: int = 1
    seed: int = 0
    final_transition: bool = False
    # fraction of iterations with dual-averaging step-size adaptation; 0 disables
    adapt_fraction: float = 0.0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}, got {self.estimator!r}")
        for name in ("K", "T", "L", "batch_size", "epochs"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not (self.step_size > 0 and self.lr > 0):
            raise ValueError("step_size and lr must be positive")
        if not 0.0 <= self.adapt_fraction <= 1.0:
            raise ValueError("adapt_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    skipped: int = 0

    @classmethod
    def zeros(cls, n: int) -> "OptimizerState":
        return cls(np.zeros(n), np.zeros(n))


ADAM_BETA1, ADAM_BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(state: OptimizerState, params, grad, lr: float):
    """Bias-corrected Adam step in the ascent direction.

    A non-finite gradient leaves parameters and moments untouched and bumps
    ``skipped`` instead of ``step``.
    """
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes must agree")
    if not np.all(np.isfinite(grad)):
        return dataclasses.replace(state, skipped=state.skipped + 1), params.copy()
    step = state.step + 1
    m = ADAM_BETA1 * state.m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1 ** step)
    v_hat = v / (1.0 - ADAM_BETA2 ** step)
    new_params = params + lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return OptimizerState(m, v, step, state.skipped), new_params


@dataclass
class Checkpoint:
    gen_spec: dict
    inf_spec: dict
    theta: np.ndarray
    phi: np.ndarray
    opt_theta: OptimizerState
    opt_phi: OptimizerState
    iteration: int
    epoch: int
    seed: int
    config: dict = field(default_factory=dict)
    step_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    adapter: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def models(self):
        return build_from_spec(self.gen_spec, self.theta), build_from_spec(self.inf_spec, self.phi)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    meta = {
        "version": ckpt.version,
        "gen": ckpt.gen_spec,
        "inf": ckpt.inf_spec,
        "iteration": ckpt.iteration,
        "epoch": ckpt.epoch,
        # every random stream is SeedSequence([seed, iteration]); this pair is the RNG state
        "rng": {"seed": ckpt.seed, "next_iteration": ckpt.iteration},
        "config": ckpt.config,
        "opt_theta": {"step": ckpt.opt_theta.step, "skipped": ckpt.opt_theta.skipped},
        "opt_phi": {"step": ckpt.opt_phi.step, "skipped": ckpt.opt_phi.skipped},
        "adapter": {k: v for k, v in ckpt.adapter.items() if not isinstance(v, np.ndarray)},
    }
    tensors = {
        "meta": serialization.encode_json(meta),
        "theta": ckpt.theta,
        "phi": ckpt.phi,
        "adam_theta.m": ckpt.opt_theta.m,
        "adam_theta.v": ckpt.opt_theta.v,
        "adam_phi.m": ckpt.opt_phi.m,
        "adam_phi.v": ckpt.opt_phi.v,
        "hmc.step_sizes": ckpt.step_sizes,
    }
    for k, v in ckpt.adapter.items():
        if isinstance(v, np.ndarray):
            tensors["adapter." + k] = v
    serialization.save(path, serialization.CHECKPOINT_MAGIC, tensors)


def load_checkpoint(path) -> Checkpoint:
    t = serialization.load(path, serialization.CHECKPOINT_MAGIC)
    meta = serialization.decode_json(t["meta"])
    if meta["version"] != CHECKPOINT_VERSION:
        raise serialization.FormatError(f"unsupported checkpoint version {meta['version']}")
    adapter = dict(meta.get("adapter", {}))
    for name, arr in t.items():
        if name.startswith("adapter."):
            adapter[name[len("adapter."):]] = arr
    return Checkpoint(
        gen_spec=meta["gen"],
        inf_spec=meta["inf"],
        theta=t["theta"],
        phi=t["phi"],
        opt_theta=OptimizerState(t["adam_theta.m"], t["adam_theta.v"], **meta["opt_theta"]),
        opt_phi=OptimizerState(t["adam_phi.m"], t["adam_phi.v"], **meta["opt_phi"]),
        iteration=meta["iteration"],
        epoch=meta["epoch"],
        seed=meta["rng"]["seed"],
        config=meta["config"],
        step_sizes=t["hmc.step_sizes"],
        adapter=adapter,
        version=meta["version"],
    )


def estimate_theta_gradient(config: TrainConfig, gen, inf, x, hmc: HmcConfig, rng):
    """Returns ``(grad_theta, diagnostics)`` for the configured estimator."""
    if config.estimator == "vae":
        est = grad_theta_vae(gen, inf, x, rng)
    elif config.estimator == "iwae":
        est, _ = grad_theta_iwae(gen, inf, x, config.K, rng)
    elif config.estimator == "ais":
        result = ais_run(gen, inf, x, config.K, linear_schedule(config.T), hmc,
                         config.final_transition, rng)
        est = grad_theta_ais(gen, x, result)
    else:
        est = grad_theta_mh_hmc(gen, inf, x, config.K, config.T, hmc, rng)
    return est.grad_theta, est.diagnostics


def _adapter_state(adapter: DualAveraging | None) -> dict:
    if adapter is None:
        return {}
    return {
        "count": adapter.count,
        "mu": adapter.mu,
        "log_eps": adapter.log_eps,
        "log_eps_bar": adapter.log_eps_bar,
        "h_bar": adapter.h_bar,
    }


def _restore_adapter(adapter: DualAveraging, state: dict) -> None:
    adapter.count = int(state["count"])
    for k in ("mu", "log_eps", "log_eps_bar", "h_bar"):
        setattr(adapter, k, np.array(state[k], dtype=float))


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list[dict]
    timings: list[float]


def train(config: TrainConfig, data, gen, inf, resume: Checkpoint | None = None,
          checkpoint_path=None, metrics_path=None, timing_path=None,
          max_iterations: int | None = None, max_seconds: float | None = None) -> TrainResult:
    """Run the configured number of epochs (or stop early at ``max_iterations``
    or a wall-clock budget ``max_seconds``). Models are updated in place."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if n < 1:
        raise ValueError("dataset is empty")
    per_epoch = math.ceil(n / config.batch_size)
    planned = config.epochs * per_epoch
    total = planned if max_iterations is None else min(planned, max_iterations)
    hmc = HmcConfig.constant(config.step_size, config.T, config.L)
    initial_sizes = hmc.step_sizes.copy()
    # temperatures that actually run an HMC transition
    used = np.ones(config.T, dtype=bool)
    if config.estimator == "ais" and not config.final_transition:
        used[-1] = False
    # the warm-up window depends on the planned run only, so resumed runs agree
    adapt_iters = int(round(config.adapt_fraction * planned))
    if config.estimator not in ("ais", "mh_hmc"):
        adapt_iters = 0
    adapter = DualAveraging(initial_sizes) if adapt_iters else None

    opt_theta = OptimizerState.zeros(gen.theta.size)
    opt_phi = OptimizerState.zeros(inf.phi.size)
    start = 0
    if resume is not None:
        gen.theta, inf.phi = resume.theta, resume.phi
        opt_theta, opt_phi = resume.opt_theta, resume.opt_phi
        start = resume.iteration
        if resume.step_sizes.size:
            hmc = HmcConfig(resume.step_sizes, config.L)
        if adapter is not None and resume.adapter:
            _restore_adapter(adapter, resume.adapter)

    metrics, timings = [], []
    t0 = time.perf_counter()
    fh = tfh = None
    if metrics_path is not None:
        fh = open(metrics_path, "a" if resume else "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        if not resume:
            writer.writeheader()
    if timing_path is not None:
        tfh = open(timing_path, "a" if resume else "w")
        if not resume:
            tfh.write("iteration,wall_time\n")

    def snapshot(iteration):
        return Checkpoint(
            gen_spec=gen.spec(), inf_spec=inf.spec(),
            theta=gen.theta.copy(), phi=inf.phi.copy(),
            opt_theta=opt_theta, opt_phi=opt_phi,
            iteration=iteration, epoch=iteration // per_epoch, seed=config.seed,
            config=config.to_dict(), step_sizes=hmc.step_sizes.copy(),
            adapter=_adapter_state(adapter),
        )

    consecutive_skips = 0
    perm_epoch, perm = -1, None
    done = start
    try:
        for it in range(start, total):
            if max_seconds is not None and time.perf_counter() - t0 > max_seconds:
                break
            epoch, pos = divmod(it, per_epoch)
            if epoch != perm_epoch:
                perm = np.random.default_rng([config.seed, epoch, SHUFFLE_STREAM]).permutation(n)
                perm_epoch = epoch
            xb = data[perm[pos * config.batch_size: (pos + 1) * config.batch_size]]
            rng = np.random.default_rng([config.seed, it])

            try:
                g_theta, diag = estimate_theta_gradient(config, gen, inf, xb, hmc, rng)
            except EstimationError as exc:
                log.warning("iteration %d: %s", it, exc)
                g_theta, diag = np.full(gen.theta.size, np.nan), None
            skipped_before = opt_theta.skipped
            opt_theta, gen.theta = adam_step(opt_theta, gen.theta, g_theta, config.lr)
            skipped = opt_theta.skipped > skipped_before
            consecutive_skips = consecutive_skips + 1 if skipped else 0
            if consecutive_skips > MAX_CONSECUTIVE_SKIPS:
                raise TrainingError(f"{consecutive_skips} consecutive non-finite theta-gradients")

            elbo, g_phi = elbo_and_grad_phi(gen, inf, xb, rng)
            opt_phi, inf.phi = adam_step(opt_phi, inf.phi, g_phi, config.lr)

            acc = np.nan
            if diag is not None and diag.acceptance_rates.size:
                rates = diag.acceptance_rates
                if not np.all(np.isnan(rates)):
                    acc = float(np.nanmean(rates))
            if adapter is not None and it < adapt_iters:
                if diag is None:
                    # a failed estimate means the step sizes are far too large
                    rates = np.zeros(config.T)
                rates = np.where(used & ~np.isnan(rates), rates, adapter.target)
                sizes = adapter.update(rates)
                if it == adapt_iters - 1:
                    sizes = adapter.final()
                hmc = HmcConfig(np.where(used, sizes, initial_sizes), config.L)
            row = {
                "iteration": it,
                "epoch": epoch,
                "elbo": elbo,
                "ess_mean": float(np.mean(diag.ess)) if diag is not None else float("nan"),
                "acceptance_mean": acc,
                "skipped": int(skipped),
            }
            metrics.append(row)
            timings.append(time.perf_counter() - t0)
            if fh is not None:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
            if tfh is not None:
                tfh.write(f"{it},{timings[-1]:.6f}\n")
            done = it + 1
            if checkpoint_path is not None and config.checkpoint_every and done % config.checkpoint_every == 0:
                save_checkpoint(snapshot(done), checkpoint_path)
    finally:
        if fh is not None:
            fh.close()
        if tfh is not None:
            tfh.close()
    ckpt = snapshot(done)
    if checkpoint_path is not None:
        save_checkpoint(ckpt, checkpoint_path)
    return TrainResult(ckpt, metrics, timings)
