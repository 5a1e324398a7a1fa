"""Self-normalized gradient estimators for log p_theta(x).

AIS, IWAE, VAE and MH-HMC share one engine: draw chains from q_phi(z|x),
optionally move them through tempered HMC transitions while accumulating
log-weights, then average ``grad_theta log p_theta(x, z_k)`` under the
normalized weights. Samples and weights are treated as constants; no
gradient flows through the annealing path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .hmc import DualAveraging, HmcConfig, TemperedPotential, hmc_step


class EstimationError(RuntimeError):
    """Weights or gradients degenerated beyond recovery."""


@dataclass(frozen=True)
class TemperatureSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        if betas.ndim != 1 or betas.size < 2:
            raise ValueError("a schedule needs at least beta_0 and beta_T")
        if betas[0] != 0.0 or betas[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1")
        if np.any(np.diff(betas) < 0):
            raise ValueError("schedule must be non-decreasing")
        object.__setattr__(self, "betas", betas)

    @property
    def T(self) -> int:
        return self.betas.size - 1

    def reversed(self) -> np.ndarray:
        """Betas from 1 down to 0, for reverse annealing (not a valid forward schedule)."""
        return self.betas[::-1].copy()


def linear_schedule(T: int) -> TemperatureSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    return TemperatureSchedule(np.arange(T + 1) / T)


def mh_hmc_schedule(T: int) -> TemperatureSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    return TemperatureSchedule(np.concatenate([[0.0], np.ones(T)]))


def normalize_log_weights(log_w, axis=-1) -> np.ndarray:
    """Max-subtracted softmax. NaN entries count as zero weight."""
    log_w = np.asarray(log_w, dtype=float)
    log_w = np.where(np.isnan(log_w), -np.inf, log_w)
    top = np.max(log_w, axis=axis, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise EstimationError("no finite log-weight to normalize")
    w = np.exp(log_w - top)
    return w / np.sum(w, axis=axis, keepdims=True)


def effective_sample_size(log_w, axis=-1) -> np.ndarray:
    """(sum w)^2 / sum w^2 evaluated in log space."""
    log_w = np.asarray(log_w, dtype=float)
    return np.exp(2.0 * logsumexp(log_w, axis=axis) - logsumexp(2.0 * log_w, axis=axis))


@dataclass
class AisRunResult:
    samples: np.ndarray
    log_weights: np.ndarray
    normalized_weights: np.ndarray
    acceptance_rates: np.ndarray
    ess: np.ndarray
    divergences: int = 0
    transitions: int = 0
    chain_acceptance: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.log_weights.shape[-1]


@dataclass
class GradientEstimate:
    grad_theta: np.ndarray
    diagnostics: AisRunResult | None = field(default=None, repr=False)


def _initial_samples(inf, x, K, rng):
    x = np.asarray(x, dtype=float)
    xk = x[..., None, :]
    eps = rng.standard_normal(x.shape[:-1] + (K, inf.dim_z))
    return xk, inf.sample(xk, eps)


def _result(z, log_w, accept, divergences, transitions, chain_acceptance=None):
    return AisRunResult(
        samples=z,
        log_weights=log_w,
        normalized_weights=normalize_log_weights(log_w),
        acceptance_rates=accept,
        ess=effective_sample_size(log_w),
        divergences=divergences,
        transitions=transitions,
        chain_acceptance=chain_acceptance,
    )


def anneal(gen, inf, xk, z, betas, hmc: HmcConfig, final_transition, rng):
    """Move chains ``z`` along ``betas`` accumulating AIS log-weights.

    The increment ``(beta_t - beta_{t-1}) [log p - log q]`` is evaluated at
    z^{t-1} once per t; an HMC step at beta_t follows for t < T, and at t = T
    only when ``final_transition``. ``betas`` may run downward (reverse AIS).
    Returns ``(z_final, log_w, acceptance per temperature, per-chain
    acceptance fraction, divergences, transitions)``.
    """
    betas = np.asarray(betas, dtype=float)
    T = betas.size - 1
    if hmc.n_temperatures < T:
        raise ValueError(f"need {T} step sizes, got {hmc.n_temperatures}")
    log_w = np.zeros(z.shape[:-1])
    accept = np.full(T, np.nan)
    chain_accepts = np.zeros(z.shape[:-1])
    n_steps = divergences = transitions = 0
    for t in range(1, T + 1):
        pot = TemperedPotential(gen, inf, xk, betas[t])
        lp, gp, lq, gq = pot.components(z)
        log_w = log_w + (betas[t] - betas[t - 1]) * (lp - lq)
        if t < T or final_transition:
            step = hmc_step(
                pot, z, hmc.step_size(t), hmc.leapfrog_steps, rng,
                current=pot.combine(lp, gp, lq, gq),
            )
            z = step.z
            accept[t - 1] = float(np.mean(step.accepted))
            chain_accepts += step.accepted
            n_steps += 1
            divergences += int(np.sum(step.divergent))
            transitions += step.divergent.size
    chain_acceptance = chain_accepts / n_steps if n_steps else np.full(z.shape[:-1], np.nan)
    if transitions and divergences == transitions:
        raise EstimationError("every HMC transition diverged")
    if np.any(np.all(~np.isfinite(log_w), axis=-1)):
        raise EstimationError("all chains of an example have non-finite log-weights")
    return z, log_w, accept, chain_acceptance, divergences, transitions


def ais_run(gen, inf, x, K: int, schedule: TemperatureSchedule, hmc: HmcConfig,
            final_transition: bool = False, rng=None) -> AisRunResult:
    """K annealed importance samples per data vector.

    ``x`` is ``(dim_x,)`` or a batch ``(..., dim_x)``; results carry a chain
    axis of length K after the batch axes.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    xk, z0 = _initial_samples(inf, x, K, rng)
    z, log_w, accept, chain_acc, div, n = anneal(
        gen, inf, xk, z0, schedule.betas, hmc, final_transition, rng
    )
    return _result(z, log_w, accept, div, n, chain_acc)


def _n_examples(x) -> int:
    return int(np.prod(np.shape(x)[:-1], dtype=np.int64))


def _weighted_grad(gen, x, samples, weights):
    """Mean over examples of sum_k weights_k grad_theta log p(x, z_k)."""
    x = np.asarray(x, dtype=float)
    n = _n_examples(x)
    w = weights if n == 1 else weights / n
    g = gen.grad_theta_log_joint(x[..., None, :], samples, weights=w)
    if not np.all(np.isfinite(g)):
        raise EstimationError("non-finite gradient entries")
    return g


def grad_theta_ais(gen, x, result: AisRunResult) -> GradientEstimate:
    """sum_k w~_k grad_theta log p_theta(x, z_k), averaged over a batch of x."""
    g = _weighted_grad(gen, x, result.samples, result.normalized_weights)
    return GradientEstimate(g, result)


def grad_theta_iwae(gen, inf, x, K: int, rng) -> tuple[GradientEstimate, np.ndarray]:
    """Importance-weighted gradient and the single-run bound log mean(p/q)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    xk, z = _initial_samples(inf, x, K, rng)
    log_w = gen.log_joint(xk, z) - inf.log_density(xk, z)
    result = _result(z, log_w, np.zeros(0), 0, 0)
    bound = logsumexp(log_w, axis=-1) - math.log(K)
    g = _weighted_grad(gen, x, z, result.normalized_weights)
    return GradientEstimate(g, result), bound


def grad_theta_vae(gen, inf, x, rng) -> GradientEstimate:
    """Single-sample ELBO theta-gradient: grad_theta log p(x, z), z ~ q."""
    xk, z = _initial_samples(inf, x, 1, rng)
    log_w = gen.log_joint(xk, z) - inf.log_density(xk, z)
    g = _weighted_grad(gen, x, z, np.ones(log_w.shape))
    return GradientEstimate(g, _result(z, log_w, np.zeros(0), 0, 0))


def grad_theta_mh_hmc(gen, inf, x, K: int, T: int, hmc: HmcConfig, rng) -> GradientEstimate:
    """K chains from q_phi, each moved by T HMC steps on the posterior, averaged uniformly."""
    if K < 1 or T < 0:
        raise ValueError("need K >= 1 and T >= 0")
    xk, z = _initial_samples(inf, x, K, rng)
    log_w = gen.log_joint(xk, z) - inf.log_density(xk, z)
    pot = TemperedPotential(gen, inf, xk, 1.0)
    accept = np.full(T, np.nan)
    chain_accepts = np.zeros(z.shape[:-1])
    div = n = 0
    for t in range(1, T + 1):
        step = hmc_step(pot, z, hmc.step_size(t), hmc.leapfrog_steps, rng)
        z = step.z
        accept[t - 1] = float(np.mean(step.accepted))
        chain_accepts += step.accepted
        div += int(np.sum(step.divergent))
        n += step.divergent.size
    uniform = np.full(z.shape[:-1], 1.0 / K)
    result = AisRunResult(
        samples=z,
        log_weights=log_w,
        normalized_weights=uniform,
        acceptance_rates=accept,
        ess=np.full(z.shape[:-2], float(K)),
        divergences=div,
        transitions=n,
        chain_acceptance=chain_accepts / T if T else np.full(z.shape[:-1], np.nan),
    )
    return GradientEstimate(_weighted_grad(gen, x, z, uniform), result)


def tune_step_sizes(gen, inf, x, K: int, schedule: TemperatureSchedule, hmc: HmcConfig,
                    rng, rounds: int = 20, target_accept: float = 0.65,
                    final_transition: bool = False) -> HmcConfig:
    """Pilot AIS runs with per-temperature dual averaging; returns frozen step sizes.

    Temperatures without an HMC transition keep their initial step size.
    """
    adapter = DualAveraging(hmc.step_sizes, target_accept=target_accept)
    current = hmc
    T = schedule.T
    used = np.zeros(hmc.n_temperatures, dtype=bool)
    used[: T - 1] = True
    used[T - 1] = final_transition
    for _ in range(rounds):
        rates = np.full(hmc.n_temperatures, target_accept)
        try:
            result = ais_run(gen, inf, x, K, schedule, current, final_transition, rng)
            rates[:T][used[:T]] = result.acceptance_rates[used[:T]]
        except EstimationError:
            # a fully divergent pilot run counts as zero acceptance
            rates[used] = 0.0
        current = HmcConfig(adapter.update(rates), hmc.leapfrog_steps)
    return HmcConfig(np.where(used, adapter.final(), hmc.step_sizes), hmc.leapfrog_steps)


def elbo_and_grad_phi(gen, inf, x, rng, eps=None) -> tuple[float, np.ndarray]:
    """Single-sample reparameterized ELBO and its phi-gradient (theta frozen).

    ``eps`` may be supplied to freeze the noise (common random numbers).
    Over a batch of x the ELBO and gradient are averaged.
    """
    x = np.asarray(x, dtype=float)
    if eps is None:
        eps = rng.standard_normal(x.shape[:-1] + (inf.dim_z,))
    mu, log_sigma = inf.mean_and_log_scale(x)
    sigma = np.exp(log_sigma)
    z = mu + sigma * eps
    lp, gp = gen.log_joint_and_grad_z(x, z)
    lq = inf.log_density(x, z)
    elbo = lp - lq
    # the log q term contributes -log sigma only: (z - mu) / sigma == eps is fixed
    g_mu = gp
    g_log_sigma = gp * sigma * eps + 1.0
    n = _n_examples(x)
    grad = inf.backward(x, g_mu, g_log_sigma) / n
    if not (np.all(np.isfinite(grad)) and np.all(np.isfinite(elbo))):
        raise EstimationError("non-finite ELBO or phi-gradient")
    return float(np.mean(elbo)), grad
