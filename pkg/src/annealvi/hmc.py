"""HMC transitions over geometric bridges between q_phi(z|x) and p_theta(x, z)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

# |delta H| beyond this marks a divergent trajectory; also keeps exp() finite
DIVERGENCE_THRESHOLD = 1000.0


class DivergentTrajectory(FloatingPointError):
    pass


@dataclass
class HmcConfig:
    """Per-temperature leapfrog step sizes (index t-1 for beta_t) and trajectory length."""

    step_sizes: np.ndarray
    leapfrog_steps: int = 5

    def __post_init__(self):
        self.step_sizes = np.atleast_1d(np.asarray(self.step_sizes, dtype=float))
        if self.step_sizes.ndim != 1 or np.any(~(self.step_sizes > 0)):
            raise ValueError("step sizes must be a 1-D sequence of positive reals")
        if int(self.leapfrog_steps) != self.leapfrog_steps or self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be an integer >= 1")
        self.leapfrog_steps = int(self.leapfrog_steps)

    @classmethod
    def constant(cls, step_size: float, n_temperatures: int, leapfrog_steps: int = 5):
        return cls(np.full(n_temperatures, float(step_size)), leapfrog_steps)

    @property
    def n_temperatures(self) -> int:
        return len(self.step_sizes)

    def step_size(self, t: int) -> float:
        """Step size used at inverse temperature beta_t, t = 1..T."""
        return float(self.step_sizes[t - 1])


@dataclass
class TemperedPotential:
    """f_beta(z) = q_phi(z|x)^(1-beta) p_theta(x, z)^beta; the HMC potential is -log f_beta."""

    gen: object
    inf: object
    x: np.ndarray
    beta: float

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")

    def components(self, z):
        """``(log p, grad log p, log q, grad log q)`` at z."""
        lp, gp = self.gen.log_joint_and_grad_z(self.x, z)
        lq, gq = self.inf.log_density_and_grad_z(self.x, z)
        return lp, gp, lq, gq

    def combine(self, lp, gp, lq, gq):
        b = self.beta
        return (1.0 - b) * lq + b * lp, (1.0 - b) * gq + b * gp

    def log_density_and_grad(self, z):
        return self.combine(*self.components(z))

    def grad(self, z):
        b = self.beta
        gq = self.inf.log_density_and_grad_z(self.x, z)[1]
        if b == 0.0:
            return gq
        return (1.0 - b) * gq + b * self.gen.grad_z_log_joint(self.x, z)


def tempered_log_density(pot: TemperedPotential, z):
    """Value and z-gradient of ``(1-beta) log q_phi(z|x) + beta log p_theta(x, z)``."""
    return pot.log_density_and_grad(z)


def _integrate(log_f_and_grad, z, p, eps, n_steps, grad, grad_only=None):
    """Leapfrog on H = -log f(z) + |p|^2/2. Returns final (z, p, log f, grad).

    ``grad_only`` skips the density value at intermediate positions.
    """
    eps = np.asarray(eps, dtype=float)
    if eps.ndim:
        eps = eps[..., None]
    p = p + 0.5 * eps * grad
    for i in range(n_steps):
        z = z + eps * p
        if i < n_steps - 1:
            grad = grad_only(z) if grad_only is not None else log_f_and_grad(z)[1]
            p = p + eps * grad
        else:
            log_f, grad = log_f_and_grad(z)
    p = p + 0.5 * eps * grad
    return z, p, log_f, grad


def leapfrog(grad_U: Callable, z0, p0, eps: float, L: int):
    """Leapfrog integration for potential U with gradient ``grad_U``.

    Half momentum step, ``L`` position steps with interleaved full momentum
    steps, final half momentum step. Raises :class:`DivergentTrajectory` if a
    gradient goes non-finite.
    """
    if int(L) != L or L < 1:
        raise ValueError("L must be an integer >= 1")
    if eps < 0:
        raise ValueError("eps must be non-negative")

    def force(z):
        g = -np.asarray(grad_U(z), dtype=float)
        if not np.all(np.isfinite(g)):
            raise DivergentTrajectory("non-finite gradient during leapfrog")
        return None, g

    z0 = np.asarray(z0, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    _, g0 = force(z0)
    zL, pL, _, _ = _integrate(force, z0, p0, eps, int(L), g0)
    return zL, pL


class HmcStep(NamedTuple):
    z: np.ndarray
    accepted: np.ndarray
    delta_h: np.ndarray
    divergent: np.ndarray


def hmc_step(pot, z, eps, L, rng, current=None) -> HmcStep:
    """One Metropolis-corrected HMC transition leaving ``pot`` invariant.

    ``z`` may hold many independent chains along its leading axes. ``pot``
    needs a ``log_density_and_grad(z)`` method. ``current`` optionally passes
    the already-computed ``(log f, grad)`` at z. Momentum is drawn before the
    acceptance uniforms, both from ``rng``.
    """
    z = np.asarray(z, dtype=float)
    if current is None:
        current = pot.log_density_and_grad(z)
    log_f0, grad0 = current
    p0 = rng.standard_normal(z.shape)
    log_u = np.log(rng.random(z.shape[:-1]))
    with np.errstate(all="ignore"):
        z1, p1, log_f1, _ = _integrate(pot.log_density_and_grad, z, p0, eps, int(L), grad0,
                                        getattr(pot, "grad", None))
        h0 = -log_f0 + 0.5 * np.sum(p0 * p0, axis=-1)
        h1 = -log_f1 + 0.5 * np.sum(p1 * p1, axis=-1)
        delta_h = h1 - h0
        divergent = ~np.isfinite(delta_h) | (np.abs(delta_h) > DIVERGENCE_THRESHOLD)
        divergent |= ~np.all(np.isfinite(z1), axis=-1)
        accepted = ~divergent & (log_u < -delta_h)
    z_new = np.where(accepted[..., None], z1, z)
    return HmcStep(z_new, accepted, delta_h, divergent)


class DualAveraging:
    """Per-temperature dual-averaging step-size adaptation.

    Tracks one log step size per temperature and nudges it toward a target
    acceptance rate. :meth:`final` returns the averaged iterates used once
    warm-up ends.
    """

    def __init__(self, initial_step_sizes, target_accept=0.65, gamma=0.05, t0=10.0, kappa=0.75):
        eps = np.asarray(initial_step_sizes, dtype=float)
        self.mu = np.log(10.0 * eps)
        self.log_eps = np.log(eps)
        self.log_eps_bar = np.zeros_like(eps)
        self.h_bar = np.zeros_like(eps)
        self.count = 0
        self.target = target_accept
        self.gamma, self.t0, self.kappa = gamma, t0, kappa

    def update(self, accept_rates) -> np.ndarray:
        self.count += 1
        m = self.count
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - np.asarray(accept_rates))
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        w = m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return np.exp(self.log_eps)

    def final(self) -> np.ndarray:
        if self.count == 0:
            return np.exp(self.log_eps)
        return np.exp(self.log_eps_bar)
