"""Central finite-difference checks for the hand-derived gradients."""

from __future__ import annotations

import numpy as np

from .estimators import (
    ais_run,
    elbo_and_grad_phi,
    grad_theta_ais,
    grad_theta_iwae,
    grad_theta_vae,
    linear_schedule,
)
from .hmc import HmcConfig

DEFAULT_STEP = 1e-5


def central_difference(f, v, step=DEFAULT_STEP) -> np.ndarray:
    """Gradient of scalar ``f`` at flat ``v``; the step scales with max(1, |v_i|)."""
    v = np.array(v, dtype=float)
    grad = np.empty_like(v)
    for i in range(v.size):
        h = step * max(1.0, abs(v[i]))
        orig = v[i]
        v[i] = orig + h
        f_plus = f(v)
        v[i] = orig - h
        f_minus = f(v)
        v[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic, numeric) -> float:
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(gen, inf, x, z, eps, step=DEFAULT_STEP) -> dict[str, float]:
    """Relative errors of every gradient path at one point.

    Keys: ``theta`` and ``z`` for log p(x, z), ``q_z`` for log q(z|x), and
    ``phi`` for the reparameterized ELBO with the noise ``eps`` frozen.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    theta0 = gen.theta.copy()

    def f_theta(v):
        gen.theta = v
        out = float(gen.log_joint(x, z))
        gen.theta = theta0
        return out

    errors = {
        "theta": relative_error(gen.grad_theta_log_joint(x, z), central_difference(f_theta, theta0, step)),
        "z": relative_error(
            gen.grad_z_log_joint(x, z),
            central_difference(lambda v: float(gen.log_joint(x, v)), z, step),
        ),
        "q_z": relative_error(
            inf.log_density_and_grad_z(x, z)[1],
            central_difference(lambda v: float(inf.log_density(x, v)), z, step),
        ),
    }

    phi0 = inf.phi.copy()

    def f_phi(v):
        inf.phi = v
        try:
            return elbo_and_grad_phi(gen, inf, x, None, eps=eps)[0]
        finally:
            inf.phi = phi0

    _, g_phi = elbo_and_grad_phi(gen, inf, x, None, eps=eps)
    errors["phi"] = relative_error(g_phi, central_difference(f_phi, phi0, step))
    return errors


def check_reductions(gen, inf, x, K: int, seed) -> dict[str, bool]:
    """Bit-equality of the special cases under a shared seed.

    ``ais_vs_iwae``: AIS with T=1 and no final transition against the
    K-sample importance-weighted gradient. ``iwae_vs_vae``: the
    importance-weighted gradient with K=1 against the single-sample one.
    """
    def rng():
        return np.random.default_rng(seed)

    ais = grad_theta_ais(gen, x, ais_run(gen, inf, x, K, linear_schedule(1),
                                         HmcConfig.constant(0.1, 1), False, rng()))
    iwae, _ = grad_theta_iwae(gen, inf, x, K, rng())
    iwae1, _ = grad_theta_iwae(gen, inf, x, 1, rng())
    vae = grad_theta_vae(gen, inf, x, rng())
    return {
        "ais_vs_iwae": bool(np.array_equal(ais.grad_theta, iwae.grad_theta)),
        "iwae_vs_vae": bool(np.array_equal(iwae1.grad_theta, vae.grad_theta)),
    }
