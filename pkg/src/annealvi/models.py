"""Generative and inference model families with hand-derived gradients.

Array conventions used throughout the package:

* ``x`` has shape ``(..., dim_x)`` and ``z`` has shape ``(..., dim_z)``; the
  leading dimensions broadcast against each other, so a single data vector
  of shape ``(dim_x,)`` can be paired with ``K`` chains ``(K, dim_z)``, and a
  minibatch ``(B, 1, dim_x)`` with ``(B, K, dim_z)``.
* Scalar-valued densities return an array of the broadcast leading shape.
* Parameter gradients are returned as flat vectors. When evaluated on a batch
  they are reduced as ``sum_i weights[i] * grad_i`` so per-sample parameter
  gradients are never materialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Raised when inputs violate a model's shape or domain contract."""


class ParamLayout:
    """Named views into one flat parameter vector."""

    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self.shapes = dict(shapes)
        self.offsets = {}
        offset = 0
        for name, shape in self.shapes.items():
            n = int(np.prod(shape, dtype=np.int64))
            self.offsets[name] = (offset, offset + n)
            offset += n
        self.size = offset

    def unpack(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {
            name: flat[lo:hi].reshape(self.shapes[name])
            for name, (lo, hi) in self.offsets.items()
        }

    def pack(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.size)
        for name, (lo, hi) in self.offsets.items():
            out[lo:hi] = np.asarray(parts[name], dtype=float).ravel()
        return out


def _normal_init(rng, fan_out, fan_in):
    return rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in)


def _weighted(weights, lead_shape):
    if weights is None:
        return np.ones(lead_shape)
    w = np.asarray(weights, dtype=float)
    return np.broadcast_to(w, lead_shape)


def _reduce_outer(a, b):
    """Sum over leading dims of the outer products a[..., i] * b[..., j]."""
    a2 = a.reshape(-1, a.shape[-1])
    b2 = b.reshape(-1, b.shape[-1])
    return a2.T @ b2


def _sum_lead(a):
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


class _Parameterized:
    layout: ParamLayout

    def _set_params(self, attr: str, value) -> None:
        value = np.array(value, dtype=float)
        if value.shape != (self.layout.size,):
            raise ContractError(
                f"expected flat parameter vector of length {self.layout.size}, "
                f"got shape {value.shape}"
            )
        setattr(self, attr, value)

    @property
    def p(self) -> dict[str, np.ndarray]:
        return self.layout.unpack(self._params())

    def _params(self) -> np.ndarray:  # pragma: no cover - overridden
        raise NotImplementedError


class GenerativeModel(_Parameterized):
    """Unnormalized joint density ``log p_theta(x, z)``.

    Subclasses implement :meth:`log_joint`, :meth:`log_joint_and_grad_z` and
    :meth:`grad_theta_log_joint`.
    """

    kind = "generative"
    dim_x: int
    dim_z: int

    @property
    def theta(self) -> np.ndarray:
        return self._theta

    @theta.setter
    def theta(self, value) -> None:
        self._set_params("_theta", value)

    def _params(self):
        return self._theta

    def check(self, x, z):
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim_x:
            raise ContractError(f"x must end in dimension {self.dim_x}, got {x.shape}")
        if z.ndim == 0 or z.shape[-1] != self.dim_z:
            raise ContractError(f"z must end in dimension {self.dim_z}, got {z.shape}")
        try:
            np.broadcast_shapes(x.shape[:-1], z.shape[:-1])
        except ValueError as exc:
            raise ContractError(str(exc)) from None
        return x, z

    def log_joint(self, x, z) -> np.ndarray:
        raise NotImplementedError

    def log_joint_and_grad_z(self, x, z) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def grad_z_log_joint(self, x, z) -> np.ndarray:
        return self.log_joint_and_grad_z(x, z)[1]

    def grad_theta_log_joint(self, x, z, weights=None) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        """Identifying hyperparameters, enough to rebuild the model shell."""
        raise NotImplementedError


def log_std_normal(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return -0.5 * np.sum(z * z, axis=-1) - 0.5 * z.shape[-1] * LOG_2PI


class LinearGaussianModel(GenerativeModel):
    """p(z) = N(0, I), p(x | z) = N(W z + b, sigma_x^2 I).

    Used as the analytic oracle: marginal and posterior are closed form.
    """

    name = "linear_gaussian"

    def __init__(self, dim_x: int, dim_z: int, theta=None):
        if dim_x < 1 or dim_z < 1:
            raise ContractError("dimensions must be positive")
        self.dim_x, self.dim_z = int(dim_x), int(dim_z)
        self.layout = ParamLayout(
            {"W": (self.dim_x, self.dim_z), "b": (self.dim_x,), "log_sigma_x": (1,)}
        )
        self.theta = np.zeros(self.layout.size) if theta is None else theta

    @classmethod
    def from_arrays(cls, W, b, log_sigma_x=0.0):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        model = cls(W.shape[0], W.shape[1])
        model.theta = model.layout.pack({"W": W, "b": b, "log_sigma_x": log_sigma_x})
        return model

    @classmethod
    def init(cls, dim_x, dim_z, rng):
        W = _normal_init(rng, dim_x, dim_z)
        return cls.from_arrays(W, np.zeros(dim_x), 0.0)

    @property
    def W(self):
        return self.p["W"]

    @property
    def b(self):
        return self.p["b"]

    @property
    def sigma2(self) -> float:
        return float(np.exp(2.0 * self.p["log_sigma_x"][0]))

    def spec(self):
        return {"name": self.name, "dim_x": self.dim_x, "dim_z": self.dim_z}

    def _residual(self, x, z):
        p = self.p
        return x - (z @ p["W"].T + p["b"])

    def log_joint(self, x, z):
        x, z = self.check(x, z)
        ls = self.p["log_sigma_x"][0]
        r = self._residual(x, z)
        # same operation order as log_joint_and_grad_z so values agree bitwise
        return (
            log_std_normal(z)
            - 0.5 * np.sum(r * r, axis=-1) * math.exp(-2.0 * ls)
            - self.dim_x * (ls + 0.5 * LOG_2PI)
        )

    def log_joint_and_grad_z(self, x, z):
        x, z = self.check(x, z)
        ls = self.p["log_sigma_x"][0]
        inv_s2 = math.exp(-2.0 * ls)
        r = self._residual(x, z)
        val = (
            log_std_normal(z)
            - 0.5 * np.sum(r * r, axis=-1) * inv_s2
            - self.dim_x * (ls + 0.5 * LOG_2PI)
        )
        grad = -z + (r @ self.p["W"]) * inv_s2
        return val, grad

    def grad_theta_log_joint(self, x, z, weights=None):
        x, z = self.check(x, z)
        ls = self.p["log_sigma_x"][0]
        inv_s2 = math.exp(-2.0 * ls)
        r = self._residual(x, z)
        lead = r.shape[:-1]
        w = _weighted(weights, lead)
        zb = np.broadcast_to(z, lead + (self.dim_z,))
        wr = r * w[..., None]
        return self.layout.pack(
            {
                "W": _reduce_outer(wr, zb) * inv_s2,
                "b": _sum_lead(wr) * inv_s2,
                "log_sigma_x": np.sum(w * (np.sum(r * r, axis=-1) * inv_s2 - self.dim_x)),
            }
        )

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Ancestral samples ``(x, z)`` of shape ``(n, dim_x)``, ``(n, dim_z)``."""
        z = rng.standard_normal((n, self.dim_z))
        noise = rng.standard_normal((n, self.dim_x))
        x = z @ self.W.T + self.b + math.sqrt(self.sigma2) * noise
        return x, z


def lg_marginal_covariance(model: LinearGaussianModel) -> np.ndarray:
    return model.W @ model.W.T + model.sigma2 * np.eye(model.dim_x)


def lg_log_marginal(model: LinearGaussianModel, x) -> np.ndarray:
    """Exact ``log N(x; b, W W^T + sigma_x^2 I)``; vectorized over leading dims of x."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim_x:
        raise ContractError(f"x must end in dimension {model.dim_x}")
    cov = lg_marginal_covariance(model)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - SPD by construction
        raise RuntimeError("marginal covariance is not positive definite") from exc
    r = (x - model.b).reshape(-1, model.dim_x)
    sol = np.linalg.solve(chol, r.T)
    maha = np.sum(sol * sol, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (maha + logdet + model.dim_x * LOG_2PI)
    return out.reshape(x.shape[:-1])


def lg_grad_log_marginal(model: LinearGaussianModel, x) -> np.ndarray:
    """Closed-form theta-gradient of :func:`lg_log_marginal` at one x."""
    x = np.asarray(x, dtype=float)
    cov = lg_marginal_covariance(model)
    prec = np.linalg.inv(cov)
    a = prec @ (x - model.b)
    dcov = 0.5 * (np.outer(a, a) - prec)
    return model.layout.pack(
        {
            "W": 2.0 * dcov @ model.W,
            "b": a,
            "log_sigma_x": 2.0 * model.sigma2 * np.trace(dcov),
        }
    )


def lg_posterior(model: LinearGaussianModel, x) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean (same leading shape as x) and shared covariance."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.dim_x:
        raise ContractError(f"x must end in dimension {model.dim_x}")
    W = model.W
    precision = np.eye(model.dim_z) + W.T @ W / model.sigma2
    cov = np.linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    mean = ((x - model.b) @ W) @ cov / model.sigma2
    return mean, cov


class BernoulliMlpModel(GenerativeModel):
    """Prior N(0, I), one tanh hidden layer, Bernoulli pixels on sigmoid logits."""

    name = "bernoulli_mlp"

    def __init__(self, dim_x: int, dim_z: int = 8, hidden: int = 64, theta=None):
        if min(dim_x, dim_z, hidden) < 1:
            raise ContractError("dimensions must be positive")
        self.dim_x, self.dim_z, self.hidden = int(dim_x), int(dim_z), int(hidden)
        self.layout = ParamLayout(
            {
                "W1": (self.hidden, self.dim_z),
                "b1": (self.hidden,),
                "W2": (self.dim_x, self.hidden),
                "b2": (self.dim_x,),
            }
        )
        self.theta = np.zeros(self.layout.size) if theta is None else theta

    @classmethod
    def init(cls, dim_x, rng, dim_z=8, hidden=64):
        model = cls(dim_x, dim_z, hidden)
        model.theta = model.layout.pack(
            {
                "W1": _normal_init(rng, hidden, dim_z),
                "b1": np.zeros(hidden),
                "W2": _normal_init(rng, dim_x, hidden),
                "b2": np.zeros(dim_x),
            }
        )
        return model

    def spec(self):
        return {
            "name": self.name,
            "dim_x": self.dim_x,
            "dim_z": self.dim_z,
            "hidden": self.hidden,
        }

    def _forward(self, z):
        p = self.p
        z2 = z.reshape(-1, self.dim_z)
        h = np.tanh(z2 @ p["W1"].T + p["b1"])
        logits = h @ p["W2"].T + p["b2"]
        lead = z.shape[:-1]
        return h.reshape(lead + (self.hidden,)), logits.reshape(lead + (self.dim_x,))

    @staticmethod
    def _bernoulli(x, logits, need_grad):
        """Log-likelihood and, optionally, its logit gradient x - sigmoid(l)."""
        # in-place to keep large temporaries down
        e = np.abs(logits)
        np.negative(e, out=e)
        np.exp(e, out=e)
        np.log1p(e, out=e)
        e += np.maximum(logits, 0.0)
        t = x * logits
        t -= e
        loglik = np.sum(t, axis=-1)
        if not need_grad:
            return loglik, None
        return loglik, BernoulliMlpModel._logit_grad(x, logits, out=t)

    @staticmethod
    def _logit_grad(x, logits, out=None):
        g = np.multiply(logits, 0.5, out=out)
        np.tanh(g, out=g)
        g += 1.0
        g *= 0.5
        return np.subtract(x, g, out=out)

    def log_joint(self, x, z):
        x, z = self.check(x, z)
        _, logits = self._forward(z)
        return log_std_normal(z) + self._bernoulli(x, logits, False)[0]

    def log_joint_and_grad_z(self, x, z):
        x, z = self.check(x, z)
        p = self.p
        h, logits = self._forward(z)
        loglik, dl = self._bernoulli(x, logits, True)
        val = log_std_normal(z) + loglik
        dh = (dl.reshape(-1, self.dim_x) @ p["W2"]).reshape(dl.shape[:-1] + (self.hidden,))
        dh *= 1.0 - h * h
        return val, -z + dh @ p["W1"]

    def grad_z_log_joint(self, x, z):
        x, z = self.check(x, z)
        p = self.p
        h, logits = self._forward(z)
        dl = self._logit_grad(x, logits)
        dh = (dl.reshape(-1, self.dim_x) @ p["W2"]).reshape(dl.shape[:-1] + (self.hidden,))
        dh *= 1.0 - h * h
        return -z + dh @ p["W1"]

    def grad_theta_log_joint(self, x, z, weights=None):
        x, z = self.check(x, z)
        p = self.p
        h, logits = self._forward(z)
        _, dl = self._bernoulli(x, logits, True)
        lead = dl.shape[:-1]
        w = _weighted(weights, lead)[..., None]
        dl = dl * w
        hb = np.broadcast_to(h, lead + (self.hidden,))
        zb = np.broadcast_to(z, lead + (self.dim_z,))
        dpre = (dl.reshape(-1, self.dim_x) @ p["W2"]).reshape(lead + (self.hidden,))
        dpre *= 1.0 - hb * hb
        return self.layout.pack(
            {
                "W1": _reduce_outer(dpre, zb),
                "b1": _sum_lead(dpre),
                "W2": _reduce_outer(dl, hb),
                "b2": _sum_lead(dl),
            }
        )

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim_z))
        _, logits = self._forward(z)
        probs = 0.5 * (1.0 + np.tanh(0.5 * logits))
        x = (rng.random(probs.shape) < probs).astype(float)
        return x, z


@dataclass
class CorrelatedGaussianTarget:
    """Normalized 2-D Gaussian target; ``x`` is accepted and ignored."""

    mean: np.ndarray
    covariance: np.ndarray

    dim_x = 1
    dim_z = 2

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        if self.mean.shape != (2,) or self.covariance.shape != (2, 2):
            raise ContractError("target must be 2-dimensional")
        if not np.allclose(self.covariance, self.covariance.T):
            raise ContractError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(self.covariance)) <= 0:
            raise ContractError("covariance must be positive definite")
        self.precision = np.linalg.inv(self.covariance)
        self._logdet = float(np.linalg.slogdet(self.covariance)[1])
        self.theta = np.zeros(0)

    @classmethod
    def from_rho(cls, rho: float, mean=(0.0, 0.0), scales=(1.0, 1.0)):
        if not -1.0 < rho < 1.0:
            raise ContractError("correlation must lie in (-1, 1)")
        s = np.asarray(scales, dtype=float)
        cov = np.array([[s[0] ** 2, rho * s[0] * s[1]], [rho * s[0] * s[1], s[1] ** 2]])
        return cls(np.asarray(mean, dtype=float), cov)

    def log_density(self, z):
        d = np.asarray(z, dtype=float) - self.mean
        maha = np.einsum("...i,ij,...j->...", d, self.precision, d)
        return -0.5 * (maha + self._logdet + 2 * LOG_2PI)

    def log_joint(self, x, z):
        return self.log_density(z)

    def log_joint_and_grad_z(self, x, z):
        z = np.asarray(z, dtype=float)
        return self.log_density(z), -(z - self.mean) @ self.precision

    def grad_z_log_joint(self, x, z):
        return self.log_joint_and_grad_z(x, z)[1]

    def grad_theta_log_joint(self, x, z, weights=None):
        return np.zeros(0)

    def sample(self, n, rng):
        z = rng.multivariate_normal(self.mean, self.covariance, size=n)
        return np.zeros((n, 1)), z


class GaussianEncoder(_Parameterized):
    """Amortized diagonal Gaussian ``q_phi(z | x)``.

    Subclasses map x to ``(mu, log_sigma)`` and back-propagate output
    gradients to the flat ``phi`` vector.
    """

    kind = "inference"
    dim_x: int
    dim_z: int

    @property
    def phi(self) -> np.ndarray:
        return self._phi

    @phi.setter
    def phi(self, value) -> None:
        self._set_params("_phi", value)

    def _params(self):
        return self._phi

    def mean_and_log_scale(self, x) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def backward(self, x, g_mu, g_log_sigma) -> np.ndarray:
        """Vector-Jacobian product: flat phi-gradient summed over leading dims."""
        raise NotImplementedError

    def spec(self) -> dict:
        raise NotImplementedError

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != self.dim_x:
            raise ContractError(f"x must end in dimension {self.dim_x}, got {x.shape}")
        return x

    def sample(self, x, eps) -> np.ndarray:
        """Reparameterized draw ``mu + sigma * eps``."""
        mu, log_sigma = self.mean_and_log_scale(x)
        return mu + np.exp(log_sigma) * eps

    def log_density(self, x, z) -> np.ndarray:
        return self.log_density_and_grad_z(x, z)[0]

    def log_density_and_grad_z(self, x, z):
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim_z:
            raise ContractError(f"z must end in dimension {self.dim_z}, got {z.shape}")
        mu, log_sigma = self.mean_and_log_scale(x)
        inv = np.exp(-log_sigma)
        u = (z - mu) * inv
        val = np.sum(-0.5 * u * u - log_sigma, axis=-1) - 0.5 * self.dim_z * LOG_2PI
        return val, -u * inv


class LinearGaussianEncoder(GaussianEncoder):
    """mu = A x + a, log sigma = C x + c."""

    name = "linear_encoder"

    def __init__(self, dim_x: int, dim_z: int, phi=None):
        self.dim_x, self.dim_z = int(dim_x), int(dim_z)
        self.layout = ParamLayout(
            {
                "A": (self.dim_z, self.dim_x),
                "a": (self.dim_z,),
                "C": (self.dim_z, self.dim_x),
                "c": (self.dim_z,),
            }
        )
        self.phi = np.zeros(self.layout.size) if phi is None else phi

    @classmethod
    def init(cls, dim_x, dim_z, rng):
        enc = cls(dim_x, dim_z)
        p = enc.layout.unpack(enc.phi)
        p["A"][...] = _normal_init(rng, dim_z, dim_x)
        return enc

    @classmethod
    def constant(cls, dim_x, mean, variance):
        """An encoder that ignores x: q(z) = N(mean, diag(variance))."""
        mean = np.asarray(mean, dtype=float)
        enc = cls(dim_x, mean.shape[0])
        enc.phi = enc.layout.pack(
            {
                "A": np.zeros((mean.shape[0], dim_x)),
                "a": mean,
                "C": np.zeros((mean.shape[0], dim_x)),
                "c": 0.5 * np.log(np.broadcast_to(variance, mean.shape)),
            }
        )
        return enc

    def spec(self):
        return {"name": self.name, "dim_x": self.dim_x, "dim_z": self.dim_z}

    def mean_and_log_scale(self, x):
        x = self._check_x(x)
        p = self.p
        return x @ p["A"].T + p["a"], x @ p["C"].T + p["c"]

    def backward(self, x, g_mu, g_log_sigma):
        x = self._check_x(x)
        lead = np.broadcast_shapes(x.shape[:-1], g_mu.shape[:-1], g_log_sigma.shape[:-1])
        xb = np.broadcast_to(x, lead + (self.dim_x,))
        g_mu = np.broadcast_to(g_mu, lead + (self.dim_z,))
        g_ls = np.broadcast_to(g_log_sigma, lead + (self.dim_z,))
        return self.layout.pack(
            {
                "A": _reduce_outer(g_mu, xb),
                "a": _sum_lead(g_mu),
                "C": _reduce_outer(g_ls, xb),
                "c": _sum_lead(g_ls),
            }
        )


class MlpGaussianEncoder(GaussianEncoder):
    """One tanh hidden layer feeding linear mean and log-scale heads."""

    name = "mlp_encoder"

    def __init__(self, dim_x: int, dim_z: int = 8, hidden: int = 64, phi=None):
        self.dim_x, self.dim_z, self.hidden = int(dim_x), int(dim_z), int(hidden)
        self.layout = ParamLayout(
            {
                "V": (self.hidden, self.dim_x),
                "v": (self.hidden,),
                "M": (self.dim_z, self.hidden),
                "m": (self.dim_z,),
                "S": (self.dim_z, self.hidden),
                "s": (self.dim_z,),
            }
        )
        self.phi = np.zeros(self.layout.size) if phi is None else phi

    @classmethod
    def init(cls, dim_x, rng, dim_z=8, hidden=64):
        enc = cls(dim_x, dim_z, hidden)
        p = enc.layout.unpack(enc.phi)
        p["V"][...] = _normal_init(rng, hidden, dim_x)
        p["M"][...] = _normal_init(rng, dim_z, hidden)
        return enc

    def spec(self):
        return {
            "name": self.name,
            "dim_x": self.dim_x,
            "dim_z": self.dim_z,
            "hidden": self.hidden,
        }

    def _hidden(self, x):
        p = self.p
        return np.tanh(x @ p["V"].T + p["v"])

    def mean_and_log_scale(self, x):
        x = self._check_x(x)
        p = self.p
        h = self._hidden(x)
        return h @ p["M"].T + p["m"], h @ p["S"].T + p["s"]

    def backward(self, x, g_mu, g_log_sigma):
        x = self._check_x(x)
        p = self.p
        lead = np.broadcast_shapes(x.shape[:-1], g_mu.shape[:-1], g_log_sigma.shape[:-1])
        xb = np.broadcast_to(x, lead + (self.dim_x,))
        g_mu = np.broadcast_to(g_mu, lead + (self.dim_z,))
        g_ls = np.broadcast_to(g_log_sigma, lead + (self.dim_z,))
        h = self._hidden(xb)
        dpre = (g_mu @ p["M"] + g_ls @ p["S"]) * (1.0 - h * h)
        return self.layout.pack(
            {
                "V": _reduce_outer(dpre, xb),
                "v": _sum_lead(dpre),
                "M": _reduce_outer(g_mu, h),
                "m": _sum_lead(g_mu),
                "S": _reduce_outer(g_ls, h),
                "s": _sum_lead(g_ls),
            }
        )


def lg_optimal_encoder(model: LinearGaussianModel) -> LinearGaussianEncoder:
    """Linear encoder with the exact posterior mean map and the KL(q||p)-optimal
    factorized variances ``1 / diag(precision)``."""
    W, s2 = model.W, model.sigma2
    precision = np.eye(model.dim_z) + W.T @ W / s2
    A = np.linalg.solve(precision, W.T) / s2
    enc = LinearGaussianEncoder(model.dim_x, model.dim_z)
    enc.phi = enc.layout.pack(
        {
            "A": A,
            "a": -A @ model.b,
            "C": np.zeros((model.dim_z, model.dim_x)),
            "c": -0.5 * np.log(np.diag(precision)),
        }
    )
    return enc


GENERATIVE_MODELS = {
    LinearGaussianModel.name: LinearGaussianModel,
    BernoulliMlpModel.name: BernoulliMlpModel,
}
ENCODERS = {
    LinearGaussianEncoder.name: LinearGaussianEncoder,
    MlpGaussianEncoder.name: MlpGaussianEncoder,
}


def build_from_spec(spec: dict, params=None):
    """Rebuild a model or encoder from :meth:`spec` output and a flat vector."""
    spec = dict(spec)
    name = spec.pop("name")
    registry = {**GENERATIVE_MODELS, **ENCODERS}
    if name not in registry:
        raise ContractError(f"unknown model {name!r}")
    obj = registry[name](**spec)
    if params is not None:
        if obj.kind == "generative":
            obj.theta = params
        else:
            obj.phi = params
    return obj
