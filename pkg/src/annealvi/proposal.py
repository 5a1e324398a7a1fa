"""Implicit proposals defined by resampling IS or AIS particles.

A draw from q_IS (or q_AIS) runs a full K-particle importance sampler (or
AIS run) and returns one particle picked by its normalized weight. The
matched-compute experiment compares how well the two implicit proposals
approximate a correlated 2-D Gaussian when IS gets ``K = L * K' * T``
particles and AIS gets ``K'``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .estimators import ais_run, linear_schedule, normalize_log_weights, TemperatureSchedule
from .hmc import HmcConfig
from .models import CorrelatedGaussianTarget, LinearGaussianEncoder


@dataclass
class ImplicitProposalSpec:
    mode: str
    K: int
    schedule: TemperatureSchedule | None = None
    hmc: HmcConfig | None = None
    final_transition: bool = False

    def __post_init__(self):
        self.mode = self.mode.upper()
        if self.mode not in ("IS", "AIS"):
            raise ValueError(f"mode must be IS or AIS, got {self.mode!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        has_ais = self.schedule is not None and self.hmc is not None
        if (self.mode == "AIS") != has_ais:
            raise ValueError("schedule and hmc are required for AIS and only for AIS")

    def budget(self) -> int:
        """Joint-density/gradient evaluations charged per draw."""
        if self.mode == "IS":
            return self.K
        n_transitions = self.schedule.T if self.final_transition else self.schedule.T - 1
        return self.K * self.hmc.leapfrog_steps * max(n_transitions, 1)


def _categorical(weights, rng):
    """One index per row of ``weights`` (rows sum to one)."""
    u = rng.random(weights.shape[:-1] + (1,))
    cdf = np.cumsum(weights, axis=-1)
    idx = np.sum(cdf < u * cdf[..., -1:], axis=-1)
    return np.minimum(idx, weights.shape[-1] - 1)


def sample_implicit(spec: ImplicitProposalSpec, target, base, rng, n=None, x=None):
    """Draw from q_IS or q_AIS.

    Returns one latent vector, or ``(n, dim_z)`` independent draws when ``n``
    is given (each draw uses its own K particles).
    """
    x = np.zeros(target.dim_x) if x is None else np.asarray(x, dtype=float)
    X = x if n is None else np.broadcast_to(x, (n, x.shape[-1]))
    if spec.mode == "IS":
        xk = X[..., None, :]
        eps = rng.standard_normal(X.shape[:-1] + (spec.K, base.dim_z))
        z = base.sample(xk, eps)
        log_w = target.log_joint(xk, z) - base.log_density(xk, z)
        weights = normalize_log_weights(log_w)
    else:
        result = ais_run(target, base, X, spec.K, spec.schedule, spec.hmc,
                         spec.final_transition, rng)
        z, weights = result.samples, result.normalized_weights
    j = _categorical(weights, rng)
    return np.take_along_axis(z, j[..., None, None], axis=-2)[..., 0, :]


def optimal_factorized_gaussian(target: CorrelatedGaussianTarget):
    """Mean and variances of the factorized Gaussian minimizing KL(q || target)."""
    return target.mean.copy(), 1.0 / np.diag(target.precision)


def gaussian_kl(mean0, cov0, mean1, cov1) -> float:
    """KL(N(mean0, cov0) || N(mean1, cov1)) in nats."""
    d = mean0.shape[0]
    prec1 = np.linalg.inv(cov1)
    diff = mean1 - mean0
    _, logdet0 = np.linalg.slogdet(cov0)
    _, logdet1 = np.linalg.slogdet(cov1)
    return 0.5 * float(np.trace(prec1 @ cov0) + diff @ prec1 @ diff - d + logdet1 - logdet0)


@dataclass
class DivergenceReport:
    budget: int
    mean: np.ndarray
    covariance: np.ndarray
    kl_to_target: float


def gaussian_fit_kl(samples, target: CorrelatedGaussianTarget, budget: int = 0) -> DivergenceReport:
    """Fit a Gaussian by sample moments and score KL(fit || target)."""
    samples = np.asarray(samples, dtype=float)
    n, d = samples.shape
    if n < d + 1:
        raise ValueError(f"need at least {d + 1} samples to fit a {d}-D Gaussian")
    mean = samples.mean(axis=0)
    cov = np.cov(samples, rowvar=False)
    eig = np.linalg.eigvalsh(cov)
    if eig[0] <= 1e-12 * max(eig[-1], 1e-300):
        raise ValueError("fitted covariance is singular")
    kl = max(gaussian_kl(mean, cov, target.mean, target.covariance), 0.0)
    return DivergenceReport(budget, mean, cov, kl)


FIG1_COLUMNS = ("mode", "budget", "K", "T", "L", "kl_nats", "replicate")


def fig1_experiment(rho: float = 0.95, budgets: Iterable[int] = (60, 300, 3000),
                    L: int = 5, T: int = 6, step_size: float = 0.25,
                    n_draws: int = 2000, replicates: int = 20, seed: int = 0):
    """Matched-compute comparison of q_IS and q_AIS on a correlated Gaussian.

    IS uses ``K = budget`` particles; AIS uses ``K = budget / (L T)`` chains
    on a linear schedule with an HMC transition at every one of the T
    temperatures (so each chain costs L T evaluations). Each replicate fits a
    Gaussian to ``n_draws`` implicit-proposal draws. Returns a list of row
    dicts with keys :data:`FIG1_COLUMNS`.
    """
    budgets = [int(b) for b in budgets]
    for b in budgets:
        if b < 1 or b % (L * T):
            raise ValueError(f"budget {b} is not a positive multiple of L*T = {L * T}")
    target = CorrelatedGaussianTarget.from_rho(rho)
    mean, var = optimal_factorized_gaussian(target)
    base = LinearGaussianEncoder.constant(target.dim_x, mean, var)
    schedule = linear_schedule(T)
    hmc = HmcConfig.constant(step_size, T, L)
    rows = []
    for rep in range(replicates):
        for b in budgets:
            specs = [
                ImplicitProposalSpec("IS", b),
                ImplicitProposalSpec("AIS", b // (L * T), schedule, hmc, final_transition=True),
            ]
            for spec in specs:
                rng = np.random.default_rng([seed, rep, b, 0 if spec.mode == "IS" else 1])
                draws = sample_implicit(spec, target, base, rng, n=n_draws)
                report = gaussian_fit_kl(draws, target, budget=b)
                rows.append({
                    "mode": spec.mode,
                    "budget": b,
                    "K": spec.K,
                    "T": T if spec.mode == "AIS" else 1,
                    "L": L if spec.mode == "AIS" else 0,
                    "kl_nats": report.kl_to_target,
                    "replicate": rep,
                })
    return rows


def summarize_fig1(rows) -> dict[tuple[str, int], tuple[float, float]]:
    """(mode, budget) -> (mean KL, standard error over replicates)."""
    groups: dict[tuple[str, int], list[float]] = {}
    for r in rows:
        groups.setdefault((r["mode"], r["budget"]), []).append(r["kl_nats"])
    out = {}
    for key, vals in groups.items():
        v = np.asarray(vals)
        se = v.std(ddof=1) / math.sqrt(v.size) if v.size > 1 else float("nan")
        out[key] = (float(v.mean()), float(se))
    return out


def write_fig1_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FIG1_COLUMNS)
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "kl_nats": repr(float(r["kl_nats"]))})
