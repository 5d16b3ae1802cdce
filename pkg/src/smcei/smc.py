"""Particle system over the GP log-range parameters.

One weighted particle cloud tracks the posterior over the ranges as
evaluations accumulate: importance-sample from the prior to start, then
reweight by the likelihood ratio after each new evaluation and, when the
effective sample size degrades, resample and rejuvenate the cloud with an
independent Metropolis-Hastings kernel whose Gaussian proposal is moment
matched to the cloud in log-range space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import AllWeightsZero, DegenerateCloud, DegenerateData, FactorizationFailure
from .gp import Domain, EvaluationHistory, HyperParameters, integrated_log_likelihood

__all__ = [
    "ParticleSet",
    "PriorSpec",
    "MoveResult",
    "init_particles",
    "reweight",
    "effective_sample_size",
    "multinomial_resample",
    "move",
]

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ParticleSet:
    """Weighted hyperparameter particles; weights are normalized to one."""

    thetas: tuple[HyperParameters, ...]
    weights: np.ndarray

    def __post_init__(self):
        thetas = tuple(self.thetas)
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if len(thetas) < 1 or len(thetas) != w.size:
            raise ValueError("need matching, nonempty particles and weights")
        if not np.isfinite(w).all() or (w < 0.0).any():
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("weights must sum to one")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.thetas)

    @property
    def dim(self) -> int:
        return self.thetas[0].dim

    @property
    def log_range_matrix(self) -> np.ndarray:
        return np.array([t.log_ranges for t in self.thetas])


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Independent lognormal priors on the ranges, one pair (mean, sd) per dim."""

    log_range_means: np.ndarray
    log_range_sds: np.ndarray

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.log_range_means, dtype=float))
        s = np.atleast_1d(np.asarray(self.log_range_sds, dtype=float))
        if m.shape != s.shape or m.ndim != 1:
            raise ValueError("means and sds must be 1-D vectors of equal length")
        if not (np.isfinite(m).all() and np.isfinite(s).all() and (s > 0.0).all()):
            raise ValueError("sds must be finite and strictly positive")
        for arr, name in ((m, "log_range_means"), (s, "log_range_sds")):
            arr = arr.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.log_range_means.size

    @classmethod
    def for_domain(cls, domain: Domain, center_fraction: float = 0.5, sd: float = 1.0) -> "PriorSpec":
        """Center each range at a fraction of the domain width, unit log-sd."""
        means = np.log(center_fraction * domain.widths)
        return cls(means, np.full(domain.dim, float(sd)))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `count` log-range vectors."""
        return rng.normal(self.log_range_means, self.log_range_sds, size=(count, self.dim))

    def log_density(self, log_ranges: np.ndarray) -> float:
        """Gaussian log-density in log-range coordinates."""
        z = (np.asarray(log_ranges, dtype=float) - self.log_range_means) / self.log_range_sds
        return float(
            -0.5 * z @ z
            - np.log(self.log_range_sds).sum()
            - 0.5 * self.dim * math.log(2.0 * math.pi)
        )


class MoveResult(NamedTuple):
    particles: ParticleSet
    accept_rate: float


def _log_likelihood_or_neg_inf(history: EvaluationHistory, theta: HyperParameters) -> float:
    try:
        return integrated_log_likelihood(history, theta)
    except (FactorizationFailure, DegenerateData):
        return -math.inf


def _normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    top = log_w.max()
    if not np.isfinite(top):
        raise AllWeightsZero("every particle log-weight underflowed")
    w = np.exp(log_w - top)
    return w / w.sum()


def init_particles(
    prior: PriorSpec, history: EvaluationHistory, count: int, rng: np.random.Generator
) -> ParticleSet:
    """Importance sample from the prior, weighted by the integrated likelihood."""
    if count < 1:
        raise ValueError("need at least one particle")
    if history.n < 3:
        raise ValueError("particle initialization needs at least 3 evaluations")
    draws = prior.sample(count, rng)
    thetas = tuple(HyperParameters(row) for row in draws)
    log_w = np.array([_log_likelihood_or_neg_inf(history, t) for t in thetas])
    return ParticleSet(thetas, _normalize_log_weights(log_w))


def reweight(
    particles: ParticleSet,
    old_history: EvaluationHistory,
    new_history: EvaluationHistory,
) -> ParticleSet:
    """Update weights by the likelihood ratio of the extended history.

    The prior cancels in the posterior ratio, so each particle's log-weight
    shifts by the difference of integrated log-likelihoods.
    """
    if not new_history.extends(old_history):
        raise ValueError("new history must extend the old one by exactly one evaluation")
    with np.errstate(divide="ignore"):
        log_w = np.log(particles.weights)
    delta = np.empty(particles.size)
    for i, theta in enumerate(particles.thetas):
        new = _log_likelihood_or_neg_inf(new_history, theta)
        old = _log_likelihood_or_neg_inf(old_history, theta)
        delta[i] = new - old if np.isfinite(new) and np.isfinite(old) else -math.inf
    return ParticleSet(particles.thetas, _normalize_log_weights(log_w + delta))


def effective_sample_size(particles: ParticleSet) -> float:
    """Kish effective sample size 1 / sum(w^2), between 1 and the cloud size."""
    return float(1.0 / np.square(particles.weights).sum())


def multinomial_resample(particles: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Draw a fresh equally weighted cloud from the categorical weight law."""
    idx = rng.choice(particles.size, size=particles.size, p=particles.weights)
    thetas = tuple(particles.thetas[i] for i in idx)
    return ParticleSet(thetas, np.full(particles.size, 1.0 / particles.size))


def _proposal_log_density(cloud: np.ndarray, mean: np.ndarray, chol_lower: np.ndarray) -> np.ndarray:
    z = solve_triangular(chol_lower, (cloud - mean).T, lower=True, check_finite=False)
    log_det = np.log(np.diagonal(chol_lower)).sum()
    d = mean.size
    return -0.5 * np.einsum("ij,ij->j", z, z) - log_det - 0.5 * d * math.log(2.0 * math.pi)


def _independent_mh(
    cloud: np.ndarray,
    log_target,
    mean: np.ndarray,
    chol_lower: np.ndarray,
    rng: np.random.Generator,
    sweeps: int,
) -> tuple[np.ndarray, int]:
    """Run `sweeps` independent-proposal MH passes; returns (cloud, accepted)."""
    count = cloud.shape[0]
    cur_target = np.array([log_target(row) for row in cloud])
    cur_prop = _proposal_log_density(cloud, mean, chol_lower)
    accepted = 0
    for _ in range(sweeps):
        draws = mean + rng.standard_normal(cloud.shape) @ chol_lower.T
        new_prop = _proposal_log_density(draws, mean, chol_lower)
        log_u = np.log(rng.random(count))
        for i in range(count):
            new_target = log_target(draws[i])
            log_ratio = (new_target - new_prop[i]) - (cur_target[i] - cur_prop[i])
            if log_u[i] < log_ratio:
                cloud[i] = draws[i]
                cur_target[i] = new_target
                cur_prop[i] = new_prop[i]
                accepted += 1
    return cloud, accepted


def move(
    particles: ParticleSet,
    history: EvaluationHistory,
    prior: PriorSpec,
    rng: np.random.Generator,
    *,
    sweeps: int = 2,
    inflation: float = 1.44,
    cov_floor: float = 1e-6,
) -> MoveResult:
    """Rejuvenate an equally weighted cloud with independent MH sweeps.

    The proposal is a Gaussian in log-range space, moment matched to the
    cloud, covariance inflated by `inflation` and floored by `cov_floor`
    times the identity.  The target is prior times integrated likelihood, so
    the posterior over the ranges is invariant under the kernel.
    """
    w = particles.weights
    if w.max() - w.min() > _WEIGHT_TOL:
        raise ValueError("move expects an equally weighted cloud (resample first)")
    cloud = particles.log_range_matrix
    mean = cloud.mean(axis=0)
    centered = cloud - mean
    cov = (centered.T @ centered) / cloud.shape[0]
    cov = inflation * cov + cov_floor * np.eye(particles.dim)
    try:
        chol_lower = cholesky(cov, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        raise DegenerateCloud("particle cloud covariance is singular") from None
    if not (np.isfinite(np.diagonal(chol_lower)).all() and (np.diagonal(chol_lower) > 0).all()):
        raise DegenerateCloud("particle cloud covariance is singular")

    def log_target(log_ranges: np.ndarray) -> float:
        try:
            theta = HyperParameters(log_ranges)
        except ValueError:
            return -math.inf
        like = _log_likelihood_or_neg_inf(history, theta)
        if not np.isfinite(like):
            return -math.inf
        return prior.log_density(log_ranges) + like

    moved, accepted = _independent_mh(cloud, log_target, mean, chol_lower, rng, sweeps)
    thetas = tuple(HyperParameters(row) for row in moved)
    return MoveResult(
        particles=ParticleSet(thetas, particles.weights),
        accept_rate=accepted / (sweeps * particles.size),
    )
