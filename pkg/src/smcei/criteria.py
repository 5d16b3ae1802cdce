"""Sampling criteria: expected improvement and exceedance probability.

Under the integrated model the predictive is Student-t, so both criteria
are evaluated with Student-t tails.  The pdf and cdf are computed from the
regularized incomplete beta function; an infinite dof falls back to the
Gaussian expressions used by the known-variance baseline.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.special import betainc, betaincc, gammaln, ndtr

from .errors import DofTooLow, FactorizationFailure
from .gp import EvaluationHistory, PredictiveDistribution, predictive_batch, sq_diff_stack

__all__ = [
    "student_t_pdf",
    "student_t_cdf",
    "expected_improvement",
    "exceedance_probability",
    "averaged_ei",
    "averaged_ei_batch",
]

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _log_gamma_half_ratio(a: float) -> float:
    """log(Gamma(a + 1/2) / Gamma(a)); series for large a where gammaln cancels."""
    if a < 512.0:
        return float(gammaln(a + 0.5) - gammaln(a))
    inv = 1.0 / a
    series = inv * (-0.125 + inv * (1.0 / 128.0 + inv * (5.0 / 1024.0 - inv * 21.0 / 32768.0)))
    return 0.5 * math.log(a) + math.log1p(series)


def student_t_pdf(x, dof: float):
    """Density of the standard Student-t with `dof` degrees of freedom."""
    x = np.asarray(x, dtype=float)
    if math.isinf(dof):
        out = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return out if out.ndim else float(out)
    log_norm = _log_gamma_half_ratio(0.5 * dof) - 0.5 * math.log(dof * math.pi)
    out = np.exp(log_norm - 0.5 * (dof + 1.0) * np.log1p(x * x / dof))
    return out if out.ndim else float(out)


def student_t_cdf(x, dof: float):
    """Distribution function of the standard Student-t via the incomplete beta.

    The beta parametrization is chosen so its argument is the small ratio:
    x^2/(dof + x^2) near the center (with the complemented function) and
    dof/(dof + x^2) in the far tail, which keeps full relative accuracy in
    both regimes.
    """
    x = np.asarray(x, dtype=float)
    if math.isinf(dof):
        out = ndtr(x)
        return out if out.ndim else float(out)
    x2 = x * x
    center = x2 <= dof
    q = np.where(center, x2 / (dof + x2), 0.5)
    w = np.where(center, 0.5, dof / (dof + x2))
    tail = np.where(
        center,
        0.5 * betaincc(0.5, 0.5 * dof, q),
        0.5 * betainc(0.5 * dof, 0.5, w),
    )
    out = np.where(x <= 0.0, tail, 1.0 - tail)
    return out if out.ndim else float(out)


def _ei_factor(u: np.ndarray, dof: float) -> np.ndarray:
    """E[(Z + u)_+] for standard Student-t (or Gaussian) Z."""
    if math.isinf(dof):
        return u * ndtr(u) + _INV_SQRT_2PI * np.exp(-0.5 * u * u)
    return u * student_t_cdf(u, dof) + ((dof + u * u) / (dof - 1.0)) * student_t_pdf(u, dof)


def ei_values(
    locations: np.ndarray, scales: np.ndarray, dof: float, best: float
) -> np.ndarray:
    """Vectorized expected improvement over `best` for a batch of predictives."""
    if not (math.isinf(dof) or dof > 1.0):
        raise DofTooLow(f"expected improvement needs dof > 1, got {dof}")
    locations = np.asarray(locations, dtype=float)
    scales = np.asarray(scales, dtype=float)
    out = np.maximum(locations - best, 0.0)
    positive = scales > 0.0
    if np.any(positive):
        u = (locations[positive] - best) / scales[positive]
        out[positive] = scales[positive] * _ei_factor(u, dof)
    np.clip(out, 0.0, None, out=out)
    return out


def expected_improvement(pred: PredictiveDistribution, best: float) -> float:
    """Expected gain over `best` when evaluating at a point with this predictive.

    With u = (location - best)/scale and nu = dof:

        EI = scale * ( u T_nu(u) + (nu + u^2)/(nu - 1) t_nu(u) )

    and EI = max(location - best, 0) in the degenerate scale = 0 case.
    """
    value = ei_values(
        np.array([pred.location]), np.array([pred.scale]), pred.dof, float(best)
    )
    return float(value[0])


def exceedance_values(
    locations: np.ndarray, scales: np.ndarray, dof: float, best: float
) -> np.ndarray:
    """Vectorized probability that the process exceeds `best`."""
    locations = np.asarray(locations, dtype=float)
    scales = np.asarray(scales, dtype=float)
    out = (locations > best).astype(float)
    positive = scales > 0.0
    if np.any(positive):
        z = (best - locations[positive]) / scales[positive]
        out[positive] = 1.0 - student_t_cdf(z, dof)
    return out


def exceedance_probability(pred: PredictiveDistribution, best: float) -> float:
    """Probability that the value at the point exceeds the current best."""
    value = exceedance_values(
        np.array([pred.location]), np.array([pred.scale]), pred.dof, float(best)
    )
    return float(value[0])


def averaged_ei_batch(
    points: np.ndarray,
    particles,
    history: EvaluationHistory,
    *,
    use_diff_stack: bool = True,
) -> tuple[np.ndarray, int]:
    """Posterior-averaged EI at many points -> (values, failed_particle_count).

    Computes sum_i w_i EI(x; theta_i) for every row of `points`.  Duplicate
    thetas (common right after resampling) are evaluated once with their
    weights pooled.  A particle whose factorization fails contributes zero
    and is counted.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    best = history.best
    pooled: dict = {}
    for theta, w in zip(particles.thetas, particles.weights):
        entry = pooled.get(theta)
        if entry is None:
            pooled[theta] = [float(w), 1]
        else:
            entry[0] += float(w)
            entry[1] += 1
    diffs = sq_diff_stack(history.points, points) if use_diff_stack else None
    acc = np.zeros(points.shape[0])
    failed = 0
    for theta, (w, count) in pooled.items():
        try:
            loc, scale, dof = predictive_batch(points, history, theta, sq_diffs=diffs)
        except FactorizationFailure:
            failed += count
            logger.warning("particle dropped from averaged EI: %r", theta)
            continue
        if w != 0.0:
            acc += w * ei_values(loc, scale, dof, best)
    return acc, failed


def averaged_ei(x: np.ndarray, particles, history: EvaluationHistory) -> float:
    """Expected improvement averaged over the hyperparameter particles."""
    if history.n < 3:
        raise DofTooLow("averaged EI needs at least 3 evaluations (dof > 1)")
    values, _ = averaged_ei_batch(
        np.asarray(x, dtype=float).reshape(1, -1), particles, history
    )
    return float(values[0])
