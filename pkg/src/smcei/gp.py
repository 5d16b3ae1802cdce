"""Gaussian-process core with the mean and variance integrated out analytically.

The model is a stationary Gaussian process with constant but unknown mean
(uniform prior on the real line), unknown process variance (Jeffreys prior
1/sigma^2) and an anisotropic Matern-5/2 correlation parameterized by one
log-range per input dimension.  Both the mean and the variance admit closed
form integration, which leaves a marginal likelihood over the log-ranges
alone and a Student-t posterior predictive with n - 1 degrees of freedom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from .errors import DegenerateData, FactorizationFailure

__all__ = [
    "Domain",
    "EvaluationHistory",
    "HyperParameters",
    "PredictiveDistribution",
    "CorrelationFactor",
    "matern52_correlation",
    "scaled_distance",
    "correlation_matrix",
    "integrated_log_likelihood",
    "predictive",
    "predictive_batch",
]

_SQRT5 = math.sqrt(5.0)
_JITTER_BASE = 1e-10
_JITTER_CAP = 1e-4
# Relative floor under which the residual quadratic form counts as zero.
_QFORM_TOL = 1e-20


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Domain:
    """Axis-aligned box of admissible input points."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", _readonly(np.atleast_1d(self.lower)))
        object.__setattr__(self, "upper", _readonly(np.atleast_1d(self.upper)))
        if self.lower.ndim != 1 or self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must be 1-D vectors of equal length")
        if not (np.isfinite(self.lower).all() and np.isfinite(self.upper).all()):
            raise ValueError("domain bounds must be finite")
        if not (self.lower < self.upper).all():
            raise ValueError("each lower bound must be strictly below its upper bound")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool((x >= self.lower).all() and (x <= self.upper).all())

    def contains_all(self, points: np.ndarray) -> bool:
        points = np.asarray(points, dtype=float)
        return bool((points >= self.lower).all() and (points <= self.upper).all())


@dataclass(frozen=True, eq=False)
class EvaluationHistory:
    """Design points with their noise-free observed values.

    Points must be pairwise distinct: the interpolation model needs a
    nonsingular correlation matrix.  The running best is derived from the
    stored values, so it can never go stale.
    """

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        vals = np.atleast_1d(np.asarray(self.values, dtype=float))
        if pts.ndim != 2 or vals.ndim != 1 or pts.shape[0] != vals.shape[0]:
            raise ValueError("points must be (n, d) and values (n,) with matching n")
        if pts.shape[0] < 1:
            raise ValueError("history needs at least one evaluation")
        if not (np.isfinite(pts).all() and np.isfinite(vals).all()):
            raise ValueError("points and values must be finite")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("evaluation points must be pairwise distinct")
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "values", _readonly(vals))
        key = hash((pts.shape, pts.tobytes(), vals.tobytes()))
        object.__setattr__(self, "_key", key)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def best(self) -> float:
        return float(self.values.max())

    def append(self, x: np.ndarray, value: float) -> "EvaluationHistory":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return EvaluationHistory(
            np.vstack([self.points, x]), np.append(self.values, float(value))
        )

    def extends(self, other: "EvaluationHistory") -> bool:
        """True when this history equals `other` plus exactly one more evaluation."""
        return (
            self.n == other.n + 1
            and np.array_equal(self.points[: other.n], other.points)
            and np.array_equal(self.values[: other.n], other.values)
        )

    def __eq__(self, other):
        return (
            isinstance(other, EvaluationHistory)
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self):
        return self._key


@dataclass(frozen=True, eq=False)
class HyperParameters:
    """Per-dimension Matern range parameters, stored on the log scale."""

    log_ranges: np.ndarray

    def __post_init__(self):
        lr = np.atleast_1d(np.asarray(self.log_ranges, dtype=float))
        if lr.ndim != 1 or not np.isfinite(lr).all():
            raise ValueError("log_ranges must be a finite 1-D vector")
        with np.errstate(over="ignore"):
            r = np.exp(lr)
        if not ((r > 0.0).all() and np.isfinite(r).all()):
            raise ValueError("exp(log_ranges) must be strictly positive and finite")
        object.__setattr__(self, "log_ranges", _readonly(lr))
        object.__setattr__(self, "_key", hash(lr.tobytes()))

    @property
    def dim(self) -> int:
        return self.log_ranges.size

    @property
    def ranges(self) -> np.ndarray:
        return np.exp(self.log_ranges)

    def __eq__(self, other):
        return isinstance(other, HyperParameters) and np.array_equal(
            self.log_ranges, other.log_ranges
        )

    def __hash__(self):
        return self._key


@dataclass(frozen=True)
class PredictiveDistribution:
    """Student-t summary of the value at one point: location, scale, dof.

    dof = n - 1 after the analytic integration; math.inf marks the
    known-variance (Gaussian) variant used by the plug-in baseline.
    """

    location: float
    scale: float
    dof: float

    def __post_init__(self):
        if not (self.scale >= 0.0):
            raise ValueError("scale must be nonnegative")
        if not (self.dof > 0.0):
            raise ValueError("dof must be positive")


def matern52_correlation(h):
    """Matern correlation with regularity 5/2 at scaled distance h >= 0.

    r(h) = (1 + sqrt(5) h + (5/3) h^2) exp(-sqrt(5) h)
    """
    h = np.asarray(h, dtype=float)
    out = (1.0 + _SQRT5 * h + (5.0 / 3.0) * h * h) * np.exp(-_SQRT5 * h)
    return out if out.ndim else float(out)


def _correlation_from_sq(sq: np.ndarray) -> np.ndarray:
    """Matern-5/2 correlation from squared scaled distances, reusing buffers.

    Overwrites `sq`; callers must own the array.
    """
    h = np.sqrt(sq)
    sq *= 5.0 / 3.0
    sq += 1.0
    h *= _SQRT5
    sq += h
    np.negative(h, out=h)
    np.exp(h, out=h)
    sq *= h
    return sq


def scaled_distance(x1, x2, theta: HyperParameters) -> float:
    """Anisotropic distance: each coordinate difference divided by its range."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    z = (x1 - x2) / theta.ranges
    return float(np.sqrt(np.dot(z, z)))


def _cross_sq_distance(a: np.ndarray, b: np.ndarray, theta: HyperParameters) -> np.ndarray:
    """Squared scaled distances between rows of a (n, d) and b (m, d) -> (n, m)."""
    inv = 1.0 / theta.ranges
    out = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        diff = (a[:, k, None] - b[None, :, k]) * inv[k]
        out += diff * diff
    return out


def sq_diff_stack(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences (d, n, m), reusable across range values."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a.shape[1]
    out = np.empty((d, a.shape[0], b.shape[0]))
    for k in range(d):
        diff = a[:, k, None] - b[None, :, k]
        out[k] = diff * diff
    return out


@dataclass(frozen=True, eq=False)
class CorrelationFactor:
    """Lower-triangular Cholesky factor of R + jitter * I."""

    lower: np.ndarray
    jitter: float


def correlation_matrix(history: EvaluationHistory, theta: HyperParameters) -> CorrelationFactor:
    """Factorize the Matern-5/2 correlation matrix of the design.

    Jitter starts at 1e-10 * n (the correlation matrix has unit diagonal) and
    escalates tenfold until the Cholesky succeeds or the 1e-4 cap is passed.
    Unit off-diagonal correlations mean two design points are numerically
    indistinguishable under theta; no jitter can repair that, so the cap is
    reported immediately.
    """
    pts = history.points
    n = history.n
    sq = _cross_sq_distance(pts, pts, theta)
    R = matern52_correlation(np.sqrt(sq))
    if n > 1:
        off = R[~np.eye(n, dtype=bool)]
        if off.max() >= 1.0 - 4.0 * np.finfo(float).eps:
            raise FactorizationFailure(
                "correlation matrix singular at jitter cap: design points are "
                "numerically indistinguishable under the given ranges"
            )
    jitter = _JITTER_BASE * n
    eye = np.eye(n)
    while jitter <= _JITTER_CAP:
        try:
            L = cholesky(R + jitter * eye, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter *= 10.0
            continue
        diag = np.diagonal(L)
        if np.isfinite(diag).all() and (diag > 0.0).all():
            return CorrelationFactor(lower=_readonly(L), jitter=jitter)
        jitter *= 10.0
    raise FactorizationFailure(
        f"correlation matrix singular at jitter cap ({_JITTER_CAP:g}) for n={n}"
    )


@dataclass(frozen=True, eq=False)
class _PosteriorState:
    # Quantities shared by the marginal likelihood and every predictive query.
    factor: CorrelationFactor
    r_inv_ones: np.ndarray     # R^{-1} 1
    r_inv_resid: np.ndarray    # R^{-1} (y - mean_hat 1)
    proj_basis: np.ndarray     # [r_inv_resid, r_inv_ones] as one (n, 2) block
    ones_quad: float           # 1' R^{-1} 1
    mean_hat: float            # generalized least-squares mean
    q_form: float              # residual quadratic form
    sigma2_hat: float          # q_form / (n - 1)
    log_likelihood: float


@lru_cache(maxsize=512)
def _posterior_state(history: EvaluationHistory, theta: HyperParameters) -> _PosteriorState:
    n = history.n
    if n < 2:
        raise ValueError("analytic integration of mean and variance needs n >= 2")
    factor = correlation_matrix(history, theta)
    L = factor.lower
    y = history.values
    ones = np.ones(n)
    # R^{-1} v via two triangular solves.
    half = solve_triangular(L, np.column_stack([ones, y]), lower=True, check_finite=False)
    full = solve_triangular(L.T, half, lower=False, check_finite=False)
    r_inv_ones, r_inv_y = full[:, 0], full[:, 1]
    ones_quad = float(ones @ r_inv_ones)
    mean_hat = float(ones @ r_inv_y) / ones_quad
    resid = y - mean_hat
    r_inv_resid = r_inv_y - mean_hat * r_inv_ones
    q_form = float(resid @ r_inv_resid)
    if q_form <= _QFORM_TOL * max(1.0, float(y @ y)):
        raise DegenerateData(
            "all observations are identical: no scale information in the data"
        )
    log_det = 2.0 * float(np.log(np.diagonal(L)).sum())
    loglik = -0.5 * log_det - 0.5 * math.log(ones_quad) - 0.5 * (n - 1) * math.log(q_form)
    return _PosteriorState(
        factor=factor,
        r_inv_ones=_readonly(r_inv_ones),
        r_inv_resid=_readonly(r_inv_resid),
        proj_basis=_readonly(np.column_stack([r_inv_resid, r_inv_ones])),
        ones_quad=ones_quad,
        mean_hat=mean_hat,
        q_form=q_form,
        sigma2_hat=q_form / (n - 1),
        log_likelihood=loglik,
    )


def integrated_log_likelihood(history: EvaluationHistory, theta: HyperParameters) -> float:
    """Marginal log-likelihood of the ranges, mean and variance integrated out.

    Up to an additive constant independent of theta:

        -1/2 log|R| - 1/2 log(1' R^{-1} 1) - (n-1)/2 log(Q)

    with Q the residual quadratic form around the generalized least-squares
    mean.  Differences of this value across theta are exact log posterior
    ratios under any prior on the ranges.
    """
    return _posterior_state(history, theta).log_likelihood


def predictive_batch(
    points: np.ndarray,
    history: EvaluationHistory,
    theta: HyperParameters,
    *,
    fixed_variance: float | None = None,
    sq_diffs: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Predictive location and scale at many points -> (loc, scale, dof).

    `sq_diffs` may carry precomputed per-dimension squared differences between
    the design and the query points (see `sq_diff_stack`) so callers that
    sweep many range vectors over one fixed candidate set skip the repeated
    coordinate arithmetic.

    Passing `fixed_variance` replaces the Jeffreys-integrated variance with a
    known value; the result is then Gaussian (dof = inf).
    """
    state = _posterior_state(history, theta)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if sq_diffs is None:
        sq = _cross_sq_distance(history.points, points, theta)
    else:
        inv2 = 1.0 / np.square(theta.ranges)
        d = sq_diffs.shape[0]
        sq = (inv2 @ sq_diffs.reshape(d, -1)).reshape(sq_diffs.shape[1:])
    # Detect exact design-point coincidences before the buffer is reused.
    hits = np.nonzero(sq == 0.0) if sq.size and sq.min() == 0.0 else None
    rx = _correlation_from_sq(sq)

    proj = rx.T @ state.proj_basis
    loc = state.mean_hat + proj[:, 0]
    ones_cross = proj[:, 1]
    half = solve_triangular(state.factor.lower, rx, lower=True, check_finite=False)
    r_quad = np.einsum("ij,ij->j", half, half)
    base = 1.0 - r_quad + np.square(1.0 - ones_cross) / state.ones_quad
    np.clip(base, 0.0, None, out=base)
    if fixed_variance is None:
        scale = np.sqrt(state.sigma2_hat * base)
        dof = float(history.n - 1)
    else:
        if not fixed_variance > 0.0:
            raise ValueError("fixed_variance must be positive")
        scale = np.sqrt(fixed_variance * base)
        dof = math.inf

    # Noise-free interpolation is exact at design points; enforce it so that
    # jitter never leaks into the predictive there.
    if hits is not None:
        hit_design, hit_query = hits
        loc[hit_query] = history.values[hit_design]
        scale[hit_query] = 0.0
    return loc, scale, dof


def predictive(
    x: np.ndarray,
    history: EvaluationHistory,
    theta: HyperParameters,
    *,
    fixed_variance: float | None = None,
) -> PredictiveDistribution:
    """Posterior predictive of the process value at a single point."""
    loc, scale, dof = predictive_batch(
        np.asarray(x, dtype=float).reshape(1, -1),
        history,
        theta,
        fixed_variance=fixed_variance,
    )
    return PredictiveDistribution(location=float(loc[0]), scale=float(scale[0]), dof=dof)


def clear_posterior_cache() -> None:
    """Drop memoized factorizations (mainly for long-lived processes and tests)."""
    _posterior_state.cache_clear()
