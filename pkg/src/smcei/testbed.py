"""Test objectives, maximin Latin hypercube designs and seeded streams."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .errors import OutOfDomain
from .gp import Domain

__all__ = [
    "TestFunction",
    "TEST_FUNCTIONS",
    "branin_max",
    "hartmann6_logmax",
    "maximin_lhs",
    "split_stream",
]


def split_stream(seed: int, label: str) -> np.random.Generator:
    """Deterministic child generator for a (seed, label) pair.

    Distinct labels give statistically independent streams, independent of
    sibling consumption order; identical pairs reproduce bit-identically.
    """
    digest = hashlib.sha256(repr((int(seed), str(label))).encode()).digest()
    return np.random.default_rng(np.random.SeedSequence(int.from_bytes(digest, "little")))


@dataclass(frozen=True, eq=False)
class TestFunction:
    name: str
    domain: Domain
    evaluate: Callable[[np.ndarray], float]
    known_max: float


_BRANIN_DOMAIN = Domain(np.array([-5.0, 0.0]), np.array([10.0, 15.0]))
_BRANIN_B = 5.1 / (4.0 * math.pi**2)
_BRANIN_C = 5.0 / math.pi
_BRANIN_T = 1.0 / (8.0 * math.pi)


def branin_max(x: np.ndarray) -> float:
    """Negated Branin function on [-5, 10] x [0, 15]; three global maxima at
    -0.397887 (near (-pi, 12.275), (pi, 2.275) and (9.42478, 2.475))."""
    x = np.asarray(x, dtype=float)
    if not _BRANIN_DOMAIN.contains(x):
        raise OutOfDomain(f"branin input {x} outside [-5,10]x[0,15]")
    x1, x2 = float(x[0]), float(x[1])
    value = (
        (x2 - _BRANIN_B * x1 * x1 + _BRANIN_C * x1 - 6.0) ** 2
        + 10.0 * (1.0 - _BRANIN_T) * math.cos(x1)
        + 10.0
    )
    return -value


_HART6_DOMAIN = Domain(np.zeros(6), np.ones(6))
# Standard Hartmann-6 coefficient tables as tabulated in Dixon & Szego,
# "Towards Global Optimisation 2" (1978).
_HART6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HART6_A = np.array(
    [
        [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
        [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
        [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
        [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
    ]
)
_HART6_P = 1e-4 * np.array(
    [
        [1312.0, 1696.0, 5569.0, 124.0, 8283.0, 5886.0],
        [2329.0, 4135.0, 8307.0, 3736.0, 1004.0, 9991.0],
        [2348.0, 1451.0, 3522.0, 2883.0, 3047.0, 6650.0],
        [4047.0, 8828.0, 8732.0, 5743.0, 1091.0, 381.0],
    ]
)


def hartmann6_logmax(x: np.ndarray) -> float:
    """Log of the (positive) four-term Hartmann-6 sum on the unit cube."""
    x = np.asarray(x, dtype=float)
    if not _HART6_DOMAIN.contains(x):
        raise OutOfDomain("hartmann6 input outside the unit cube")
    expo = np.sum(_HART6_A * np.square(x - _HART6_P), axis=1)
    return float(np.log(np.sum(_HART6_ALPHA * np.exp(-expo))))


BRANIN = TestFunction(
    name="branin",
    domain=_BRANIN_DOMAIN,
    evaluate=branin_max,
    known_max=-0.39788735772973816,
)

# Maximum located by multi-start local refinement; H* = 3.3223680114155094.
HARTMANN6_LOG = TestFunction(
    name="hartmann6-log",
    domain=_HART6_DOMAIN,
    evaluate=hartmann6_logmax,
    known_max=1.2006777851323578,
)

TEST_FUNCTIONS: dict[str, TestFunction] = {
    BRANIN.name: BRANIN,
    HARTMANN6_LOG.name: HARTMANN6_LOG,
}


def _lhs_unit(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    sample = np.empty((count, dim))
    for k in range(dim):
        sample[:, k] = (rng.permutation(count) + rng.random(count)) / count
    return sample


def _min_pairwise_distance(points: np.ndarray) -> float:
    if points.shape[0] < 2:
        return math.inf
    dist, _ = cKDTree(points).query(points, k=2)
    return float(dist[:, 1].min())


def maximin_lhs(
    domain: Domain, count: int, rng: np.random.Generator, n_candidates: int = 50
) -> np.ndarray:
    """Latin hypercube scaled to the domain, best of `n_candidates` draws
    under the maximin (minimum pairwise distance) criterion."""
    if count < 1:
        raise ValueError("count must be at least 1")
    best_points = None
    best_score = -math.inf
    for _ in range(n_candidates):
        unit = _lhs_unit(count, domain.dim, rng)
        score = _min_pairwise_distance(unit)
        if score > best_score:
            best_score = score
            best_points = unit
    return domain.lower + best_points * domain.widths
