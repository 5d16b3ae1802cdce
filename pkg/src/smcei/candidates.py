"""Candidate generation: per-particle populations and the adaptive proposal.

Each hyperparameter particle receives a small population of candidate
points drawn from the current instrumental density; the joint weights make
the pooled cloud target "relevance times posterior", with relevance taken
as the probability of exceeding the running best.  The pooled, weighted
candidate sample is then compressed into a tree-based histogram that serves
as the instrumental density of the next round.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .criteria import exceedance_values
from .errors import EmptySample, FactorizationFailure, OutOfDomain
from .gp import Domain, EvaluationHistory, HyperParameters, predictive_batch
from .smc import ParticleSet

__all__ = [
    "TreeConfig",
    "TreeHistogram",
    "CandidateGrid",
    "fit_tree_histogram",
    "histogram_sample",
    "histogram_density",
    "demarginalize",
]


@dataclass(frozen=True)
class TreeConfig:
    """Construction knobs for the tree histogram."""

    max_leaves: int = 64
    min_leaf_weight: float = 0.01
    mix_uniform: float = 0.1

    def __post_init__(self):
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be at least 1")
        if not 0.0 <= self.min_leaf_weight:
            raise ValueError("min_leaf_weight must be nonnegative")
        if not 0.0 < self.mix_uniform <= 1.0:
            raise ValueError("mix_uniform must lie in (0, 1]")


@dataclass(frozen=True, eq=False)
class _Split:
    dim: int
    value: float
    lower: object
    upper: object


@dataclass(frozen=True, eq=False)
class _Leaf:
    index: int


@dataclass(frozen=True, eq=False)
class TreeHistogram:
    """Piecewise-constant density on a binary partition of the domain.

    Leaf boxes partition the domain exactly; points on a split boundary
    belong to the lower child.  Every leaf mass carries a uniform mixture
    share, so the density is bounded below by mix_uniform / volume(domain)
    and the importance weights that divide by it stay finite.
    """

    domain: Domain
    root: object
    leaf_lower: np.ndarray
    leaf_upper: np.ndarray
    leaf_mass: np.ndarray
    mix_uniform: float

    @classmethod
    def uniform(cls, domain: Domain, mix_uniform: float = 1.0) -> "TreeHistogram":
        """Single-leaf histogram: the uniform density over the domain."""
        return cls(
            domain=domain,
            root=_Leaf(0),
            leaf_lower=domain.lower.reshape(1, -1).copy(),
            leaf_upper=domain.upper.reshape(1, -1).copy(),
            leaf_mass=np.array([1.0]),
            mix_uniform=mix_uniform,
        )

    @property
    def n_leaves(self) -> int:
        return self.leaf_mass.size

    def leaf_indices(self, points: np.ndarray) -> np.ndarray:
        """Index of the leaf containing each row of `points`."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.empty(points.shape[0], dtype=np.intp)
        stack = [(self.root, np.arange(points.shape[0]))]
        while stack:
            node, sel = stack.pop()
            if sel.size == 0:
                continue
            if isinstance(node, _Leaf):
                out[sel] = node.index
                continue
            low = points[sel, node.dim] <= node.value
            stack.append((node.lower, sel[low]))
            stack.append((node.upper, sel[~low]))
        return out

    def density_many(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if not self.domain.contains_all(points):
            raise OutOfDomain("density query outside the domain")
        idx = self.leaf_indices(points)
        volumes = np.prod(self.leaf_upper - self.leaf_lower, axis=1)
        return self.leaf_mass[idx] / volumes[idx]

    def to_text(self) -> str:
        """Nested debug rendering: one line per node, leaves carry bounds and mass."""
        lines: list[str] = []

        def render(node, depth):
            pad = "  " * depth
            if isinstance(node, _Leaf):
                lo = np.array2string(self.leaf_lower[node.index], precision=6)
                hi = np.array2string(self.leaf_upper[node.index], precision=6)
                lines.append(f"{pad}leaf {node.index}: {lo}..{hi} mass={self.leaf_mass[node.index]:.6g}")
            else:
                lines.append(f"{pad}split dim={node.dim} at {node.value:.6g}")
                render(node.lower, depth + 1)
                render(node.upper, depth + 1)

        render(self.root, 0)
        return "\n".join(lines)


def _weighted_median(coords: np.ndarray, weights: np.ndarray) -> float:
    """Smallest coordinate whose cumulative weight reaches half the total."""
    order = np.argsort(coords, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1]))
    k = min(k, coords.size - 1)
    return float(coords[order[k]])


def fit_tree_histogram(
    points: np.ndarray,
    weights: np.ndarray,
    domain: Domain,
    config: TreeConfig = TreeConfig(),
) -> TreeHistogram:
    """Fit the binary-partition histogram to a weighted sample.

    Nodes split at the weighted median along the widest side (relative to
    the domain widths) while the sample weight in the node exceeds
    `min_leaf_weight` and the leaf budget allows; each leaf then mixes its
    sample weight with a uniform share of `mix_uniform`.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    weights = np.atleast_1d(np.asarray(weights, dtype=float))
    if points.shape[0] != weights.size:
        raise ValueError("points and weights must have matching lengths")
    if (weights < 0.0).any() or not np.isfinite(weights).all():
        raise ValueError("weights must be finite and nonnegative")
    total = weights.sum()
    if not total > 0.0:
        raise EmptySample("cannot fit a histogram to zero total weight")
    if not domain.contains_all(points):
        raise OutOfDomain("sample points outside the domain")
    weights = weights / total
    rel_widths = domain.widths

    # Breadth-first splitting keeps construction deterministic and balanced.
    nodes: list[dict] = [
        {"lo": domain.lower.copy(), "hi": domain.upper.copy(), "sel": np.arange(points.shape[0])}
    ]
    queue: deque[int] = deque([0])
    n_leaves = 1
    while queue and n_leaves < config.max_leaves:
        node_id = queue.popleft()
        node = nodes[node_id]
        sel = node["sel"]
        node_weight = float(weights[sel].sum())
        if node_weight <= config.min_leaf_weight:
            continue
        lo, hi = node["lo"], node["hi"]
        dim = int(np.argmax((hi - lo) / rel_widths))
        coords = points[sel, dim]
        split = _weighted_median(coords, weights[sel]) if sel.size else 0.5 * (lo[dim] + hi[dim])
        if not lo[dim] < split < hi[dim]:
            split = 0.5 * (lo[dim] + hi[dim])
        if not lo[dim] < split < hi[dim]:
            continue  # box width exhausted at float resolution
        low_mask = coords <= split
        lo_child = {"lo": lo.copy(), "hi": hi.copy(), "sel": sel[low_mask]}
        lo_child["hi"][dim] = split
        hi_child = {"lo": lo.copy(), "hi": hi.copy(), "sel": sel[~low_mask]}
        hi_child["lo"][dim] = split
        node["split"] = (dim, split, len(nodes), len(nodes) + 1)
        queue.append(len(nodes))
        nodes.append(lo_child)
        queue.append(len(nodes))
        nodes.append(hi_child)
        n_leaves += 1

    leaf_lower: list[np.ndarray] = []
    leaf_upper: list[np.ndarray] = []
    leaf_sample: list[float] = []

    def build(node_id: int):
        node = nodes[node_id]
        if "split" in node:
            dim, split, lo_id, hi_id = node["split"]
            return _Split(dim=dim, value=split, lower=build(lo_id), upper=build(hi_id))
        index = len(leaf_lower)
        leaf_lower.append(node["lo"])
        leaf_upper.append(node["hi"])
        leaf_sample.append(float(weights[node["sel"]].sum()))
        return _Leaf(index)

    root = build(0)
    lower = np.array(leaf_lower)
    upper = np.array(leaf_upper)
    volumes = np.prod(upper - lower, axis=1)
    eps = config.mix_uniform
    mass = (1.0 - eps) * np.array(leaf_sample) + eps * volumes / domain.volume
    mass = mass / mass.sum()
    return TreeHistogram(
        domain=domain,
        root=root,
        leaf_lower=lower,
        leaf_upper=upper,
        leaf_mass=mass,
        mix_uniform=eps,
    )


def histogram_sample(q: TreeHistogram, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `count` points: a leaf by mass, then uniform inside the leaf box."""
    if count < 1:
        raise ValueError("count must be at least 1")
    cum = np.cumsum(q.leaf_mass)
    cum[-1] = 1.0
    idx = np.searchsorted(cum, rng.random(count), side="right")
    idx = np.minimum(idx, q.n_leaves - 1)
    lo = q.leaf_lower[idx]
    hi = q.leaf_upper[idx]
    return lo + rng.random((count, q.domain.dim)) * (hi - lo)


def histogram_density(q: TreeHistogram, x: np.ndarray) -> float:
    """Density at a single point; boundary ties go to the lower child."""
    return float(q.density_many(np.asarray(x, dtype=float).reshape(1, -1))[0])


@dataclass(frozen=True, eq=False)
class CandidateGrid:
    """Joint weighted cloud of (theta_i, x_ij) pairs.

    Row i carries the J candidates attached to particle i; its joint weights
    sum to that particle's weight, and the grand total is one.
    """

    thetas: tuple[HyperParameters, ...]
    theta_weights: np.ndarray
    points: np.ndarray        # (I, J, d)
    joint_weights: np.ndarray  # (I, J)
    domain: Domain

    def __post_init__(self):
        tw = np.asarray(self.theta_weights, dtype=float)
        jw = np.asarray(self.joint_weights, dtype=float)
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 3 or jw.shape != pts.shape[:2] or tw.shape != (pts.shape[0],):
            raise ValueError("inconsistent grid shapes")
        if np.abs(jw.sum(axis=1) - tw).max() > 1e-12:
            raise ValueError("joint weights must sum to the particle weight per row")
        if abs(jw.sum() - 1.0) > 1e-10:
            raise ValueError("joint weights must sum to one")
        if not self.domain.contains_all(pts.reshape(-1, pts.shape[-1])):
            raise OutOfDomain("candidate point outside the domain")

    @property
    def flat_points(self) -> np.ndarray:
        """(I*J, d) candidates; flat index i*J + j matches (i, j) lexicographic order."""
        return self.points.reshape(-1, self.points.shape[-1])

    @property
    def flat_weights(self) -> np.ndarray:
        return self.joint_weights.reshape(-1)


def demarginalize(
    particles: ParticleSet,
    q: TreeHistogram,
    history: EvaluationHistory,
    candidates_per_particle: int,
    rng: np.random.Generator,
) -> CandidateGrid:
    """Attach a weighted candidate population to every particle.

    Candidates are drawn iid from the instrumental density q; the weight of
    candidate j of particle i is w_i g(x_ij) / (q(x_ij) c_i) with g the
    exceedance probability under theta_i and c_i the self-normalizing row
    sum of g/q.  A row whose g values all vanish (or whose factorization
    fails) falls back to uniform weights so the row still carries w_i.
    """
    count = particles.size * candidates_per_particle
    flat = histogram_sample(q, count, rng)
    dens = q.density_many(flat)
    pts = flat.reshape(particles.size, candidates_per_particle, -1)
    dens = dens.reshape(particles.size, candidates_per_particle)
    best = history.best
    joint = np.empty_like(dens)
    for i, theta in enumerate(particles.thetas):
        try:
            loc, scale, dof = predictive_batch(pts[i], history, theta)
            g = exceedance_values(loc, scale, dof, best)
        except FactorizationFailure:
            g = np.zeros(candidates_per_particle)
        ratio = g / dens[i]
        norm = ratio.sum()
        if norm > 0.0:
            joint[i] = particles.weights[i] * ratio / norm
        else:
            joint[i] = particles.weights[i] / candidates_per_particle
    return CandidateGrid(
        thetas=particles.thetas,
        theta_weights=particles.weights.copy(),
        points=pts,
        joint_weights=joint,
        domain=q.domain,
    )
