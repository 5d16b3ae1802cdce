"""Outer optimization loops behind a common ask/tell interface.

`SmcEiOptimizer` runs the adaptive algorithm: demarginalize candidates,
evaluate at the argmax of the particle-averaged expected improvement, update
the particle cloud, refit the instrumental density.  `ReferenceEiOptimizer`
is the plug-in baseline: ranges pinned to one value, candidates restricted
to a fixed Latin hypercube searched exhaustively.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .candidates import CandidateGrid, TreeConfig, TreeHistogram, demarginalize, fit_tree_histogram
from .criteria import averaged_ei_batch, ei_values
from .errors import ExhaustedCandidates, OutOfDomain
from .gp import Domain, EvaluationHistory, HyperParameters, predictive_batch
from .smc import (
    ParticleSet,
    PriorSpec,
    effective_sample_size,
    init_particles,
    move,
    multinomial_resample,
    reweight,
)
from .testbed import maximin_lhs, split_stream

__all__ = [
    "OptimizerConfig",
    "TraceRecord",
    "RunTrace",
    "SmcEiOptimizer",
    "ReferenceEiOptimizer",
    "run_smc_ei",
    "run_reference_ei",
    "ml_estimate",
    "default_n_initial",
]

logger = logging.getLogger(__name__)

Objective = Callable[[np.ndarray], float]


def default_n_initial(dim: int) -> int:
    """Initial design size rule of thumb: max(4, 2d)."""
    return max(4, 2 * dim)


@dataclass(frozen=True, eq=False)
class OptimizerConfig:
    """Shared run settings for both algorithms."""

    prior: PriorSpec
    n_particles: int = 100
    candidates_per_particle: int = 100
    budget: int = 80
    n_initial: int = 4
    tree: TreeConfig = field(default_factory=TreeConfig)
    always_resample: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1 or self.candidates_per_particle < 1:
            raise ValueError("particle and candidate counts must be at least 1")
        # budget == n_initial is allowed: the run degenerates to the design.
        if not 3 <= self.n_initial <= self.budget:
            raise ValueError("need 3 <= n_initial <= budget")


@dataclass(frozen=True, eq=False)
class TraceRecord:
    """One evaluation: the point, its value, the running best and diagnostics.

    Initial-design evaluations carry NaN for the particle diagnostics.
    """

    n: int
    point: np.ndarray
    value: float
    best: float
    ess: float
    resampled: bool
    accept_rate: float
    wall_ms: float
    failed_particles: int = 0


@dataclass(frozen=True, eq=False)
class RunTrace:
    records: tuple[TraceRecord, ...]

    def __post_init__(self):
        best = np.array([r.best for r in self.records])
        if best.size and np.any(np.diff(best) < 0.0):
            raise ValueError("running best must be nondecreasing")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def best_values(self) -> np.ndarray:
        return np.array([r.best for r in self.records])

    @property
    def final_best(self) -> float:
        return self.records[-1].best


class _AskTellBase:
    """Sequential ask/tell bookkeeping shared by both optimizers."""

    def __init__(self, domain: Domain, config: OptimizerConfig):
        if config.prior.dim != domain.dim:
            raise ValueError("prior dimension must match the domain")
        self.domain = domain
        self.config = config
        self._design = maximin_lhs(
            domain, config.n_initial, split_stream(config.seed, "initial-design")
        )
        self._points: list[np.ndarray] = []
        self._values: list[float] = []
        self._pending: np.ndarray | None = None
        self._ask_started: float = 0.0
        self.records: list[TraceRecord] = []

    @property
    def n_evaluations(self) -> int:
        return len(self._values)

    @property
    def finished(self) -> bool:
        return self.n_evaluations >= self.config.budget

    def _next_point(self) -> np.ndarray:
        raise NotImplementedError

    def ask(self) -> np.ndarray:
        if self._pending is not None:
            raise RuntimeError("tell() the previous point before asking again")
        if self.finished:
            raise RuntimeError("evaluation budget exhausted")
        self._ask_started = time.perf_counter()
        x = self._next_point()
        self._pending = x
        return x.copy()

    def tell(self, x: np.ndarray, value: float) -> TraceRecord:
        if self._pending is None:
            raise RuntimeError("ask() before tell()")
        x = np.asarray(x, dtype=float)
        if not np.allclose(x, self._pending, rtol=0.0, atol=1e-12):
            raise ValueError("tell() must report the point returned by the last ask()")
        if not self.domain.contains(x):
            raise OutOfDomain("evaluated point outside the domain")
        # Keep the exact asked coordinates so traces stay bit-reproducible.
        point = self._pending
        self._pending = None
        self._points.append(point)
        self._values.append(float(value))
        diag = self._absorb_diagnostics()
        record = TraceRecord(
            n=self.n_evaluations,
            point=point.copy(),
            value=float(value),
            best=float(np.max(self._values)),
            wall_ms=(time.perf_counter() - self._ask_started) * 1e3,
            **diag,
        )
        self.records.append(record)
        return record

    def _absorb_diagnostics(self) -> dict:
        raise NotImplementedError

    def trace(self) -> RunTrace:
        return RunTrace(tuple(self.records))


class SmcEiOptimizer(_AskTellBase):
    """Fully Bayesian EI driven by a particle posterior over the ranges."""

    def __init__(self, domain: Domain, config: OptimizerConfig):
        super().__init__(domain, config)
        self.particles: ParticleSet | None = None
        self.proposal: TreeHistogram = TreeHistogram.uniform(
            domain, config.tree.mix_uniform
        )
        self._pending_grid: CandidateGrid | None = None
        self._failed_particles = 0

    def _history(self) -> EvaluationHistory:
        return EvaluationHistory(np.array(self._points), np.array(self._values))

    def _next_point(self) -> np.ndarray:
        n = self.n_evaluations
        if n < self.config.n_initial:
            return self._design[n].copy()
        history = self._history()
        grid = demarginalize(
            self.particles,
            self.proposal,
            history,
            self.config.candidates_per_particle,
            split_stream(self.config.seed, f"demarginalize:{n}"),
        )
        values, failed = averaged_ei_batch(grid.flat_points, self.particles, history)
        values = self._screen_degenerate(grid.flat_points, history, values)
        pick = int(np.argmax(values))
        self._pending_grid = grid
        self._failed_particles = failed
        return grid.flat_points[pick].copy()

    def _screen_degenerate(
        self, candidates: np.ndarray, history: EvaluationHistory, values: np.ndarray
    ) -> np.ndarray:
        """Drop candidates indistinguishable from evaluated points for the cloud.

        Evaluating such a point would collapse every particle's correlation
        matrix on the next update.  If everything is blocked (the optimum is
        resolved to float precision), fall back to the candidate farthest
        from the design.
        """
        from scipy.spatial import cKDTree

        dmin, _ = cKDTree(history.points).query(candidates, k=1)
        dmin2 = dmin * dmin
        max_range2 = np.array([np.square(t.ranges).max() for t in self.particles.thetas])
        cut = 20.0 * np.finfo(float).eps * max_range2.min()
        blocked = dmin2 <= cut
        if not blocked.any():
            return values
        if blocked.all():
            logger.warning("every candidate sits on an evaluated point; picking the farthest")
            return dmin2
        return np.where(blocked, -math.inf, values)

    def _absorb_diagnostics(self) -> dict:
        n = self.n_evaluations
        cfg = self.config
        if n < cfg.n_initial:
            return dict(ess=math.nan, resampled=False, accept_rate=math.nan)
        if n == cfg.n_initial:
            self.particles = init_particles(
                cfg.prior,
                self._history(),
                cfg.n_particles,
                split_stream(cfg.seed, "particle-init"),
            )
            return dict(
                ess=effective_sample_size(self.particles),
                resampled=False,
                accept_rate=math.nan,
            )

        # The last point was chosen from a candidate grid: update the cloud
        # by the likelihood ratio, rejuvenate if degenerate, refit the proposal.
        new_history = self._history()
        old_history = EvaluationHistory(new_history.points[:-1], new_history.values[:-1])
        self.particles = reweight(self.particles, old_history, new_history)
        ess = effective_sample_size(self.particles)
        resampled = self.config.always_resample or ess < 0.5 * self.particles.size
        accept_rate = math.nan
        if resampled:
            step = new_history.n - 1
            self.particles = multinomial_resample(
                self.particles, split_stream(cfg.seed, f"resample:{step}")
            )
            result = move(
                self.particles,
                new_history,
                cfg.prior,
                split_stream(cfg.seed, f"move:{step}"),
            )
            self.particles = result.particles
            accept_rate = result.accept_rate
        grid = self._pending_grid
        self._pending_grid = None
        self.proposal = fit_tree_histogram(
            grid.flat_points, grid.flat_weights, self.domain, cfg.tree
        )
        return dict(
            ess=ess,
            resampled=resampled,
            accept_rate=accept_rate,
            failed_particles=self._failed_particles,
        )

    def step(self, objective: Objective) -> TraceRecord:
        """One full iteration: choose a point, evaluate, update the state."""
        x = self.ask()
        return self.tell(x, objective(x))


class ReferenceEiOptimizer(_AskTellBase):
    """Plug-in EI baseline: pinned ranges, exhaustive search on a fixed LHS."""

    def __init__(
        self,
        domain: Domain,
        config: OptimizerConfig,
        fixed_theta: HyperParameters,
        fixed_sigma2: float | None = None,
        fixed_mean_mode: str = "integrated",
    ):
        super().__init__(domain, config)
        if fixed_mean_mode != "integrated":
            raise ValueError("only the integrated constant-mean mode is supported")
        if fixed_sigma2 is not None and not fixed_sigma2 > 0.0:
            raise ValueError("fixed_sigma2 must be positive")
        self.fixed_theta = fixed_theta
        self.fixed_sigma2 = fixed_sigma2
        self.search_points = maximin_lhs(
            domain,
            config.n_particles * config.candidates_per_particle,
            split_stream(config.seed, "search-lhs"),
        )
        self._available = np.ones(self.search_points.shape[0], dtype=bool)
        self._pending_index: int | None = None

    def _next_point(self) -> np.ndarray:
        n = self.n_evaluations
        if n < self.config.n_initial:
            return self._design[n].copy()
        if not self._available.any():
            raise ExhaustedCandidates("all fixed LHS candidates already evaluated")
        history = EvaluationHistory(np.array(self._points), np.array(self._values))
        candidates = np.flatnonzero(self._available)
        loc, scale, dof = predictive_batch(
            self.search_points[candidates],
            history,
            self.fixed_theta,
            fixed_variance=self.fixed_sigma2,
        )
        values = ei_values(loc, scale, dof, history.best)
        self._pending_index = int(candidates[int(np.argmax(values))])
        return self.search_points[self._pending_index].copy()

    def _absorb_diagnostics(self) -> dict:
        if self._pending_index is not None:
            self._available[self._pending_index] = False
            self._pending_index = None
        return dict(ess=math.nan, resampled=False, accept_rate=math.nan)

    def step(self, objective: Objective) -> TraceRecord:
        x = self.ask()
        return self.tell(x, objective(x))


def _drive(optimizer: _AskTellBase, objective: Objective) -> RunTrace:
    while not optimizer.finished:
        optimizer.step(objective)
    return optimizer.trace()


def run_smc_ei(objective: Objective, domain: Domain, config: OptimizerConfig) -> RunTrace:
    """Run the adaptive algorithm for `config.budget` evaluations."""
    return _drive(SmcEiOptimizer(domain, config), objective)


def run_reference_ei(
    objective: Objective,
    domain: Domain,
    config: OptimizerConfig,
    fixed_theta: HyperParameters,
    fixed_sigma2: float | None = None,
    fixed_mean_mode: str = "integrated",
) -> RunTrace:
    """Run the plug-in baseline for `config.budget` evaluations."""
    optimizer = ReferenceEiOptimizer(
        domain, config, fixed_theta, fixed_sigma2, fixed_mean_mode
    )
    return _drive(optimizer, objective)


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(f: Callable[[float], float], lo: float, hi: float, iterations: int = 40):
    """Golden-section maximization of a scalar function on [lo, hi]."""
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iterations):
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def ml_estimate(
    history: EvaluationHistory,
    domain: Domain,
    rng: np.random.Generator,
    n_starts: int = 20,
    span: float = 2.0,
    max_sweeps: int = 4,
) -> HyperParameters:
    """Maximize the integrated log-likelihood over the log-ranges.

    Multi-start local search: starts drawn from the default domain prior,
    each refined by coordinate-wise golden-section sweeps until a sweep
    gains less than 1e-6.  Returns the best point found.
    """
    if history.n < 50:
        raise ValueError("maximum-likelihood estimation expects a large design (n >= 50)")
    from .smc import _log_likelihood_or_neg_inf  # local alias, avoids cycle at import

    def objective(log_ranges: np.ndarray) -> float:
        try:
            theta = HyperParameters(log_ranges)
        except ValueError:
            return -math.inf
        return _log_likelihood_or_neg_inf(history, theta)

    starts = PriorSpec.for_domain(domain).sample(n_starts, rng)
    best_x: np.ndarray | None = None
    best_f = -math.inf
    for s, start in enumerate(starts):
        x = np.array(start, dtype=float)
        f = objective(x)
        for sweep in range(max_sweeps):
            gained = 0.0
            for k in range(domain.dim):
                def along(t: float, k=k) -> float:
                    trial = x.copy()
                    trial[k] = t
                    return objective(trial)

                t_best, f_best = _golden_max(along, x[k] - span, x[k] + span)
                if f_best > f:
                    gained += f_best - f
                    x[k], f = t_best, f_best
            if gained < 1e-6:
                break
        logger.debug("ml start %d: loglik %.6f at %s after %d sweeps", s, f, x, sweep + 1)
        if f > best_f:
            best_f, best_x = f, x.copy()
    if best_x is None:
        raise RuntimeError("likelihood evaluation failed at every start")
    logger.info("ml_estimate: best loglik %.6f at log-ranges %s", best_f, best_x)
    return HyperParameters(best_x)
