"""Benchmark harness: repeated seeded runs, CSV persistence, summaries.

Per-run CSVs carry one row per evaluation; the summary aggregates the log
error to the known maximum across runs at each evaluation count.  Errors at
or below zero (best reached the maximum to machine precision) are recorded
with the floor sentinel -30, which is documented in every CSV header.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .gp import HyperParameters
from .optimizer import (
    OptimizerConfig,
    RunTrace,
    default_n_initial,
    ml_estimate,
    run_reference_ei,
    run_smc_ei,
)
from .smc import PriorSpec
from .testbed import TEST_FUNCTIONS, maximin_lhs, split_stream

__all__ = [
    "BenchmarkSpec",
    "run_benchmark",
    "summarize_runs",
    "ml_reference_prep",
    "load_theta",
    "LOG_ERROR_FLOOR",
    "WORKERS_ENV_VAR",
]

logger = logging.getLogger(__name__)

LOG_ERROR_FLOOR = -30.0
WORKERS_ENV_VAR = "SMCEI_WORKERS"

_ALGORITHMS = ("smc-ei", "ref-ei")


@dataclass(frozen=True, eq=False)
class BenchmarkSpec:
    """One benchmark: a function, an algorithm and the run settings."""

    function: str
    algorithm: str
    out_dir: Path
    n_particles: int = 100
    candidates_per_particle: int = 100
    budget: int | None = None
    n_initial: int | None = None
    runs: int = 20
    seed: int = 42
    always_resample: bool = False
    theta_file: Path | None = None

    def __post_init__(self):
        if self.function not in TEST_FUNCTIONS:
            raise ValueError(f"unknown test function {self.function!r}")
        if self.algorithm not in _ALGORITHMS:
            raise ValueError(f"algorithm must be one of {_ALGORITHMS}")
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if self.algorithm == "ref-ei" and self.theta_file is None:
            raise ValueError("ref-ei needs a theta file (see prep-ref)")
        object.__setattr__(self, "out_dir", Path(self.out_dir))

    def resolve(self) -> "BenchmarkSpec":
        """Fill in function-dependent defaults."""
        fn = TEST_FUNCTIONS[self.function]
        budget = self.budget if self.budget is not None else (120 if fn.domain.dim >= 6 else 80)
        n_initial = self.n_initial if self.n_initial is not None else default_n_initial(fn.domain.dim)
        return replace(self, budget=budget, n_initial=n_initial)


def _config_for(spec: BenchmarkSpec, seed: int) -> OptimizerConfig:
    fn = TEST_FUNCTIONS[spec.function]
    return OptimizerConfig(
        prior=PriorSpec.for_domain(fn.domain),
        n_particles=spec.n_particles,
        candidates_per_particle=spec.candidates_per_particle,
        budget=spec.budget,
        n_initial=spec.n_initial,
        always_resample=spec.always_resample,
        seed=seed,
    )


def _format(value: float) -> str:
    return repr(float(value))


def run_csv_path(out_dir: Path, run_index: int) -> Path:
    return Path(out_dir) / f"run_{run_index:03d}.csv"


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_run_csv(path: Path, spec: BenchmarkSpec, run_index: int, trace: RunTrace) -> None:
    fn = TEST_FUNCTIONS[spec.function]
    dim = fn.domain.dim
    buf = io.StringIO()
    buf.write(
        f"# smcei-run fn={spec.function} alg={spec.algorithm} known_max={_format(fn.known_max)} "
        f"seed={spec.seed + run_index} run={run_index} budget={spec.budget} "
        f"n_initial={spec.n_initial} log_error_floor={LOG_ERROR_FLOOR:g}\n"
    )
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        ["n", *[f"x{k}" for k in range(dim)], "value", "best", "ess", "accept_rate", "wall_ms"]
    )
    for r in trace:
        writer.writerow(
            [
                r.n,
                *[_format(v) for v in r.point],
                _format(r.value),
                _format(r.best),
                _format(r.ess),
                _format(r.accept_rate),
                f"{r.wall_ms:.3f}",
            ]
        )
    _write_atomic(Path(path), buf.getvalue())


def read_run_csv(path: Path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Return (header fields, n column, best column) of one run CSV."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# smcei-run"):
        raise ValueError(f"{path} is not a run CSV")
    meta = dict(token.split("=", 1) for token in lines[0][2:].split()[1:])
    rows = list(csv.reader(lines[1:]))
    header, body = rows[0], rows[1:]
    n_col = header.index("n")
    best_col = header.index("best")
    ns = np.array([int(r[n_col]) for r in body])
    best = np.array([float(r[best_col]) for r in body])
    return meta, ns, best


def log_error(best: np.ndarray, known_max: float) -> np.ndarray:
    """log(known_max - best), floored at the sentinel when the gap closes."""
    gap = known_max - np.asarray(best, dtype=float)
    out = np.full(gap.shape, LOG_ERROR_FLOOR)
    open_gap = gap > 0.0
    out[open_gap] = np.maximum(np.log(gap[open_gap]), LOG_ERROR_FLOOR)
    return out


def _run_one(spec: BenchmarkSpec, run_index: int) -> Path:
    fn = TEST_FUNCTIONS[spec.function]
    seed = spec.seed + run_index
    config = _config_for(spec, seed)
    try:
        if spec.algorithm == "smc-ei":
            trace = run_smc_ei(fn.evaluate, fn.domain, config)
        else:
            theta = load_theta(spec.theta_file)
            trace = run_reference_ei(fn.evaluate, fn.domain, config, theta)
    except Exception as exc:
        raise RuntimeError(
            f"run {run_index} (seed {seed}) of {spec.algorithm} on {spec.function} "
            f"failed after {exc.__class__.__name__}: {exc}"
        ) from exc
    path = run_csv_path(spec.out_dir, run_index)
    write_run_csv(path, spec, run_index, trace)
    logger.info(
        "run %d/%d done: best %.6g", run_index + 1, spec.runs, trace.final_best
    )
    return path


def run_benchmark(spec: BenchmarkSpec) -> Path:
    """Execute all runs of the spec and write per-run CSVs plus a summary.

    The worker-slot count comes from the SMCEI_WORKERS environment variable
    (default 1); output files do not depend on it.
    """
    spec = spec.resolve()
    spec.out_dir.mkdir(parents=True, exist_ok=True)
    workers = int(os.environ.get(WORKERS_ENV_VAR, "1"))
    indices = range(spec.runs)
    if workers > 1 and spec.runs > 1:
        with ProcessPoolExecutor(max_workers=min(workers, spec.runs)) as pool:
            list(pool.map(_run_one, [spec] * spec.runs, indices))
    else:
        for i in indices:
            _run_one(spec, i)
    return summarize_runs(spec.out_dir)


def summarize_runs(out_dir: Path) -> Path:
    """Aggregate run CSVs in a directory into summary.csv (mean and quartiles)."""
    out_dir = Path(out_dir)
    run_files = sorted(out_dir.glob("run_*.csv"))
    if not run_files:
        raise FileNotFoundError(f"no run CSVs found in {out_dir}")
    per_run = []
    known_max = None
    budget = None
    for path in run_files:
        meta, ns, best = read_run_csv(path)
        file_max = float(meta["known_max"])
        if known_max is None:
            known_max, budget = file_max, ns[-1]
        elif file_max != known_max or ns[-1] != budget:
            raise ValueError("run CSVs in the directory disagree on function or budget")
        per_run.append(log_error(best, known_max))
    errors = np.array(per_run)  # (runs, budget)

    buf = io.StringIO()
    buf.write(
        f"# smcei-summary runs={len(run_files)} known_max={_format(known_max)} "
        f"log_error_floor={LOG_ERROR_FLOOR:g} columns=log(known_max - best)\n"
    )
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "mean_log_error", "median_log_error", "q25_log_error", "q75_log_error"])
    for j in range(errors.shape[1]):
        col = errors[:, j]
        writer.writerow(
            [
                j + 1,
                _format(col.mean()),
                _format(np.median(col)),
                _format(np.percentile(col, 25.0)),
                _format(np.percentile(col, 75.0)),
            ]
        )
    path = out_dir / "summary.csv"
    _write_atomic(path, buf.getvalue())
    return path


def ml_reference_prep(function: str, design_size: int, seed: int, out_path: Path) -> HyperParameters:
    """Evaluate a large maximin LHS and fit the ranges by maximum likelihood.

    Writes the fitted log-ranges to a small text file for ref-ei runs.
    """
    if design_size < 50:
        raise ValueError("reference preparation needs a design of at least 50 points")
    if function not in TEST_FUNCTIONS:
        raise ValueError(f"unknown test function {function!r}")
    fn = TEST_FUNCTIONS[function]
    design = maximin_lhs(fn.domain, design_size, split_stream(seed, "ml-design"))
    values = np.array([fn.evaluate(x) for x in design])
    from .gp import EvaluationHistory

    history = EvaluationHistory(design, values)
    theta = ml_estimate(history, fn.domain, split_stream(seed, "ml-starts"))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    body = "# smcei log-range parameters, one per dimension\n"
    body += "".join(_format(v) + "\n" for v in theta.log_ranges)
    _write_atomic(out_path, body)
    return theta


def load_theta(path: Path) -> HyperParameters:
    values = [
        float(line)
        for line in Path(path).read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]
    return HyperParameters(np.array(values))
