"""Sequential Bayesian optimization loop and the random-search baseline.

The loop maximizes. Problems with a minimization objective are wrapped by
:func:`npbo.benchmarks.as_maximization` before they reach it.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from .acquisition import AcquisitionConfig, maximize_acquisition
from .gp import GaussianProcess
from .neural_process import NeuralProcess, NpConfig
from .surrogate import Bounds, Dataset, FitError

logger = logging.getLogger(__name__)

SURROGATES = ("gp", "np", "random")


class Problem(Protocol):
    bounds: Bounds

    def __call__(self, x: np.ndarray) -> float: ...


class OptimizationAborted(RuntimeError):
    """A run stopped early; ``records`` holds everything evaluated so far."""

    def __init__(self, message, records):
        super().__init__(message)
        self.records = records


@dataclass(frozen=True)
class RunRecord:
    iteration: int
    x: np.ndarray
    y: float
    incumbent_y: float
    incumbent_x: np.ndarray
    wall_time_ms: int


@dataclass
class RunConfig:
    surrogate: str = "gp"
    budget: int = 100
    n_init: int | None = None
    seed: int = 0
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp_search_budget: int = 64
    np_config: NpConfig = field(default_factory=NpConfig)

    def resolved_n_init(self, dim: int) -> int:
        return max(2, 2 * dim) if self.n_init is None else self.n_init

    def validate(self, dim: int) -> None:
        if self.surrogate not in SURROGATES:
            raise ValueError(f"surrogate must be one of {SURROGATES}, got {self.surrogate!r}")
        n_init = self.resolved_n_init(dim)
        if n_init < 1:
            raise ValueError("n_init must be >= 1")
        if self.budget < n_init:
            raise ValueError(f"budget ({self.budget}) must be at least n_init ({n_init})")


def incumbent(records) -> tuple[np.ndarray, float]:
    """Best ``(x, y)`` so far; the earliest record wins ties."""
    if not records:
        raise ValueError("no records")
    best = records[0]
    for rec in records[1:]:
        if rec.y > best.y:
            best = rec
    return best.x, best.y


def make_surrogate(config: RunConfig, seed_seq: np.random.SeedSequence):
    seed = int(seed_seq.generate_state(1, dtype=np.uint64)[0])
    if config.surrogate == "gp":
        return GaussianProcess(config.gp_search_budget, seed)
    if config.surrogate == "np":
        np_cfg = config.np_config
        return NeuralProcess(NpConfig(**{**np_cfg.__dict__, "seed": seed}))
    return None


def run_optimization(problem: Problem, config: RunConfig,
                     callback: Callable[[RunRecord], None] | None = None) -> list[RunRecord]:
    """Spend exactly ``config.budget`` evaluations of ``problem``.

    Deterministic for a given ``config.seed``. ``callback`` sees every record
    as soon as it exists. An evaluation failure raises
    :class:`OptimizationAborted` carrying the partial trace.
    """
    bounds = problem.bounds
    config.validate(bounds.dim)
    n_init = config.resolved_n_init(bounds.dim)
    root = np.random.SeedSequence(config.seed)
    design_seq, acq_seq, model_seq = root.spawn(3)
    design_rng = np.random.default_rng(design_seq)
    acq_rng = np.random.default_rng(acq_seq)
    surrogate = make_surrogate(config, model_seq)

    dataset = Dataset(bounds)
    records: list[RunRecord] = []
    best_x, best_y = None, -np.inf
    start = time.perf_counter()

    for it in range(1, config.budget + 1):
        x = None
        if surrogate is not None and it > n_init:
            try:
                surrogate.fit(dataset)
                x, _ = maximize_acquisition(surrogate, bounds, best_y, config.acquisition, acq_rng)
            except (FitError, FloatingPointError, np.linalg.LinAlgError) as exc:
                logger.warning("iteration %d: surrogate failed (%s); sampling at random", it, exc)
                x = None
        if x is None:
            x = bounds.sample(design_rng, 1)[0]
        x = bounds.clip(x)

        try:
            y = float(problem(x))
        except Exception as exc:
            raise OptimizationAborted(f"evaluation {it} failed: {exc}", records) from exc
        if not np.isfinite(y):
            raise OptimizationAborted(f"evaluation {it} returned non-finite value {y}", records)

        dataset.add(x, y)
        if y > best_y:
            best_x, best_y = x.copy(), y
        rec = RunRecord(it, x.copy(), y, best_y, best_x.copy(),
                        int((time.perf_counter() - start) * 1000))
        records.append(rec)
        if callback is not None:
            callback(rec)
    return records
