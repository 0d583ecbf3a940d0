"""Expected improvement and a derivative-free maximizer for it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .surrogate import Bounds, PredictiveDistribution

SIGMA_EPS = 1e-12
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
PATIENCE = 16


@dataclass(frozen=True)
class AcquisitionConfig:
    candidate_count: int = 4096
    refine_top_k: int = 8
    refine_steps: int = 64
    refine_radius: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("candidate_count", "refine_top_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.refine_steps < 0:
            raise ValueError("refine_steps must be >= 0")
        if not self.refine_radius > 0:
            raise ValueError("refine_radius must be positive")
        if self.refine_top_k > self.candidate_count:
            raise ValueError("refine_top_k cannot exceed candidate_count")


def norm_cdf(u):
    return 0.5 * erfc(-np.asarray(u) * _INV_SQRT2)


def norm_pdf(u):
    u = np.asarray(u)
    return _INV_SQRT2PI * np.exp(-0.5 * u * u)


def expected_improvement_array(mean, std, incumbent: float) -> np.ndarray:
    """Vectorized EI for maximization against ``incumbent``."""
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    gap = mean - incumbent
    safe = np.where(std > SIGMA_EPS, std, 1.0)
    u = gap / safe
    ei = gap * norm_cdf(u) + safe * norm_pdf(u)
    ei = np.where(std > SIGMA_EPS, ei, gap)
    return np.maximum(ei, 0.0)


def expected_improvement(pred: PredictiveDistribution, incumbent: float) -> float:
    return float(expected_improvement_array(pred.mean, pred.stddev, incumbent))


def _ei(surrogate, X, incumbent):
    mean, std = surrogate.predict_many(X)
    return expected_improvement_array(mean, std, incumbent)


def maximize_acquisition(surrogate, bounds: Bounds, incumbent: float,
                         config: AcquisitionConfig, rng: np.random.Generator | None = None):
    """Random multi-start followed by hill climbing on EI.

    Returns ``(x_next, ei_value)``. The top ``refine_top_k`` of
    ``candidate_count`` uniform draws are each perturbed with Gaussian steps
    of ``refine_radius`` times the box width; a start's radius halves after
    every 16 consecutive rejected moves.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    candidates = bounds.sample(rng, config.candidate_count)
    ei = _ei(surrogate, candidates, incumbent)

    # stable sort keeps the earliest candidate on ties
    top = np.argsort(-ei, kind="stable")[:config.refine_top_k]
    x = candidates[top].copy()
    best = ei[top].copy()
    radius = np.full(len(top), config.refine_radius)
    stale = np.zeros(len(top), dtype=int)
    for _ in range(config.refine_steps):
        step = rng.standard_normal(x.shape) * (radius[:, None] * bounds.width)
        proposal = bounds.clip(x + step)
        value = _ei(surrogate, proposal, incumbent)
        better = value > best
        x[better] = proposal[better]
        best[better] = value[better]
        stale = np.where(better, 0, stale + 1)
        shrink = stale >= PATIENCE
        radius[shrink] *= 0.5
        stale[shrink] = 0

    i = int(np.argmax(best))
    return x[i], float(best[i])
