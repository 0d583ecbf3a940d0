"""Parameter-recovery error and immediate regret."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .surrogate import Bounds


@dataclass
class TrialResult:
    trial_index: int
    estimated_params: np.ndarray
    ground_truth_params: np.ndarray
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.estimated_params = np.asarray(self.estimated_params, dtype=np.float64)
        self.ground_truth_params = np.asarray(self.ground_truth_params, dtype=np.float64)
        if self.estimated_params.shape != self.ground_truth_params.shape:
            raise ValueError(
                f"trial {self.trial_index}: estimate shape {self.estimated_params.shape} "
                f"!= ground truth shape {self.ground_truth_params.shape}"
            )


def parameter_mse(trials, bounds: Bounds | None = None) -> float:
    """Mean squared parameter error over all trials and dimensions.

    With ``bounds`` both estimate and truth are first min-max scaled to the
    unit cube, so parameters of different magnitudes weigh equally.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("need at least one trial")
    dims = {t.ground_truth_params.shape for t in trials}
    if len(dims) != 1:
        raise ValueError(f"trials disagree on parameter dimension: {sorted(dims)}")
    est = np.array([t.estimated_params for t in trials])
    truth = np.array([t.ground_truth_params for t in trials])
    if bounds is not None:
        est, truth = bounds.to_unit(est), bounds.to_unit(truth)
    return float(np.mean((truth - est) ** 2))


def immediate_regret(records, f_opt: float, negated: bool = True) -> np.ndarray:
    """``|best value so far - f_opt|`` after each evaluation.

    ``negated`` says the records hold ``-f`` (a minimization problem run
    through the maximizing loop); the incumbents are flipped back before
    comparing with ``f_opt``.
    """
    if len(records) == 0:
        raise ValueError("no records")
    inc = np.array([r.incumbent_y for r in records], dtype=np.float64)
    if negated:
        inc = -inc
    return np.abs(inc - f_opt)
