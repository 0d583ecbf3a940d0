"""Data containers and the contract shared by all surrogate models."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np


class NotFittedError(RuntimeError):
    pass


class FitError(RuntimeError):
    """A surrogate could not be fitted to the current observations."""


@dataclass(frozen=True)
class Bounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64).ravel()
        upper = np.asarray(self.upper, dtype=np.float64).ravel()
        if lower.shape != upper.shape or lower.size == 0:
            raise ValueError("lower and upper bounds must be non-empty and of equal length")
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
            raise ValueError("bounds must be finite")
        if np.any(lower >= upper):
            raise ValueError("every lower bound must be strictly below its upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def to_unit(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.lower) / self.width

    def from_unit(self, u) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=np.float64) * self.width

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.from_unit(rng.random((n, self.dim)))


@dataclass(frozen=True)
class Observation:
    x: np.ndarray
    y: float


@dataclass
class Dataset:
    bounds: Bounds
    observations: list[Observation] = field(default_factory=list)

    def __post_init__(self):
        for obs in self.observations:
            self._check(obs)

    def _check(self, obs: Observation):
        x = np.asarray(obs.x, dtype=np.float64)
        if x.shape != (self.bounds.dim,):
            raise ValueError(f"observation has shape {x.shape}, expected ({self.bounds.dim},)")
        if not np.all(np.isfinite(x)) or not np.isfinite(obs.y):
            raise ValueError("observations must be finite")
        if not self.bounds.contains(x, atol=1e-12):
            raise ValueError(f"observation {x} lies outside the bounds")

    def add(self, x, y: float) -> None:
        obs = Observation(np.asarray(x, dtype=np.float64).copy(), float(y))
        self._check(obs)
        self.observations.append(obs)

    def __len__(self):
        return len(self.observations)

    @property
    def dim(self) -> int:
        return self.bounds.dim

    @property
    def X(self) -> np.ndarray:
        if not self.observations:
            return np.empty((0, self.dim))
        return np.array([o.x for o in self.observations], dtype=np.float64)

    @property
    def y(self) -> np.ndarray:
        return np.array([o.y for o in self.observations], dtype=np.float64)

    @classmethod
    def from_arrays(cls, bounds: Bounds, X, y) -> "Dataset":
        ds = cls(bounds)
        for xi, yi in zip(np.atleast_2d(X), np.ravel(y)):
            ds.add(xi, yi)
        return ds


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    stddev: float


@dataclass(frozen=True)
class Standardizer:
    """Zero-mean / unit-variance scaling of the targets."""

    mean: float
    scale: float

    @classmethod
    def fit(cls, y: np.ndarray) -> "Standardizer":
        y = np.asarray(y, dtype=np.float64)
        std = float(np.std(y))
        # constant targets keep unit scale so they standardize to exactly zero
        return cls(float(np.mean(y)), std if std > 0.0 else 1.0)

    def transform(self, y):
        return (np.asarray(y, dtype=np.float64) - self.mean) / self.scale

    def inverse_mean(self, m):
        return np.asarray(m) * self.scale + self.mean

    def inverse_std(self, s):
        return np.asarray(s) * self.scale


def prepare_training_data(dataset: Dataset) -> tuple[np.ndarray, np.ndarray, Standardizer]:
    """Unit-cube inputs and standardized targets for ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("cannot fit a surrogate to an empty dataset")
    X = dataset.bounds.to_unit(dataset.X)
    y = dataset.y
    scaler = Standardizer.fit(y)
    return X, scaler.transform(y), scaler


class Surrogate(Protocol):
    """What the optimization loop needs from a model.

    ``predict_many`` works on an ``(n, d)`` array of points in problem units
    and returns ``(means, stddevs)`` in problem units.
    """

    def fit(self, dataset: Dataset) -> None: ...

    def predict(self, x: Sequence[float]) -> PredictiveDistribution: ...

    def predict_many(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]: ...


class BatchPredictMixin:
    """Derives :meth:`predict` from a vectorized :meth:`predict_many`."""

    def predict(self, x) -> PredictiveDistribution:
        x = np.asarray(x, dtype=np.float64)
        mean, std = self.predict_many(x[None, :])
        return PredictiveDistribution(float(mean[0]), float(std[0]))
