"""Exact Gaussian process regression with an ARD squared-exponential kernel.

Hyperparameters are chosen by random search over the log marginal
likelihood. Inputs are scaled to the unit cube and targets standardized
before fitting, so all hyperparameters are in those normalized units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

from .surrogate import (
    BatchPredictMixin,
    Bounds,
    Dataset,
    FitError,
    NotFittedError,
    PredictiveDistribution,
    Standardizer,
    prepare_training_data,
)

logger = logging.getLogger(__name__)

LENGTH_SCALE_RANGE = (1e-2, 10.0)
AMPLITUDE_RANGE = (1e-2, 10.0)
NOISE_RANGE = (1e-6, 1e-1)
NOISE_FLOOR = 1e-8
JITTER_START = 1e-10
JITTER_ATTEMPTS = 5


@dataclass(frozen=True)
class GpHyperparameters:
    length_scale: np.ndarray
    amplitude: float
    noise_variance: float

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.length_scale, dtype=np.float64))
        object.__setattr__(self, "length_scale", ls)
        if not (np.all(ls > 0) and np.all(np.isfinite(ls))):
            raise ValueError("length scales must be positive and finite")
        if not (self.amplitude > 0 and np.isfinite(self.amplitude)):
            raise ValueError("amplitude must be positive and finite")
        if not (self.noise_variance >= NOISE_FLOOR and np.isfinite(self.noise_variance)):
            raise ValueError(f"noise_variance must be >= {NOISE_FLOOR}")


def rbf_kernel(a, b, hp: GpHyperparameters) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.shape != hp.length_scale.shape:
        raise ValueError(f"dimension mismatch: {a.shape}, {b.shape}, length scales {hp.length_scale.shape}")
    r = (a - b) / hp.length_scale
    return float(hp.amplitude * np.exp(-0.5 * np.dot(r, r)))


def kernel_matrix(A: np.ndarray, B: np.ndarray, hp: GpHyperparameters) -> np.ndarray:
    As = A / hp.length_scale
    Bs = B / hp.length_scale
    sq = (As * As).sum(1)[:, None] + (Bs * Bs).sum(1)[None, :] - 2.0 * As @ Bs.T
    np.maximum(sq, 0.0, out=sq)
    return hp.amplitude * np.exp(-0.5 * sq)


def _robust_cholesky(K: np.ndarray) -> np.ndarray:
    try:
        return cholesky(K, lower=True, check_finite=False)
    except LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    for _ in range(JITTER_ATTEMPTS):
        try:
            L = cholesky(K + jitter * eye, lower=True, check_finite=False)
            logger.debug("cholesky needed jitter %g", jitter)
            return L
        except LinAlgError:
            jitter *= 10.0
    raise FitError(f"Cholesky failed after {JITTER_ATTEMPTS} jitter attempts (last jitter {jitter / 10:g})")


def log_marginal_likelihood(X, y, hp: GpHyperparameters) -> float:
    n = len(y)
    K = kernel_matrix(X, X, hp)
    K[np.diag_indices(n)] += hp.noise_variance
    try:
        L = cholesky(K, lower=True, check_finite=False)
    except LinAlgError:
        return -np.inf
    alpha = cho_solve((L, True), y, check_finite=False)
    return float(-0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * np.log(2 * np.pi))


@dataclass(frozen=True)
class GpFittedState:
    hyperparameters: GpHyperparameters
    cholesky_factor: np.ndarray
    alpha: np.ndarray
    train_inputs: np.ndarray
    train_targets: np.ndarray
    bounds: Bounds | None = None
    scaler: Standardizer | None = None

    def predict_normalized(self, U: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance at unit-cube points, standardized units."""
        hp = self.hyperparameters
        Ks = kernel_matrix(np.atleast_2d(U), self.train_inputs, hp)
        mean = Ks @ self.alpha
        v = solve_triangular(self.cholesky_factor, Ks.T, lower=True, check_finite=False)
        var = hp.amplitude - (v * v).sum(0) + hp.noise_variance
        return mean, np.maximum(var, 0.0)


def fit_normalized(X: np.ndarray, y: np.ndarray, hp: GpHyperparameters) -> GpFittedState:
    """Condition a GP with fixed hyperparameters on already-normalized data."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    K = kernel_matrix(X, X, hp)
    K[np.diag_indices(len(y))] += hp.noise_variance
    L = _robust_cholesky(K)
    alpha = cho_solve((L, True), y, check_finite=False)
    return GpFittedState(hp, L, alpha, X, y)


def sample_hyperparameters(rng: np.random.Generator, dim: int) -> GpHyperparameters:
    def log_uniform(lo, hi, size=None):
        return np.exp(rng.uniform(np.log(lo), np.log(hi), size=size))

    return GpHyperparameters(
        length_scale=log_uniform(*LENGTH_SCALE_RANGE, size=dim),
        amplitude=float(log_uniform(*AMPLITUDE_RANGE)),
        noise_variance=float(log_uniform(*NOISE_RANGE)),
    )


def gp_fit(dataset: Dataset, search_budget: int = 64, seed=0,
           hyperparameters: GpHyperparameters | None = None) -> GpFittedState:
    """Fit a GP to ``dataset``.

    With ``hyperparameters`` given the search is skipped; otherwise
    ``search_budget`` log-uniform draws are scored by log marginal likelihood
    and the best one is kept.
    """
    X, y, scaler = prepare_training_data(dataset)
    if hyperparameters is None:
        if search_budget < 1:
            raise ValueError("search_budget must be >= 1")
        rng = np.random.default_rng(seed)
        best, best_lml = None, -np.inf
        for _ in range(search_budget):
            hp = sample_hyperparameters(rng, dataset.dim)
            lml = log_marginal_likelihood(X, y, hp)
            if lml > best_lml:
                best, best_lml = hp, lml
        if best is None:
            raise FitError("no sampled hyperparameters gave a positive-definite kernel")
        hyperparameters = best
    state = fit_normalized(X, y, hyperparameters)
    return GpFittedState(state.hyperparameters, state.cholesky_factor, state.alpha,
                         state.train_inputs, state.train_targets, dataset.bounds, scaler)


def gp_predict(state: GpFittedState | None, x) -> PredictiveDistribution:
    if state is None or state.bounds is None:
        raise NotFittedError("gp_predict needs a state produced by gp_fit")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.bounds.dim,):
        raise ValueError(f"expected a point of length {state.bounds.dim}, got shape {x.shape}")
    mean, var = state.predict_normalized(state.bounds.to_unit(x)[None, :])
    return PredictiveDistribution(
        float(state.scaler.inverse_mean(mean[0])),
        float(state.scaler.inverse_std(np.sqrt(var[0]))),
    )


class GaussianProcess(BatchPredictMixin):
    """Surrogate wrapper; each :meth:`fit` reruns the hyperparameter search."""

    def __init__(self, search_budget: int = 64, seed=0):
        self.search_budget = search_budget
        self.rng = np.random.default_rng(seed)
        self.state: GpFittedState | None = None

    def fit(self, dataset: Dataset) -> None:
        seed = int(self.rng.integers(2**63))
        self.state = gp_fit(dataset, self.search_budget, seed)

    def predict_many(self, X):
        if self.state is None:
            raise NotFittedError("fit the GP before predicting")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.state.bounds.dim:
            raise ValueError(f"expected points of dimension {self.state.bounds.dim}, got {X.shape[1]}")
        mean, var = self.state.predict_normalized(self.state.bounds.to_unit(X))
        return self.state.scaler.inverse_mean(mean), self.state.scaler.inverse_std(np.sqrt(var))
