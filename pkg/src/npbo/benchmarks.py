"""Synthetic minimization benchmarks and a vector-output calibration problem.

All benchmark functions are minimized. The raw formulas accept arrays of
points along the last axis; :meth:`BenchmarkProblem.evaluate` checks a
single point and returns a float. ``as_maximization`` wraps any of
them for the optimization loop, which maximizes.

Optimum values are the minima of the encoded formulas (refined numerically
from the literature minimizers), so they are true lower bounds over the
domains rather than rounded literature figures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .surrogate import Bounds


@dataclass(frozen=True)
class BenchmarkProblem:
    name: str
    dimension: int
    bounds: Bounds
    function: Callable[[np.ndarray], float]
    known_optimum_value: float | None = None
    known_optimizer: np.ndarray | None = None

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dimension,):
            raise ValueError(f"{self.name}: expected {self.dimension} inputs, got shape {x.shape}")
        if not self.bounds.contains(x, atol=1e-12):
            raise ValueError(f"{self.name}: {x} lies outside the domain")
        return float(self.function(x))

    __call__ = evaluate


class _Negated:
    def __init__(self, problem):
        self.problem = problem
        self.bounds = problem.bounds

    def __call__(self, x) -> float:
        return -self.problem(x)


def as_maximization(problem):
    """View a minimization problem as ``x -> -f(x)``."""
    return _Negated(problem)


def branin(x):
    x1, x2 = x[..., 0], x[..., 1]
    b = 5.1 / (4 * np.pi ** 2)
    c = 5 / np.pi
    t = 1 / (8 * np.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6) ** 2 + 10 * (1 - t) * np.cos(x1) + 10


def camelback(x):
    x1, x2 = x[..., 0], x[..., 1]
    return (4 - 2.1 * x1 ** 2 + x1 ** 4 / 3) * x1 ** 2 + x1 * x2 + (-4 + 4 * x2 ** 2) * x2 ** 2


def forrester(x):
    return (6 * x[..., 0] - 2) ** 2 * np.sin(12 * x[..., 0] - 4)


def goldstein_price(x):
    x1, x2 = x[..., 0], x[..., 1]
    a = 1 + (x1 + x2 + 1) ** 2 * (19 - 14 * x1 + 3 * x1 ** 2 - 14 * x2 + 6 * x1 * x2 + 3 * x2 ** 2)
    b = 30 + (2 * x1 - 3 * x2) ** 2 * (18 - 32 * x1 + 12 * x1 ** 2 + 48 * x2 - 36 * x1 * x2 + 27 * x2 ** 2)
    return a * b


def sin_one(x):
    return 0.5 * np.sin(13 * x[..., 0]) * np.sin(27 * x[..., 0]) + 0.5


_HARTMANN_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
_HARTMANN3_A = np.array([
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
    [3.0, 10.0, 30.0],
    [0.1, 10.0, 35.0],
])
_HARTMANN3_P = 1e-4 * np.array([
    [3689, 1170, 2673],
    [4699, 4387, 7470],
    [1091, 8732, 5547],
    [381, 5743, 8828],
])
_HARTMANN6_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
_HARTMANN6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])


def _hartmann(x, A, P):
    x = np.asarray(x)[..., None, :]
    return -np.exp(-(A * (x - P) ** 2).sum(axis=-1)) @ _HARTMANN_ALPHA


def hartmann3(x):
    return _hartmann(x, _HARTMANN3_A, _HARTMANN3_P)


def hartmann6(x):
    return _hartmann(x, _HARTMANN6_A, _HARTMANN6_P)


def _box(lower, upper):
    return Bounds(np.array(lower, dtype=float), np.array(upper, dtype=float))


BENCHMARKS: dict[str, BenchmarkProblem] = {
    p.name: p
    for p in [
        BenchmarkProblem("branin", 2, _box([-5, 0], [10, 15]), branin,
                         0.39788735772973816, np.array([np.pi, 2.275])),
        BenchmarkProblem("camelback", 2, _box([-3, -2], [3, 2]), camelback,
                         -1.0316284534898774, np.array([0.08984200893527233, -0.712656403019058])),
        BenchmarkProblem("hartmann3", 3, _box([0] * 3, [1] * 3), hartmann3,
                         -3.862779787332663,
                         np.array([0.11458888826480075, 0.5556488893903354, 0.8525469795464348])),
        BenchmarkProblem("forrester", 1, _box([0], [1]), forrester,
                         -6.0207400557670825, np.array([0.7572487585232999])),
        BenchmarkProblem("goldsteinprice", 2, _box([-2, -2], [2, 2]), goldstein_price,
                         3.0, np.array([0.0, -1.0])),
        BenchmarkProblem("hartmann6", 6, _box([0] * 6, [1] * 6), hartmann6,
                         -3.3223680114155147,
                         np.array([0.2016895106414348, 0.15001069461424155, 0.4768739765861194,
                                   0.2753324285232711, 0.31165161724300744, 0.6573005330010271])),
        BenchmarkProblem("sinone", 1, _box([0], [1]), sin_one,
                         0.04292634243364646, np.array([0.6330131614920673])),
    ]
}


def get_benchmark(name: str) -> BenchmarkProblem:
    key = name.lower().replace("_", "").replace("-", "")
    try:
        return BENCHMARKS[key]
    except KeyError:
        raise KeyError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


def evaluate_benchmark(name: str, x) -> float:
    return get_benchmark(name).evaluate(x)


# --- vector-output calibration -------------------------------------------

# generator-parameter ranges: T'do, Xd, Xq, X'd
CALIBRATION_BOUNDS = _box([5.625, 1.425, 1.35, 0.315], [9.375, 2.375, 2.25, 0.525])
CALIBRATION_OUTPUTS = 4
CALIBRATION_TRACE_LENGTH = 452
_SIMULATOR_SEED = 20210406
_N_MODES = 3


def vector_matching_objective(outputs, targets) -> float:
    """Sum over output channels of the Euclidean distance between traces.

    Both arguments are ``(m, L)`` arrays (a 1-D array is one channel).
    """
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if outputs.shape != targets.shape:
        raise ValueError(f"output shape {outputs.shape} does not match target shape {targets.shape}")
    return float(np.linalg.norm(outputs - targets, axis=1).sum())


class TraceSimulator:
    """Cheap smooth stand-in for a dynamic simulator.

    Maps ``d`` parameters to ``m`` traces of length ``L``. Each trace is an
    affine function of the unit-scaled parameters plus damped sinusoids
    whose amplitude, frequency and decay depend smoothly on the parameters.
    The structure is drawn once from a fixed seed.
    """

    def __init__(self, bounds: Bounds = CALIBRATION_BOUNDS, n_outputs: int = CALIBRATION_OUTPUTS,
                 length: int = CALIBRATION_TRACE_LENGTH, seed: int = _SIMULATOR_SEED):
        rng = np.random.default_rng(seed)
        d, m = bounds.dim, n_outputs
        self.bounds = bounds
        self.t = np.linspace(0.0, 1.0, length)
        self.offset = rng.uniform(-1, 1, m)
        self.linear = rng.uniform(-1, 1, (m, d))
        self.amplitude = rng.uniform(0.5, 1.5, (m, _N_MODES))
        self.amp_mod = rng.uniform(-0.5, 0.5, (m, _N_MODES, d))
        self.freq = rng.uniform(0.5, 3.0, (m, _N_MODES))
        self.freq_mod = rng.uniform(-0.3, 0.3, (m, _N_MODES, d))
        self.decay = rng.uniform(0.5, 2.0, (m, _N_MODES))
        self.decay_mod = rng.uniform(-0.5, 0.5, (m, _N_MODES, d))
        self.phase = rng.uniform(0, 2 * np.pi, (m, _N_MODES))

    def __call__(self, x) -> np.ndarray:
        u = self.bounds.to_unit(x) - 0.5
        amp = self.amplitude * (1 + self.amp_mod @ u)
        freq = self.freq * (1 + self.freq_mod @ u)
        decay = self.decay * (1 + self.decay_mod @ u)
        t = self.t
        modes = (amp[..., None] * np.exp(-decay[..., None] * t)
                 * np.sin(2 * np.pi * freq[..., None] * t + self.phase[..., None]))
        base = self.offset + self.linear @ u
        return base[:, None] + modes.sum(axis=1)


@dataclass(frozen=True)
class VectorMatchingProblem:
    simulator: Callable[[np.ndarray], np.ndarray]
    target_outputs: np.ndarray
    ground_truth_params: np.ndarray
    bounds: Bounds
    name: str = "synthetic-calibration"
    known_optimum_value: float = 0.0

    @property
    def dimension(self) -> int:
        return self.bounds.dim

    def evaluate(self, x) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dimension,):
            raise ValueError(f"expected {self.dimension} parameters, got shape {x.shape}")
        return vector_matching_objective(self.simulator(x), self.target_outputs)

    __call__ = evaluate


def make_synthetic_calibration(seed: int) -> VectorMatchingProblem:
    """A calibration trial: the simulator is fixed, the hidden parameters depend on ``seed``."""
    simulator = TraceSimulator()
    rng = np.random.default_rng(seed)
    truth = CALIBRATION_BOUNDS.from_unit(rng.uniform(0.1, 0.9, CALIBRATION_BOUNDS.dim))
    return VectorMatchingProblem(simulator, simulator(truth), truth, CALIBRATION_BOUNDS)
