"""Small feed-forward networks with hand-written reverse mode.

Parameters live in one flat float64 vector. Each layer contributes its
weight matrix (``fan_in x fan_out``, row-major) followed by its bias, so a
single 1 -> 1 layer with weight 2 and bias 1 is ``values == [2.0, 1.0]``.

All batch routines take inputs shaped ``(n, input_dim)``; the vector
helpers :func:`mlp_forward` and :func:`mlp_backward` wrap them for a single
input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

ACTIVATIONS = ("relu", "tanh")


class ShapeError(ValueError):
    """Raised when an array does not have the length a network expects."""


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: tuple[int, ...]
    output_dim: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer widths must be >= 1, got {dims}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @cached_property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_layers, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    @cached_property
    def n_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_shapes)


def _layer_views(flat, spec):
    out = []
    offset = 0
    for fan_in, fan_out in spec.layer_shapes:
        w = flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = flat[offset:offset + fan_out]
        offset += fan_out
        out.append((w, b))
    return out


@dataclass
class MlpParameters:
    values: np.ndarray
    spec: MlpSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params,):
            raise ShapeError(
                f"expected {self.spec.n_params} parameters, got shape {self.values.shape}"
            )
        self._layers = _layer_views(self.values, self.spec)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views ``(W, b)`` into :attr:`values`, one pair per layer."""
        return self._layers

    def copy(self) -> "MlpParameters":
        return MlpParameters(self.values.copy(), self.spec)


@dataclass
class GradientTape:
    parameter_gradient: np.ndarray
    input_gradient: np.ndarray


def init_parameters(spec: MlpSpec, rng: np.random.Generator) -> MlpParameters:
    """He-uniform weights, biases uniform in +-1/sqrt(fan_in).

    Non-zero biases spread the ReLU kinks over the input range instead of
    stacking them all at the origin.
    """
    chunks = []
    for fan_in, fan_out in spec.layer_shapes:
        limit = np.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
        chunks.append(rng.uniform(-1.0, 1.0, size=fan_out) / np.sqrt(fan_in))
    return MlpParameters(np.concatenate(chunks), spec)


def _activate(kind, pre):
    if kind == "relu":
        return np.maximum(pre, 0.0)
    return np.tanh(pre)


def _activate_grad(kind, pre, post, upstream):
    if kind == "relu":
        return upstream * (pre > 0.0)
    return upstream * (1.0 - post * post)


def _check_batch(x, width, what):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what}: expected shape (n, {width}), got {x.shape}")
    return x


def forward_batch(params: MlpParameters, inputs: np.ndarray):
    """Forward pass over rows of ``inputs``.

    Returns ``(outputs, cache)``; the cache feeds :func:`backward_batch`.
    """
    spec = params.spec
    h = _check_batch(inputs, spec.input_dim, "mlp input")
    layers = params.layers()
    cache = [h]
    for i, (w, b) in enumerate(layers):
        pre = h @ w + b
        if i == len(layers) - 1:
            h = pre
        else:
            h = _activate(spec.activation, pre)
            cache.append((pre, h))
    return h, cache


def backward_batch(params: MlpParameters, cache, output_gradient: np.ndarray):
    """Reverse pass; returns ``(parameter_gradient, input_gradient)``.

    The parameter gradient is summed over the batch rows; the input gradient
    keeps one row per input.
    """
    spec = params.spec
    layers = params.layers()
    n = cache[0].shape[0]
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != (n, spec.output_dim):
        raise ShapeError(f"output gradient: expected shape {(n, spec.output_dim)}, got {g.shape}")
    flat = np.empty(spec.n_params)
    grad_views = _layer_views(flat, spec)
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = grad_views[i]
        layer_in = cache[0] if i == 0 else cache[i][1]
        np.matmul(layer_in.T, g, out=gw)
        np.sum(g, axis=0, out=gb)
        g = g @ w.T
        if i > 0:
            pre, post = cache[i]
            g = _activate_grad(spec.activation, pre, post, g)
    return flat, g


def mlp_forward(params: MlpParameters, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.spec.input_dim,):
        raise ShapeError(f"mlp input: expected length {params.spec.input_dim}, got shape {x.shape}")
    out, _ = forward_batch(params, x[None, :])
    return out[0]


def mlp_backward(params: MlpParameters, x, output_gradient) -> GradientTape:
    x = np.asarray(x, dtype=np.float64)
    output_gradient = np.asarray(output_gradient, dtype=np.float64)
    if x.shape != (params.spec.input_dim,):
        raise ShapeError(f"mlp input: expected length {params.spec.input_dim}, got shape {x.shape}")
    if output_gradient.shape != (params.spec.output_dim,):
        raise ShapeError(
            f"output gradient: expected length {params.spec.output_dim}, got shape {output_gradient.shape}"
        )
    _, cache = forward_batch(params, x[None, :])
    pg, ig = backward_batch(params, cache, output_gradient[None, :])
    return GradientTape(pg, ig[0])


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = field(default=0)

    @classmethod
    def zeros(cls, n: int, **kwargs) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **kwargs)


def adam_step(params: MlpParameters, gradient, state: AdamState, step_index: int,
              learning_rate: float) -> tuple[MlpParameters, AdamState]:
    """One bias-corrected Adam update; ``step_index`` counts from 1.

    Returns new parameter and state objects; the inputs are left untouched.
    """
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != params.values.shape:
        raise ShapeError(f"gradient shape {gradient.shape} != parameter shape {params.values.shape}")
    if not learning_rate > 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if step_index < 1:
        raise ValueError(f"step_index counts from 1, got {step_index}")
    if not np.all(np.isfinite(gradient)):
        raise FloatingPointError("non-finite entries in gradient")

    b1, b2 = state.beta1, state.beta2
    m = b1 * state.first_moment + (1.0 - b1) * gradient
    v = b2 * state.second_moment + (1.0 - b2) * gradient * gradient
    m_hat = m / (1.0 - b1 ** step_index)
    v_hat = v / (1.0 - b2 ** step_index)
    values = params.values - learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(values)):
        raise FloatingPointError("update produced non-finite parameters")
    new_state = AdamState(m, v, b1, b2, state.eps, step_index)
    return MlpParameters(values, params.spec), new_state
