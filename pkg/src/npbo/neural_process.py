"""Latent-variable neural process used as a Bayesian optimization surrogate.

Three networks see the data:

* a deterministic encoder mapping each ``(x, y)`` to ``r_i``; the mean of
  those is the representation ``r``,
* a probabilistic encoder mapping each ``(x, y)`` to ``s_i``; the mean is
  passed through a latent head producing a diagonal Gaussian over ``z``,
* a decoder mapping ``(x, r, z)`` to a Gaussian over ``y``.

Training minimizes, per step, the target negative log-likelihood under a
reparameterized draw ``z ~ q(z | target)`` with ``r`` built from the context
only, plus ``KL(q(z | target) || q(z | context))``. At prediction time all
observations act as the context.

Point sets are arrays of shape ``(n, d + 1)`` whose last column is ``y``.
They are sorted lexicographically before pooling, which makes every
aggregate (and hence every prediction) exactly independent of the order in
which observations arrive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .mlp import (
    AdamState,
    MlpParameters,
    MlpSpec,
    adam_step,
    backward_batch,
    forward_batch,
    init_parameters,
)
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

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
MAX_SKIPPED_STEPS = 50


@dataclass(frozen=True)
class NpConfig:
    r_dim: int = 16
    z_dim: int = 16
    encoder_hidden: tuple[int, ...] = (64, 64)
    latent_hidden: tuple[int, ...] = (64,)
    decoder_hidden: tuple[int, ...] = (64, 64)
    train_steps_per_fit: int = 200
    learning_rate: float = 1e-3
    context_fraction_range: tuple[float, float] = (0.3, 0.8)
    latent_samples_inference: int = 16
    variance_floor: float = 1e-3
    seed: int = 0
    warm_start: bool = True
    activation: str = "relu"

    def __post_init__(self):
        lo, hi = self.context_fraction_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"context_fraction_range must satisfy 0 < min <= max < 1, got {(lo, hi)}")
        if self.variance_floor <= 0:
            raise ValueError("variance_floor must be positive")
        for name in ("r_dim", "z_dim", "latent_samples_inference"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.train_steps_per_fit < 0:
            raise ValueError("train_steps_per_fit must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class LatentGaussian:
    mean: np.ndarray
    stddev: np.ndarray

    @classmethod
    def standard(cls, dim: int) -> "LatentGaussian":
        return cls(np.zeros(dim), np.ones(dim))


@dataclass
class NpNetworks:
    deterministic_encoder: MlpParameters
    probabilistic_encoder: MlpParameters
    latent_head: MlpParameters
    decoder: MlpParameters
    variance_floor: float = 1e-3

    FIELDS = ("deterministic_encoder", "probabilistic_encoder", "latent_head", "decoder")

    @property
    def x_dim(self) -> int:
        return self.deterministic_encoder.spec.input_dim - 1

    @property
    def z_dim(self) -> int:
        return self.latent_head.spec.output_dim // 2

    @property
    def r_dim(self) -> int:
        return self.deterministic_encoder.spec.output_dim

    def parts(self) -> list[MlpParameters]:
        return [getattr(self, f) for f in self.FIELDS]

    def with_parts(self, parts) -> "NpNetworks":
        return NpNetworks(*parts, variance_floor=self.variance_floor)


def build_networks(x_dim: int, config: NpConfig, rng: np.random.Generator) -> NpNetworks:
    s_dim = config.r_dim
    act = config.activation
    specs = [
        MlpSpec(x_dim + 1, config.encoder_hidden, config.r_dim, act),
        MlpSpec(x_dim + 1, config.encoder_hidden, s_dim, act),
        MlpSpec(s_dim, config.latent_hidden, 2 * config.z_dim, act),
        MlpSpec(x_dim + config.r_dim + config.z_dim, config.decoder_hidden, 2, act),
    ]
    return NpNetworks(*(init_parameters(s, rng) for s in specs), variance_floor=config.variance_floor)


def canonical_order(points: np.ndarray) -> np.ndarray:
    """Row order sorting ``points`` lexicographically (first column major)."""
    return np.lexsort(points.T[::-1])


def _as_points(points) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("point set must be a non-empty (n, d + 1) array")
    return points[canonical_order(points)]


def _softplus(u):
    return np.logaddexp(0.0, u)


def encode_aggregate(encoder: MlpParameters, points) -> np.ndarray:
    """Mean of the per-point encodings of ``points``."""
    pooled, _ = _encode(encoder, _as_points(points))
    return pooled


def _encode(encoder, sorted_points):
    out, cache = forward_batch(encoder, sorted_points)
    return out.mean(axis=0), cache


def _encode_backward(encoder, cache, grad_pooled):
    n = cache[0].shape[0]
    g = np.broadcast_to(grad_pooled / n, (n, grad_pooled.size))
    pg, _ = backward_batch(encoder, cache, g)
    return pg


def _posterior_forward(networks, sorted_points):
    s, enc_cache = _encode(networks.probabilistic_encoder, sorted_points)
    head_out, head_cache = forward_batch(networks.latent_head, s[None, :])
    z_dim = networks.z_dim
    mean = head_out[0, :z_dim]
    raw = head_out[0, z_dim:]
    std = networks.variance_floor + _softplus(raw)
    return LatentGaussian(mean, std), (enc_cache, head_cache, raw)


def _posterior_backward(networks, caches, grad_mean, grad_std):
    enc_cache, head_cache, raw = caches
    g_out = np.concatenate((grad_mean, grad_std * expit(raw)))[None, :]
    head_grad, g_s = backward_batch(networks.latent_head, head_cache, g_out)
    enc_grad = _encode_backward(networks.probabilistic_encoder, enc_cache, g_s[0])
    return enc_grad, head_grad


def latent_posterior(networks: NpNetworks, points) -> LatentGaussian:
    posterior, _ = _posterior_forward(networks, _as_points(points))
    return posterior


def sample_latent(posterior: LatentGaussian, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != posterior.mean.shape[0]:
        raise ValueError(f"noise has trailing dimension {noise.shape[-1]}, expected {posterior.mean.shape[0]}")
    return posterior.mean + posterior.stddev * noise


def kl_diag_gaussians(q: LatentGaussian, p: LatentGaussian) -> float:
    """KL(q || p) for diagonal Gaussians."""
    if q.mean.shape != p.mean.shape:
        raise ValueError("KL between Gaussians of different dimension")
    if np.any(q.stddev <= 0) or np.any(p.stddev <= 0):
        raise ValueError("standard deviations must be positive")
    diff = q.mean - p.mean
    terms = (np.log(p.stddev / q.stddev)
             + (q.stddev * q.stddev + diff * diff) / (2.0 * p.stddev * p.stddev) - 0.5)
    return float(terms.sum())


@dataclass
class ElboResult:
    loss: float
    nll: float
    kl: float
    gradients: list[np.ndarray]  # one flat vector per network, in NpNetworks.FIELDS order


def _decoder_inputs(x, r, z):
    n = x.shape[0]
    return np.hstack((x, np.broadcast_to(r, (n, r.size)), np.broadcast_to(z, (n, z.size))))


def elbo_loss(networks: NpNetworks, context, target, noise) -> ElboResult:
    """Negative modified ELBO for one context/target split and its gradients.

    ``noise`` is the standard-normal draw used to reparameterize ``z``.
    """
    ctx = _as_points(context)
    tgt = _as_points(target)
    x_dim = networks.x_dim
    floor = networks.variance_floor

    r, det_cache = _encode(networks.deterministic_encoder, ctx)
    q_t, t_caches = _posterior_forward(networks, tgt)
    q_c, c_caches = _posterior_forward(networks, ctx)
    noise = np.asarray(noise, dtype=np.float64)
    z = sample_latent(q_t, noise)

    dec_in = _decoder_inputs(tgt[:, :x_dim], r, z)
    dec_out, dec_cache = forward_batch(networks.decoder, dec_in)
    mu = dec_out[:, 0]
    raw = dec_out[:, 1]
    sigma = floor + _softplus(raw)
    resid = (tgt[:, x_dim] - mu) / sigma
    nll = float(np.sum(_HALF_LOG_2PI + np.log(sigma) + 0.5 * resid * resid))
    kl = kl_diag_gaussians(q_t, q_c)
    loss = nll + kl

    # decoder
    g_mu = -resid / sigma
    g_sigma = 1.0 / sigma - resid * resid / sigma
    g_dec_out = np.column_stack((g_mu, g_sigma * expit(raw)))
    dec_grad, g_in = backward_batch(networks.decoder, dec_cache, g_dec_out)
    g_r = g_in[:, x_dim:x_dim + r.size].sum(axis=0)
    g_z = g_in[:, x_dim + r.size:].sum(axis=0)
    det_grad = _encode_backward(networks.deterministic_encoder, det_cache, g_r)

    # KL(q_t || q_c) and the reparameterized sample
    diff = q_t.mean - q_c.mean
    var_c = q_c.stddev * q_c.stddev
    g_mean_t = g_z + diff / var_c
    g_std_t = g_z * noise - 1.0 / q_t.stddev + q_t.stddev / var_c
    g_mean_c = -diff / var_c
    g_std_c = 1.0 / q_c.stddev - (q_t.stddev * q_t.stddev + diff * diff) / (var_c * q_c.stddev)

    enc_t, head_t = _posterior_backward(networks, t_caches, g_mean_t, g_std_t)
    enc_c, head_c = _posterior_backward(networks, c_caches, g_mean_c, g_std_c)
    return ElboResult(loss, nll, kl, [det_grad, enc_t + enc_c, head_t + head_c, dec_grad])


@dataclass
class NpFittedState:
    networks: NpNetworks
    optimizer_states: list[AdamState]
    step: int
    bounds: Bounds | None = None
    scaler: Standardizer | None = None
    context: np.ndarray | None = None        # sorted normalized points
    inference_noise: np.ndarray | None = None
    losses: list[float] = field(default_factory=list)


def init_state(x_dim: int, config: NpConfig, rng: np.random.Generator) -> NpFittedState:
    networks = build_networks(x_dim, config, rng)
    return NpFittedState(networks, [AdamState.zeros(p.values.size) for p in networks.parts()], 0)


def split_context_target(n: int, config: NpConfig, rng: np.random.Generator):
    """Random disjoint context/target index sets (both non-empty)."""
    frac = rng.uniform(*config.context_fraction_range)
    n_context = int(np.clip(round(frac * n), 1, n - 1))
    perm = rng.permutation(n)
    return np.sort(perm[:n_context]), np.sort(perm[n_context:])


def train_step(state: NpFittedState, points: np.ndarray, config: NpConfig,
               rng: np.random.Generator) -> float | None:
    """One Adam step on a fresh split; returns the loss or ``None`` if skipped."""
    ctx_idx, tgt_idx = split_context_target(points.shape[0], config, rng)
    noise = rng.standard_normal(state.networks.z_dim)
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            res = elbo_loss(state.networks, points[ctx_idx], points[tgt_idx], noise)
        if not np.isfinite(res.loss):
            raise FloatingPointError("non-finite loss")
        step = state.step + 1
        new_parts, new_opt = [], []
        for params, grad, opt in zip(state.networks.parts(), res.gradients, state.optimizer_states):
            p, o = adam_step(params, grad, opt, step, config.learning_rate)
            new_parts.append(p)
            new_opt.append(o)
    except FloatingPointError as exc:
        logger.debug("skipping NP training step: %s", exc)
        return None
    state.networks = state.networks.with_parts(new_parts)
    state.optimizer_states = new_opt
    state.step = step
    return res.loss


def _centered(U):
    # the networks see inputs on [-1, 1]; with [0, 1] inputs every first-layer
    # ReLU starts with its kink at the domain edge and fits slowly
    return 2.0 * U - 1.0


def np_fit(dataset: Dataset, config: NpConfig, warm_start: NpFittedState | None = None,
           rng: np.random.Generator | None = None) -> NpFittedState:
    """Train for ``config.train_steps_per_fit`` steps on ``dataset``.

    Training resumes from ``warm_start`` when given (its networks and Adam
    moments are copied, not mutated).
    """
    if len(dataset) < 2:
        raise FitError("the neural process needs at least two observations to split into context and target")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    X, y, scaler = prepare_training_data(dataset)
    points = np.column_stack((_centered(X), y))
    points = points[canonical_order(points)]

    if warm_start is None:
        state = init_state(dataset.dim, config, rng)
    else:
        state = replace(warm_start, losses=[])

    skipped = 0
    for _ in range(config.train_steps_per_fit):
        loss = train_step(state, points, config, rng)
        if loss is None:
            skipped += 1
            if skipped > MAX_SKIPPED_STEPS:
                raise FitError(f"more than {MAX_SKIPPED_STEPS} consecutive non-finite training steps")
            continue
        skipped = 0
        state.losses.append(loss)

    state.bounds = dataset.bounds
    state.scaler = scaler
    state.context = points
    state.inference_noise = rng.standard_normal((config.latent_samples_inference, state.networks.z_dim))
    return state


def _decoder_rollout(decoder: MlpParameters, U: np.ndarray, r: np.ndarray, Z: np.ndarray):
    """Decoder outputs for every (query, latent sample) pair.

    The first layer is split so the ``(r, z)`` contribution is computed once
    per sample. Returns an array of shape ``(n_samples, n_queries, 2)``.
    """
    spec = decoder.spec
    layers = decoder.layers()
    x_dim = U.shape[1]
    w0, b0 = layers[0]
    from_x = U @ w0[:x_dim]
    from_rz = r @ w0[x_dim:x_dim + r.size] + Z @ w0[x_dim + r.size:] + b0
    h = from_x[None, :, :] + from_rz[:, None, :]
    if len(layers) == 1:
        return h
    h = np.maximum(h, 0.0) if spec.activation == "relu" else np.tanh(h)
    for i, (w, b) in enumerate(layers[1:], start=1):
        h = h @ w + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0) if spec.activation == "relu" else np.tanh(h)
    return h


def predict_normalized(state: NpFittedState, U: np.ndarray, noise: np.ndarray | None = None):
    """Moment-matched predictive mean and stddev at unit-cube points (standardized units)."""
    nets = state.networks
    ctx = state.context
    noise = state.inference_noise if noise is None else np.atleast_2d(noise)
    r, _ = _encode(nets.deterministic_encoder, ctx)
    posterior, _ = _posterior_forward(nets, ctx)
    Z = sample_latent(posterior, noise)
    out = _decoder_rollout(nets.decoder, _centered(np.atleast_2d(U)), r, Z)
    m = out[..., 0]
    s = nets.variance_floor + _softplus(out[..., 1])
    mean = m.mean(axis=0)
    second = (s * s + m * m).mean(axis=0)
    var = np.maximum(second - mean * mean, 0.0)
    return mean, np.maximum(np.sqrt(var), nets.variance_floor)


def np_predict(state: NpFittedState | None, x) -> PredictiveDistribution:
    if state is None or state.context is None:
        raise NotFittedError("np_predict needs a state produced by np_fit")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (state.bounds.dim,):
        raise ValueError(f"expected a point of length {state.bounds.dim}, got shape {x.shape}")
    mean, std = predict_normalized(state, state.bounds.to_unit(x)[None, :])
    return PredictiveDistribution(float(state.scaler.inverse_mean(mean[0])),
                                  float(state.scaler.inverse_std(std[0])))


class NeuralProcess(BatchPredictMixin):
    """Surrogate wrapper that warm-starts training across successive fits."""

    def __init__(self, config: NpConfig | None = None):
        self.config = config or NpConfig()
        self.rng = np.random.default_rng(self.config.seed)
        self.state: NpFittedState | None = None

    def fit(self, dataset: Dataset) -> None:
        previous = self.state if self.config.warm_start else None
        self.state = np_fit(dataset, self.config, warm_start=previous, rng=self.rng)

    def predict_many(self, X):
        if self.state is None:
            raise NotFittedError("fit the neural process before predicting")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.state.bounds.dim:
            raise ValueError(f"expected points of dimension {self.state.bounds.dim}, got {X.shape[1]}")
        mean, std = predict_normalized(self.state, self.state.bounds.to_unit(X))
        return self.state.scaler.inverse_mean(mean), self.state.scaler.inverse_std(std)
