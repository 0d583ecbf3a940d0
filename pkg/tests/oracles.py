"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np

from npbo.gp import rbf_kernel
from npbo.mlp import MlpParameters
from npbo.neural_process import build_networks, elbo_loss


def dense_posterior(X, y, Xq, hp):
    """Posterior via an explicit inverse, written independently of the Cholesky path."""
    n = len(X)
    K = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            K[i, j] = rbf_kernel(X[i], X[j], hp)
    Kinv = np.linalg.inv(K + hp.noise_variance * np.eye(n))
    means, variances = [], []
    for xq in Xq:
        k = np.array([rbf_kernel(xq, xi, hp) for xi in X])
        means.append(k @ Kinv @ y)
        variances.append(hp.amplitude - k @ Kinv @ k + hp.noise_variance)
    return np.array(means), np.array(variances)


def mc_ei(mean, std, incumbent, n=10_000_000, seed=0, chunk=2_000_000):
    rng = np.random.default_rng(seed)
    total = 0.0
    for start in range(0, n, chunk):
        y = mean + std * rng.standard_normal(min(chunk, n - start))
        total += np.maximum(y - incumbent, 0.0).sum()
    return total / n


def mc_kl(q, p, n=2_000_000, seed=0):
    """E_q[log q(z) - log p(z)] by sampling; independent of the closed form."""
    rng = np.random.default_rng(seed)
    z = q.mean + q.stddev * rng.standard_normal((n, q.mean.size))

    def logpdf(g):
        u = (z - g.mean) / g.stddev
        return (-0.5 * u * u - np.log(g.stddev) - 0.5 * np.log(2 * np.pi)).sum(axis=1)

    return float(np.mean(logpdf(q) - logpdf(p)))


def central_difference(f, values, step=1e-5):
    grad = np.empty_like(values)
    for i in range(values.size):
        up = values.copy()
        up[i] += step
        down = values.copy()
        down[i] -= step
        grad[i] = (f(up) - f(down)) / (2 * step)
    return grad


def rel_err(a, b, floor=1e-6):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def perturbed_networks(config, x_dim, seed, scale=0.3):
    rng = np.random.default_rng(seed)
    nets = build_networks(x_dim, config, rng)
    return nets.with_parts([MlpParameters(p.values + scale * rng.normal(size=p.values.size), p.spec)
                            for p in nets.parts()])


def elbo_gradient_error(config, x_dim, n_points, seed):
    """Worst relative error between the analytic ELBO gradient and central differences."""
    rng = np.random.default_rng(seed)
    nets = perturbed_networks(config, x_dim, seed)
    pts = rng.normal(size=(n_points, x_dim + 1))
    n_ctx = int(rng.integers(1, n_points))
    ctx, tgt = pts[:n_ctx], pts[n_ctx:]
    noise = rng.standard_normal(config.z_dim)
    res = elbo_loss(nets, ctx, tgt, noise)
    worst = 0.0
    for k, part in enumerate(nets.parts()):
        for i in range(part.values.size):
            parts = [p.copy() for p in nets.parts()]
            parts[k].values[i] += 1e-5
            up = elbo_loss(nets.with_parts(parts), ctx, tgt, noise).loss
            parts[k].values[i] -= 2e-5
            down = elbo_loss(nets.with_parts(parts), ctx, tgt, noise).loss
            fd = (up - down) / 2e-5
            an = res.gradients[k][i]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst
