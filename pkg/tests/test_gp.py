import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from npbo.gp import (
    GaussianProcess,
    GpHyperparameters,
    fit_normalized,
    gp_fit,
    gp_predict,
    kernel_matrix,
    rbf_kernel,
)
from npbo.surrogate import Bounds, Dataset, NotFittedError
from oracles import dense_posterior


def hp(ls, amp=1.0, noise=1e-6):
    return GpHyperparameters(np.atleast_1d(np.asarray(ls, dtype=float)), amp, noise)


def test_kernel_at_zero_distance_is_amplitude():
    assert rbf_kernel([0.3, 0.4], [0.3, 0.4], hp([1.0, 2.0], amp=2.5)) == 2.5


def test_kernel_unit_offsets():
    assert rbf_kernel([0.0, 0.0], [1.0, 1.0], hp([1.0, 1.0])) == pytest.approx(np.exp(-1.0), rel=1e-15)


def test_kernel_decays_monotonically():
    h = hp([0.5])
    values = [rbf_kernel([0.0], [d], h) for d in np.linspace(0, 20, 200)]
    assert np.all(np.diff(values) <= 0)
    assert values[-1] < 1e-300 or values[-1] == 0.0


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        rbf_kernel([0.0, 1.0], [0.0], hp([1.0, 1.0]))


def test_hyperparameters_validated():
    with pytest.raises(ValueError):
        hp([1.0], noise=1e-9)
    with pytest.raises(ValueError):
        hp([-1.0])


def test_two_point_alpha_matches_closed_form():
    h = hp([0.4], amp=1.3, noise=1e-3)
    X = np.array([[0.2], [0.7]])
    y = np.array([0.5, -1.1])
    state = fit_normalized(X, y, h)
    k12 = rbf_kernel(X[0], X[1], h)
    a = h.amplitude + h.noise_variance
    det = a * a - k12 * k12
    expected = np.array([a * y[0] - k12 * y[1], -k12 * y[0] + a * y[1]]) / det
    np.testing.assert_allclose(state.alpha, expected, rtol=0, atol=1e-10)


def test_fitted_state_invariants():
    rng = np.random.default_rng(0)
    X = rng.random((10, 2))
    y = rng.normal(size=10)
    h = hp([0.3, 0.6], amp=0.8, noise=1e-4)
    state = fit_normalized(X, y, h)
    K = kernel_matrix(X, X, h) + h.noise_variance * np.eye(10)
    L = state.cholesky_factor
    assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-8
    assert np.max(np.abs(K @ state.alpha - y)) < 1e-8


def test_three_point_posterior_matches_dense_inverse():
    h = hp([0.3, 0.5], amp=1.7, noise=1e-3)
    X = np.array([[0.1, 0.2], [0.5, 0.9], [0.8, 0.4]])
    y = np.array([1.0, -0.5, 0.25])
    Xq = np.array([[0.3, 0.3], [0.9, 0.9], [0.5, 0.9]])
    mean, var = fit_normalized(X, y, h).predict_normalized(Xq)
    m_ref, v_ref = dense_posterior(X, y, Xq, h)
    np.testing.assert_allclose(mean, m_ref, rtol=0, atol=1e-8)
    np.testing.assert_allclose(var, v_ref, rtol=0, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_posterior_matches_dense_inverse_property(n, d, seed):
    rng = np.random.default_rng(seed)
    h = GpHyperparameters(np.exp(rng.uniform(np.log(0.1), np.log(2.0), d)),
                          float(np.exp(rng.uniform(-1, 1))), float(np.exp(rng.uniform(np.log(1e-4), np.log(1e-1)))))
    X = rng.random((n, d))
    y = rng.normal(size=n)
    Xq = rng.random((5, d))
    mean, var = fit_normalized(X, y, h).predict_normalized(Xq)
    m_ref, v_ref = dense_posterior(X, y, Xq, h)
    np.testing.assert_allclose(mean, m_ref, rtol=0, atol=1e-8)
    np.testing.assert_allclose(var, v_ref, rtol=0, atol=1e-8)


def test_interpolates_training_points():
    h = hp([0.2], amp=1.0, noise=1e-8)
    X = np.array([[0.1], [0.4], [0.8]])
    y = np.array([0.3, -1.0, 0.6])
    mean, var = fit_normalized(X, y, h).predict_normalized(X)
    np.testing.assert_allclose(mean, y, atol=1e-3)
    assert np.all(np.sqrt(var) < 1e-2)


def test_reverts_to_prior_far_away():
    h = hp([0.05], amp=2.0, noise=1e-4)
    state = fit_normalized(np.array([[0.0], [0.05]]), np.array([1.0, -1.0]), h)
    _, var = state.predict_normalized(np.array([[1.0]]))
    assert np.sqrt(var[0]) == pytest.approx(np.sqrt(2.0 + 1e-4), rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_variance_bounded_by_prior_and_shrinks_with_data(n, extra, seed):
    rng = np.random.default_rng(seed)
    h = hp(rng.uniform(0.05, 1.0, 2), amp=float(rng.uniform(0.1, 3)), noise=float(rng.uniform(1e-6, 1e-1)))
    X = rng.random((n + extra, 2))
    y = rng.normal(size=n + extra)
    Xq = rng.random((20, 2))
    _, var_small = fit_normalized(X[:n], y[:n], h).predict_normalized(Xq)
    _, var_big = fit_normalized(X, y, h).predict_normalized(Xq)
    assert np.all(var_small <= h.amplitude + h.noise_variance + 1e-9)
    assert np.all(var_big <= var_small + 1e-9)


def _dataset(X, y, lower=0.0, upper=1.0):
    d = np.atleast_2d(X).shape[1]
    return Dataset.from_arrays(Bounds(np.full(d, lower), np.full(d, upper)), X, y)


def test_single_observation_and_duplicates_fit():
    state = gp_fit(_dataset([[0.5]], [2.0]), search_budget=8, seed=0)
    assert np.isfinite(gp_predict(state, [0.1]).mean)
    state = gp_fit(_dataset([[0.5], [0.5], [0.2]], [1.0, 3.0, 0.0]), search_budget=8, seed=0)
    pred = gp_predict(state, [0.5])
    assert np.isfinite(pred.mean) and pred.stddev >= 0


def test_constant_targets_predict_the_constant():
    rng = np.random.default_rng(0)
    X = rng.random((6, 2))
    state = gp_fit(_dataset(X, np.full(6, 4.2)), search_budget=16, seed=1)
    for x in rng.random((10, 2)):
        assert gp_predict(state, x).mean == pytest.approx(4.2, abs=1e-9)


def test_held_out_rmse_beats_constant_predictor():
    rng = np.random.default_rng(5)
    f = lambda x: np.sin(3 * x) + 0.5 * x
    X = rng.uniform(-2, 2, (30, 1))
    ds = _dataset(X, f(X[:, 0]), lower=-2.0, upper=2.0)
    state = gp_fit(ds, search_budget=64, seed=0)
    grid = np.linspace(-2, 2, 200)
    pred = np.array([gp_predict(state, [g]).mean for g in grid])
    rmse = np.sqrt(np.mean((pred - f(grid)) ** 2))
    baseline = np.sqrt(np.mean((ds.y.mean() - f(grid)) ** 2))
    assert rmse < baseline


def test_fit_is_reproducible():
    rng = np.random.default_rng(2)
    X = rng.random((12, 3))
    ds = _dataset(X, rng.normal(size=12))
    a = gp_fit(ds, search_budget=16, seed=7)
    b = gp_fit(ds, search_budget=16, seed=7)
    assert a.alpha.tobytes() == b.alpha.tobytes()
    assert a.hyperparameters.length_scale.tobytes() == b.hyperparameters.length_scale.tobytes()


def test_selected_hyperparameters_in_search_box():
    rng = np.random.default_rng(3)
    ds = _dataset(rng.random((15, 2)), rng.normal(size=15))
    h = gp_fit(ds, search_budget=32, seed=0).hyperparameters
    assert np.all((h.length_scale >= 1e-2) & (h.length_scale <= 10))
    assert 1e-2 <= h.amplitude <= 10 and 1e-6 <= h.noise_variance <= 1e-1


def test_predict_requires_fit_and_matching_dimension():
    with pytest.raises(NotFittedError):
        GaussianProcess().predict([0.5])
    with pytest.raises(NotFittedError):
        gp_predict(None, [0.5])
    model = GaussianProcess(search_budget=4)
    model.fit(_dataset([[0.1, 0.2], [0.3, 0.4]], [1.0, 2.0]))
    with pytest.raises(ValueError):
        model.predict([0.5])


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        gp_fit(Dataset(Bounds([0.0], [1.0])))


def test_fuzzed_predictions_are_finite():
    rng = np.random.default_rng(11)
    bounds = Bounds([-5.0, 0.0], [10.0, 15.0])
    X = bounds.sample(rng, 40)
    model = GaussianProcess(search_budget=16, seed=0)
    model.fit(Dataset.from_arrays(bounds, X, np.sin(X[:, 0]) * X[:, 1]))
    mean, std = model.predict_many(bounds.sample(rng, 10_000))
    assert np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std >= 0)
