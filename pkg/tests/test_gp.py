import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar
from sklearn.base import clone

from mixseq.exceptions import FitFailureError, InvalidArgumentError, NumericalFailureError
from mixseq.gp import (
    AGPRegressor,
    free_to_params,
    mixed_array,
    neg_log_likelihood,
    params_to_free,
    profile_mu,
)
from mixseq.kernels import KernelParams, cross_cov_matrix

from conftest import random_data, random_params


def dense_objective(params, X, Z, y, rel_jitter=1e-6):
    Phi = cross_cov_matrix(X, Z, X, Z, params) + rel_jitter * params.total_variance * np.eye(len(y))
    Pinv = np.linalg.inv(Phi)
    one = np.ones(len(y))
    mu = one @ Pinv @ y / (one @ Pinv @ one)
    r = y - mu
    return np.linalg.slogdet(Phi)[1] + r @ Pinv @ r, mu, Phi


def test_transform_roundtrip(rng):
    params = random_params(rng, (3, 2, 4), 2)
    back = free_to_params(params_to_free(params), (3, 2, 4), 2)
    np.testing.assert_allclose(back.sigma2, params.sigma2, rtol=1e-12)
    np.testing.assert_allclose(back.theta, params.theta, rtol=1e-12)
    for a, b in zip(back.angles, params.angles):
        np.testing.assert_allclose(a, b, rtol=1e-9)


def test_profile_mu_examples(rng):
    from scipy.linalg import cholesky

    A = rng.random((5, 5))
    Phi = A @ A.T + 5 * np.eye(5)
    chol = cholesky(Phi, lower=True)
    assert profile_mu(chol, np.full(5, 3.25)) == pytest.approx(3.25)
    y = rng.normal(size=5)
    assert profile_mu(np.eye(5), y) == pytest.approx(y.mean())
    Pinv = np.linalg.inv(Phi)
    res = minimize_scalar(lambda m: (y - m) @ Pinv @ (y - m))
    assert profile_mu(chol, y) == pytest.approx(res.x, abs=1e-6)


def test_likelihood_single_observation():
    params = KernelParams([0.7, 0.5], [[2.0], [1.0]], (np.array([1.0]), np.array([1.0, 2.0, 0.5])))
    v = neg_log_likelihood(params_to_free(params), np.array([[0.3]]), np.array([[1, 2]]), np.array([4.2]),
                           (2, 3))
    assert v == pytest.approx(np.log(1.2 * (1 + 1e-6)), rel=1e-9)


def test_likelihood_matches_dense_inverse(rng):
    for _ in range(10):
        counts = (3, 2)
        params = random_params(rng, counts, 2)
        X, Z = random_data(rng, 8, counts, 2)
        y = rng.normal(size=8)
        got = neg_log_likelihood(params_to_free(params), X, Z, y, counts)
        want, _, _ = dense_objective(params, X, Z, y)
        assert got == pytest.approx(want, abs=1e-8)


def test_likelihood_relabel_invariance(rng):
    counts = (3,)
    params = random_params(rng, counts, 1)
    X, Z = random_data(rng, 7, counts, 1)
    y = rng.normal(size=7)
    base = neg_log_likelihood(params_to_free(params), X, Z, y, counts)
    # swapping levels 1 and 2 of a 3-level factor: find angles whose T is the permuted matrix
    T = params.corr_matrices()[0]
    perm = np.array([1, 0, 2])
    Tp = T[np.ix_(perm, perm)]
    L = np.linalg.cholesky(Tp)
    a1 = np.arccos(L[1, 0])
    a2 = np.arccos(L[2, 0])
    a3 = np.arccos(np.clip(L[2, 1] / np.sin(a2), -1, 1))
    permuted = KernelParams(params.sigma2, params.theta, (np.array([a1, a2, a3]),))
    np.testing.assert_allclose(permuted.corr_matrices()[0], Tp, atol=1e-12)
    Zp = perm[Z - 1] + 1
    assert neg_log_likelihood(params_to_free(permuted), X, Zp, y, counts) == pytest.approx(base, abs=1e-9)


@given(st.integers(0, 10_000))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    counts = tuple(int(m) for m in rng.integers(2, 4, rng.integers(1, 3)))
    p = int(rng.integers(1, 3))
    params = random_params(rng, counts, p)
    X, Z = random_data(rng, 7, counts, p)
    # responses drawn from the model itself keep the objective on a sensible scale
    Phi = cross_cov_matrix(X, Z, X, Z, params) + 1e-6 * params.total_variance * np.eye(7)
    y = np.linalg.cholesky(Phi) @ rng.normal(size=7)
    u = params_to_free(params)
    _, g = neg_log_likelihood(u, X, Z, y, counts, return_grad=True)
    f = lambda v: neg_log_likelihood(v, X, Z, y, counts)  # noqa: E731

    def central(k, h):
        e = np.zeros_like(u)
        e[k] = h
        return (f(u + e) - f(u - e)) / (2 * h)

    # Richardson extrapolation keeps truncation error far below the tolerance
    h = 1e-3
    fd = np.array([(4 * central(k, h / 2) - central(k, h)) / 3 for k in range(len(u))])
    assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-4


def test_wrong_free_vector_length():
    with pytest.raises(InvalidArgumentError):
        neg_log_likelihood(np.zeros(2), np.zeros((2, 1)), np.ones((2, 1), int), np.zeros(2), (2,))


def fitted(rng, n=12, counts=(3,), p=1, seed=0):
    X, Z = random_data(rng, n, counts, p)
    y = np.sin(6 * X[:, 0]) + Z[:, 0] * 0.5
    return AGPRegressor(level_counts=counts, random_state=seed).fit(mixed_array(X, Z), y), X, Z, y


def test_fit_interpolates(rng):
    model, X, Z, y = fitted(rng)
    d = model.predict_dist(mixed_array(X, Z))
    assert np.all(np.abs(d.mean - y) <= 1e-6 * (1 + np.abs(y)))
    assert np.all(d.sd <= 1e-4 * np.sqrt(model.total_variance_))


def test_fit_attributes_and_invariants(rng):
    model, X, Z, y = fitted(rng, n=10, counts=(3, 2), p=2)
    Phi = cross_cov_matrix(X, Z, X, Z, model.params_)
    Phi[np.diag_indices_from(Phi)] += model.jitter_
    rec = model.chol_ @ model.chol_.T
    assert np.linalg.norm(rec - Phi) / np.linalg.norm(Phi) < 1e-8
    resid = Phi @ model.weights_ - (y - model.mu_)
    assert np.linalg.norm(resid) / np.linalg.norm(y - model.mu_) < 1e-8
    assert model.n_features_in_ == 4
    assert len(model.fit_diagnostics_) == 5
    assert np.isfinite(model.log_likelihood_)


def test_fit_beats_generating_parameters(rng):
    counts = (3,)
    true = KernelParams([1.0], [[8.0]], (np.array([1.2, 0.9, 1.4]),))
    X, Z = random_data(rng, 15, counts, 1)
    Phi = cross_cov_matrix(X, Z, X, Z, true) + 1e-8 * np.eye(15)
    y = 2.0 + np.linalg.cholesky(Phi) @ rng.normal(size=15)
    model = AGPRegressor(level_counts=counts, random_state=1).fit(mixed_array(X, Z), y)
    assert model.log_likelihood_ >= model.log_marginal_likelihood(true) - 1e-9


def test_predict_matches_dense_formula(rng):
    counts = (2,)
    params = random_params(rng, counts, 1)
    X = np.array([[0.2], [0.7]])
    Z = np.array([[1], [2]])
    y = np.array([1.0, -0.5])
    model = AGPRegressor(level_counts=counts, optimizer=None, kernel_params=params).fit(mixed_array(X, Z), y)
    _, mu, Phi = dense_objective(params, X, Z, y)
    a, b, c, d = Phi.ravel()
    inv = np.array([[d, -b], [-c, a]]) / (a * d - b * c)
    x0, z0 = np.array([[0.45]]), np.array([[1]])
    r0 = cross_cov_matrix(x0, z0, X, Z, params)[0]
    mean = mu + r0 @ inv @ (y - mu)
    var = params.total_variance - r0 @ inv @ r0
    dist = model.predict_dist(mixed_array(x0, z0))
    assert dist.mean[0] == pytest.approx(mean, abs=1e-9)
    assert dist.sd[0] == pytest.approx(np.sqrt(var), abs=1e-9)


def test_prior_reversion(rng):
    params = KernelParams([0.8, 0.4], [[1e3] * 2, [1e3] * 2], (np.array([1.0]), np.array([2.0])))
    X = rng.random((6, 2)) * 0.3
    Z = np.column_stack([rng.integers(1, 3, 6), rng.integers(1, 3, 6)])
    y = rng.normal(size=6)
    model = AGPRegressor(level_counts=(2, 2), optimizer=None, kernel_params=params).fit(mixed_array(X, Z), y)
    d = model.predict_dist(mixed_array(np.array([[0.95, 0.95]]), np.array([[1, 2]])))
    assert d.mean[0] == pytest.approx(model.mu_, abs=1e-6)
    assert d.sd[0] == pytest.approx(np.sqrt(1.2), abs=1e-6)


def test_constant_response(rng):
    X, Z = random_data(rng, 6, (3,), 1)
    model = AGPRegressor(level_counts=(3,), random_state=0).fit(mixed_array(X, Z), np.full(6, 2.5))
    assert model.mu_ == pytest.approx(2.5)
    Xq, Zq = random_data(rng, 20, (3,), 1)
    np.testing.assert_allclose(model.predict(mixed_array(Xq, Zq)), 2.5, atol=1e-8)


def test_single_observation_fit():
    model = AGPRegressor(level_counts=(2,), random_state=0).fit([[0.5, 1]], [3.0])
    mean, sd = model.predict([[0.5, 1], [0.1, 2]], return_std=True)
    assert mean[0] == pytest.approx(3.0)
    assert sd[0] <= 1e-4 * np.sqrt(model.total_variance_)


def test_adding_point_never_increases_variance(rng):
    counts = (3,)
    params = random_params(rng, counts, 2)
    X, Z = random_data(rng, 9, counts, 2)
    y = rng.normal(size=9)
    Xq, Zq = random_data(rng, 40, counts, 2)
    prev = None
    for n in range(1, 10):
        m = AGPRegressor(level_counts=counts, optimizer=None, kernel_params=params).fit(
            mixed_array(X[:n], Z[:n]), y[:n])
        sd = m.predict_dist(mixed_array(Xq, Zq)).sd
        if prev is not None:
            assert np.all(sd <= prev + 1e-8)
        prev = sd


@given(st.integers(0, 10_000))
def test_variance_bounds(seed):
    rng = np.random.default_rng(seed)
    counts = (int(rng.integers(2, 4)),)
    params = random_params(rng, counts, 1)
    X, Z = random_data(rng, 6, counts, 1)
    m = AGPRegressor(level_counts=counts, optimizer=None, kernel_params=params).fit(
        mixed_array(X, Z), rng.normal(size=6))
    Xq, Zq = random_data(rng, 50, counts, 1)
    sd = m.predict_dist(mixed_array(Xq, Zq)).sd
    assert np.all(sd >= 0)
    assert np.all(sd <= np.sqrt(params.total_variance) + 1e-8)


def test_sklearn_conventions(rng):
    est = AGPRegressor(level_counts=(3,), n_starts=2, random_state=4)
    assert est.get_params()["n_starts"] == 2
    c = clone(est)
    assert c.get_params() == est.get_params()
    model, X, Z, y = fitted(rng)
    again, *_ = fitted(np.random.default_rng(12345))
    assert model.score(mixed_array(X, Z), y) == pytest.approx(1.0)


def test_fit_is_deterministic():
    a, *_ = fitted(np.random.default_rng(3), seed=9)
    b, *_ = fitted(np.random.default_rng(3), seed=9)
    np.testing.assert_array_equal(params_to_free(a.params_), params_to_free(b.params_))


def test_input_errors(rng):
    est = AGPRegressor(level_counts=(3,))
    with pytest.raises(InvalidArgumentError):
        est.fit([[0.5, 4]], [1.0])
    with pytest.raises(InvalidArgumentError):
        est.fit([[0.5, 1.5]], [1.0])
    with pytest.raises(InvalidArgumentError):
        est.fit([[0.5, 1], [0.2, 2]], [1.0, np.nan])
    with pytest.raises(InvalidArgumentError):
        est.fit([[0.5, 1]], [1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        AGPRegressor(level_counts=()).fit([[0.5]], [1.0])
    with pytest.raises(InvalidArgumentError):
        AGPRegressor(level_counts=(3,), optimizer=None).fit([[0.5, 1]], [1.0])
    model, *_ = fitted(rng)
    with pytest.raises(InvalidArgumentError):
        model.predict([[0.5, 1, 1]])


def test_all_starts_failing_raises(monkeypatch, rng):
    import mixseq.gp as gp

    def boom(*a, **k):
        raise NumericalFailureError("not positive definite")

    monkeypatch.setattr(gp, "_factor", boom)
    X, Z = random_data(rng, 5, (2,), 1)
    with pytest.raises(FitFailureError) as info:
        AGPRegressor(level_counts=(2,), n_starts=3).fit(mixed_array(X, Z), rng.normal(size=5))
    assert len(info.value.diagnostics) == 3
    assert all(d["status"] == "failed" for d in info.value.diagnostics)


def test_jitter_escalation_on_duplicates():
    X = np.array([[0.3, 1], [0.3, 1], [0.8, 2]])
    params = KernelParams([1.0], [[2.0]], (np.array([1.0]),))
    m = AGPRegressor(level_counts=(2,), optimizer=None, kernel_params=params, jitter=0.0).fit(X, [1.0, 1.0, 2.0])
    assert m.jitter_ >= 0.0
    assert np.isfinite(m.log_likelihood_)
