"""Additive Gaussian process regression for mixed inputs.

The estimator follows the scikit-learn conventions: constructor arguments
are hyper-settings only, :meth:`AGPRegressor.fit` learns the kernel
parameters by maximum likelihood with the constant mean profiled out, and
fitted state is stored in attributes with a trailing underscore.

Input arrays are laid out as ``[x_1 .. x_p, z_1 .. z_q]``: unit-scale
continuous columns followed by 1-based level indices.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.special import expit, logit
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import FitFailureError, InvalidArgumentError, NumericalFailureError
from .kernels import (
    ANGLE_EPS,
    KernelParams,
    cross_cov_matrix,
    hypersphere_cholesky,
    hypersphere_cholesky_grad,
    n_free_params,
)
from .validation import check_mixed_array, check_response

logger = logging.getLogger(__name__)

_ANGLE_SPAN = np.pi - 2 * ANGLE_EPS
_U_BOUND = 20.0
# first-stage bound on the angle variables; the sigmoid is nearly flat beyond it
_U_STAGE1 = 4.0
# a query that matches a training input within this distance is that input
_MATCH_TOL = 1e-12


@dataclass(frozen=True)
class PredictiveDist:
    """Posterior mean and standard deviation (arrays or scalars)."""

    mean: np.ndarray
    sd: np.ndarray

    def __getitem__(self, idx):
        return PredictiveDist(self.mean[idx], self.sd[idx])

    def __len__(self):
        return len(np.atleast_1d(self.mean))


def angles_to_free(angles):
    a = np.clip((np.asarray(angles, dtype=float) - ANGLE_EPS) / _ANGLE_SPAN, 1e-9, 1 - 1e-9)
    return logit(a)


def free_to_angles(u):
    return ANGLE_EPS + _ANGLE_SPAN * expit(u)


def params_to_free(params: KernelParams):
    """Unconstrained vector ``[log sigma2, log theta (row-major), logit angles]``."""
    parts = [np.log(params.sigma2), np.log(params.theta).ravel()]
    parts += [angles_to_free(a) for a in params.angles]
    return np.concatenate(parts)


def free_to_params(u, level_counts, p):
    u = np.asarray(u, dtype=float)
    q = len(level_counts)
    if len(u) != n_free_params(level_counts, p):
        raise InvalidArgumentError(
            f"free vector has length {len(u)}, expected {n_free_params(level_counts, p)}"
        )
    sigma2 = np.exp(u[:q])
    theta = np.exp(u[q:q + q * p]).reshape(q, p)
    angles = []
    k = q + q * p
    for m in level_counts:
        na = m * (m - 1) // 2
        angles.append(free_to_angles(u[k:k + na]))
        k += na
    return KernelParams(sigma2, theta, tuple(angles))


def _factor(Phi, jitter, max_escalations):
    """Cholesky with jitter escalation; returns (L, jitter actually used)."""
    n = Phi.shape[0]
    base = Phi.copy()
    for attempt in range(max_escalations + 1):
        A = base.copy()
        A[np.diag_indices(n)] += jitter
        try:
            return cholesky(A, lower=True, check_finite=True), jitter
        except (np.linalg.LinAlgError, ValueError):
            if attempt == max_escalations:
                break
            jitter = jitter * 10.0 if jitter > 0 else 1e-10 * float(np.mean(np.diag(base)))
    raise NumericalFailureError(f"covariance not positive definite after jitter escalation to {jitter:g}")


def profile_mu(chol, y):
    """Generalised least squares estimate of the constant mean.

    ``chol`` is the lower Cholesky factor of the covariance matrix.
    """
    y = np.asarray(y, dtype=float)
    ones = np.ones_like(y)
    try:
        inv_y = cho_solve((chol, True), y)
        inv_1 = cho_solve((chol, True), ones)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailureError(str(exc)) from exc
    denom = ones @ inv_1
    if not np.isfinite(denom) or denom <= 0:
        raise NumericalFailureError("covariance factor is singular")
    return float(ones @ inv_y / denom)


class _Workspace:
    """Cached per-dataset quantities for repeated likelihood evaluations."""

    def __init__(self, X, Z, y, level_counts, rel_jitter, max_escalations):
        self.X, self.Z, self.y = X, Z, y
        self.level_counts = tuple(level_counts)
        self.n, self.p = X.shape
        self.q = len(level_counts)
        self.rel_jitter = rel_jitter
        self.max_escalations = max_escalations
        self.sq = (X[:, None, :] - X[None, :, :]) ** 2  # (n, n, p)
        self.onehot = [np.eye(m)[Z[:, j] - 1] for j, m in enumerate(level_counts)]

    def evaluate(self, u, grad=True):
        q, p, n = self.q, self.p, self.n
        sigma2 = np.exp(u[:q])
        theta = np.exp(u[q:q + q * p]).reshape(q, p)
        k = q + q * p
        Ls, Ks, Cs, ang_slices = [], [], [], []
        Phi = np.zeros((n, n))
        for j, m in enumerate(self.level_counts):
            na = m * (m - 1) // 2
            ang = free_to_angles(u[k:k + na])
            ang_slices.append((k, na, ang))
            k += na
            L = hypersphere_cholesky(ang, m)
            E = self.onehot[j]
            Tz = E @ (L @ L.T) @ E.T
            K = np.exp(-self.sq @ theta[j])
            C = sigma2[j] * Tz * K
            Ls.append(L)
            Ks.append(K)
            Cs.append(C)
            Phi += C
        total = float(np.sum(sigma2))
        chol, jitter = _factor(Phi, self.rel_jitter * total, self.max_escalations)
        y = self.y
        ones = np.ones(n)
        inv_y = cho_solve((chol, True), y)
        inv_1 = cho_solve((chol, True), ones)
        mu = float(ones @ inv_y / (ones @ inv_1))
        resid = y - mu
        a = inv_y - mu * inv_1
        value = 2.0 * np.sum(np.log(np.diag(chol))) + float(resid @ a)
        if not grad:
            return value, None
        Phi_inv = cho_solve((chol, True), np.eye(n))
        W = Phi_inv - np.outer(a, a)
        g = np.empty_like(u)
        jitter_scale = jitter / total
        trW = np.trace(W)
        for j, m in enumerate(self.level_counts):
            WC = W * Cs[j]
            g[j] = np.sum(WC) + jitter_scale * sigma2[j] * trW
            # d Phi / d log theta_ji = -theta_ji * sq_i * C_j
            g[q + j * p:q + (j + 1) * p] = -theta[j] * np.einsum("ab,abi->i", WC, self.sq)
            start, na, ang = ang_slices[j]
            if na == 0:
                continue
            E = self.onehot[j]
            S = E.T @ (W * (sigma2[j] * Ks[j])) @ E
            SL = S @ Ls[j]
            dL, rows = hypersphere_cholesky_grad(ang, m)
            d_ang = 2.0 * np.sum(SL[rows] * dL, axis=1)
            sig = (ang - ANGLE_EPS) / _ANGLE_SPAN
            g[start:start + na] = d_ang * _ANGLE_SPAN * sig * (1.0 - sig)
        return value, g


def neg_log_likelihood(free_params, X, Z, y, level_counts, jitter=1e-6, return_grad=False,
                       max_jitter_escalations=3):
    """Profiled likelihood objective ``log|Phi| + r' Phi^-1 r`` with ``r = y - mu_hat``.

    Equivalent to ``y' Phi^-1 y - (1' Phi^-1 y)^2 / (1' Phi^-1 1)`` for the
    quadratic part. Adding ``n log(2 pi)`` and halving gives the negative
    log-likelihood at the profiled mean.

    Parameters
    ----------
    free_params : array_like
        Unconstrained vector, see :func:`params_to_free`.
    jitter : float
        Diagonal jitter relative to ``sum(sigma2)``.
    """
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=int)
    y = np.asarray(y, dtype=float)
    u = np.asarray(free_params, dtype=float)
    if len(u) != n_free_params(level_counts, X.shape[1]):
        raise InvalidArgumentError("free parameter vector has the wrong length")
    ws = _Workspace(X, Z, y, level_counts, jitter, max_jitter_escalations)
    value, g = ws.evaluate(u, grad=return_grad)
    return (value, g) if return_grad else value


def _split(X, level_counts):
    X = np.asarray(X, dtype=float)
    q = len(level_counts)
    return X[:, :X.shape[1] - q], np.rint(X[:, X.shape[1] - q:]).astype(int)


def mixed_array(X, Z):
    """Stack unit-scale continuous columns and level indices into one array."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    return np.hstack([X.reshape(len(X), -1), Z.reshape(len(Z), -1)])


class AGPRegressor(RegressorMixin, BaseEstimator):
    """Additive Gaussian process with hypersphere-parameterised level correlations.

    Parameters
    ----------
    level_counts : tuple of int
        Number of levels of each qualitative factor. The last
        ``len(level_counts)`` columns of ``X`` hold 1-based level indices.
    kernel_params : KernelParams, optional
        Starting point for the first optimizer start, or the fixed parameters
        when ``optimizer`` is None.
    optimizer : {"L-BFGS-B", None}
        None conditions on ``kernel_params`` without any fitting.
    n_starts : int
        Number of optimizer starts; the best local optimum is kept.
    max_iter : int
        Iteration limit per start.
    tol : float
        Relative objective tolerance for convergence.
    theta_bounds : (float, float)
        Bounds for the inverse length-scales on the unit scale.
    sigma2_bounds : (float, float)
        Bounds for each variance component, as multiples of ``var(y)``.
    jitter : float
        Diagonal jitter relative to the total variance.
    max_jitter_escalations : int
        Times the jitter is multiplied by 10 when factorisation fails.
    random_state : int or None
        Seed for the random optimizer starts.

    Attributes
    ----------
    params_ : KernelParams
    mu_ : float
        Profiled constant mean.
    chol_ : ndarray
        Lower Cholesky factor of the training covariance (jitter included).
    weights_ : ndarray
        Solution of ``Phi a = y - mu``.
    jitter_ : float
        Absolute jitter that was used.
    log_likelihood_ : float
    """

    def __init__(
        self,
        level_counts=(2,),
        kernel_params=None,
        optimizer="L-BFGS-B",
        n_starts=5,
        max_iter=200,
        tol=1e-6,
        theta_bounds=(1e-3, 1e3),
        sigma2_bounds=(1e-8, 1e3),
        jitter=1e-6,
        max_jitter_escalations=3,
        random_state=None,
    ):
        self.level_counts = level_counts
        self.kernel_params = kernel_params
        self.optimizer = optimizer
        self.n_starts = n_starts
        self.max_iter = max_iter
        self.tol = tol
        self.theta_bounds = theta_bounds
        self.sigma2_bounds = sigma2_bounds
        self.jitter = jitter
        self.max_jitter_escalations = max_jitter_escalations
        self.random_state = random_state

    def _validate_settings(self):
        counts = tuple(int(m) for m in self.level_counts)
        if len(counts) == 0:
            raise InvalidArgumentError("the additive model needs at least one qualitative factor")
        if any(m < 2 for m in counts):
            raise InvalidArgumentError("every qualitative factor needs at least 2 levels")
        if self.n_starts < 1:
            raise InvalidArgumentError("n_starts must be at least 1")
        for lo, hi in (self.theta_bounds, self.sigma2_bounds):
            if not 0 < lo < hi:
                raise InvalidArgumentError("bounds must be positive and ordered")
        if self.optimizer not in ("L-BFGS-B", None):
            raise InvalidArgumentError(f"unknown optimizer {self.optimizer!r}")
        return counts

    def _bounds(self, counts, p, var_y, u_bound=_U_BOUND):
        q = len(counts)
        s_lo, s_hi = np.log(np.asarray(self.sigma2_bounds) * var_y)
        t_lo, t_hi = np.log(self.theta_bounds)
        n_ang = sum(m * (m - 1) // 2 for m in counts)
        return [(s_lo, s_hi)] * q + [(t_lo, t_hi)] * (q * p) + [(-u_bound, u_bound)] * n_ang

    def _starts(self, counts, p, var_y, rng):
        q = len(counts)
        if self.kernel_params is not None:
            first = params_to_free(self.kernel_params)
        else:
            first = params_to_free(KernelParams.default(counts, p, sigma2=var_y))
        starts = [first]
        s_lo, s_hi = np.log(np.asarray(self.sigma2_bounds) * var_y)
        t_lo, t_hi = np.log(self.theta_bounds)
        n_ang = sum(m * (m - 1) // 2 for m in counts)
        for _ in range(self.n_starts - 1):
            s = rng.uniform(s_lo, s_hi, size=q)
            t = rng.uniform(t_lo, t_hi, size=q * p)
            a = angles_to_free(rng.uniform(ANGLE_EPS, np.pi - ANGLE_EPS, size=n_ang))
            starts.append(np.concatenate([s, t, a]))
        return starts

    def fit(self, X, y):
        """Fit kernel parameters by maximum likelihood and factor the covariance."""
        counts = self._validate_settings()
        Xc, Z = check_mixed_array(X, counts)
        y = check_response(y, len(Xc))
        n, p = Xc.shape
        var_y = float(np.var(y))
        if not var_y > 0:
            var_y = 1.0
        ws = _Workspace(Xc, Z, y, counts, self.jitter, self.max_jitter_escalations)
        self.fit_diagnostics_ = []
        if self.optimizer is None:
            if self.kernel_params is None:
                raise InvalidArgumentError("optimizer=None requires kernel_params")
            best_u = params_to_free(self.kernel_params)
        else:
            rng = np.random.default_rng(self.random_state)
            bounds = self._bounds(counts, p, var_y)
            inner = self._bounds(counts, p, var_y, _U_STAGE1)
            lo = np.array([b[0] for b in inner])
            hi = np.array([b[1] for b in inner])
            best_u, best_val = None, np.inf
            for i, u0 in enumerate(self._starts(counts, p, var_y, rng)):
                u0 = np.clip(u0, lo, hi)
                opts = {"maxiter": self.max_iter, "ftol": self.tol}
                try:
                    # a first pass inside a narrower angle box keeps early steps from
                    # saturating the sigmoid, then the full box is opened up
                    res = minimize(ws.evaluate, u0, jac=True, method="L-BFGS-B", bounds=inner, options=opts)
                    res2 = minimize(ws.evaluate, res.x, jac=True, method="L-BFGS-B", bounds=bounds, options=opts)
                    if res2.fun <= res.fun:
                        res2.nit += res.nit
                        res = res2
                except (NumericalFailureError, FloatingPointError) as exc:
                    self.fit_diagnostics_.append({"start": i, "status": "failed", "message": str(exc)})
                    continue
                self.fit_diagnostics_.append(
                    {"start": i, "status": "ok", "objective": float(res.fun), "nit": int(res.nit),
                     "message": str(res.message)}
                )
                if np.isfinite(res.fun) and res.fun < best_val:
                    best_val, best_u = float(res.fun), res.x
            if best_u is None:
                raise FitFailureError("all optimizer starts failed", self.fit_diagnostics_)
        self.params_ = free_to_params(best_u, counts, p)
        self._condition(Xc, Z, y, counts)
        self.n_features_in_ = p + len(counts)
        return self

    def _condition(self, Xc, Z, y, counts):
        params = self.params_
        corr = params.corr_matrices()
        Phi = cross_cov_matrix(Xc, Z, Xc, Z, params, corr)
        Phi = 0.5 * (Phi + Phi.T)
        chol, jitter = _factor(Phi, self.jitter * params.total_variance, self.max_jitter_escalations)
        self.mu_ = profile_mu(chol, y)
        self.weights_ = cho_solve((chol, True), y - self.mu_)
        self.chol_ = chol
        self.jitter_ = jitter
        self.level_counts_ = counts
        self.X_train_, self.Z_train_, self.y_train_ = Xc, Z, y
        self._corr = corr
        n = len(y)
        quad = float((y - self.mu_) @ self.weights_)
        self.log_likelihood_ = -0.5 * (n * np.log(2 * np.pi) + 2 * np.sum(np.log(np.diag(chol))) + quad)

    def predict_dist(self, X):
        """Predictive mean and standard deviation at each row of ``X``."""
        check_is_fitted(self, "params_")
        Xq, Zq = check_mixed_array(X, self.level_counts_, n_features=self.n_features_in_)
        params = self.params_
        r0 = cross_cov_matrix(Xq, Zq, self.X_train_, self.Z_train_, params, self._corr)
        total = params.total_variance
        prior = np.full(len(Xq), total)
        # the jitter acts as a nugget that is only seen by exact repeats of a training input
        same_z = np.all(Zq[:, None, :] == self.Z_train_[None, :, :], axis=2)
        close_x = np.max(np.abs(Xq[:, None, :] - self.X_train_[None, :, :]), axis=2, initial=0.0) <= _MATCH_TOL
        match = same_z & close_x
        if match.any():
            r0 = r0 + self.jitter_ * match
            prior = prior + self.jitter_ * match.any(axis=1)
        mean = self.mu_ + r0 @ self.weights_
        v = solve_triangular(self.chol_, r0.T, lower=True, check_finite=False)
        var = prior - np.sum(v * v, axis=0)
        var = np.clip(var, 0.0, total)
        return PredictiveDist(mean, np.sqrt(var))

    def predict(self, X, return_std=False):
        dist = self.predict_dist(X)
        if return_std:
            return dist.mean, dist.sd
        return dist.mean

    def log_marginal_likelihood(self, kernel_params=None):
        """Log-likelihood at the profiled mean, for fitted or given parameters."""
        check_is_fitted(self, "params_")
        if kernel_params is None:
            return self.log_likelihood_
        u = params_to_free(kernel_params)
        value = neg_log_likelihood(u, self.X_train_, self.Z_train_, self.y_train_, self.level_counts_,
                                   self.jitter, max_jitter_escalations=self.max_jitter_escalations)
        return -0.5 * (len(self.y_train_) * np.log(2 * np.pi) + value)

    @property
    def total_variance_(self):
        check_is_fitted(self, "params_")
        return self.params_.total_variance
