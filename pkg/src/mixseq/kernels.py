"""Covariance primitives for mixed quantitative/qualitative inputs.

Continuous coordinates live on the unit cube internally; qualitative
coordinates are 1-based level indices. The additive covariance between two
inputs is a sum over qualitative factors ``j`` of
``sigma2[j] * T_j[z1_j, z2_j] * exp(-sum_i theta[j, i] * (x1_i - x2_i)**2)``
where each ``T_j`` is a unit-diagonal correlation matrix built from
hypersphere angles.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import InvalidArgumentError

ANGLE_EPS = 1e-6
DEFAULT_JITTER = 1e-6


@dataclass(frozen=True)
class QualitativeSpace:
    """Level counts ``(m_1, ..., m_q)`` and optional level labels."""

    level_counts: tuple
    labels: tuple | None = None

    def __post_init__(self):
        counts = tuple(int(m) for m in self.level_counts)
        if any(m < 2 for m in counts):
            raise InvalidArgumentError(f"every factor needs at least 2 levels, got {counts}")
        object.__setattr__(self, "level_counts", counts)
        if self.labels is not None:
            labels = tuple(tuple(str(s) for s in lv) for lv in self.labels)
            if len(labels) != len(counts) or any(len(lv) != m for lv, m in zip(labels, counts)):
                raise InvalidArgumentError("labels must match level_counts factor by factor")
            object.__setattr__(self, "labels", labels)

    @property
    def q(self):
        return len(self.level_counts)

    @property
    def n_combinations(self):
        """Number of distinct level combinations ``M``."""
        return math.prod(self.level_counts)

    def combinations(self):
        """All level combinations in lexicographic order, 1-based."""
        return list(itertools.product(*(range(1, m + 1) for m in self.level_counts)))

    def label_of(self, j, level):
        if self.labels is None:
            return str(level)
        return self.labels[j][level - 1]

    def level_of(self, j, label):
        if self.labels is None:
            level = int(label)
        else:
            try:
                level = self.labels[j].index(str(label)) + 1
            except ValueError:
                raise InvalidArgumentError(f"unknown level {label!r} for factor {j}") from None
        if not 1 <= level <= self.level_counts[j]:
            raise InvalidArgumentError(f"level {level} out of range for factor {j}")
        return level


@dataclass(frozen=True)
class MixedPoint:
    """One design point: unit-scale ``x`` and 1-based level indices ``z``."""

    x: tuple
    z: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "z", tuple(int(v) for v in self.z))

    def check(self, p, space: QualitativeSpace):
        if len(self.x) != p or len(self.z) != space.q:
            raise InvalidArgumentError(
                f"point has shape ({len(self.x)}, {len(self.z)}), expected ({p}, {space.q})"
            )
        if any(not 0.0 <= v <= 1.0 for v in self.x):
            raise InvalidArgumentError(f"x must lie in [0, 1], got {self.x}")
        for j, (v, m) in enumerate(zip(self.z, space.level_counts)):
            if not 1 <= v <= m:
                raise InvalidArgumentError(f"level {v} out of range for factor {j}")
        return self


@dataclass(frozen=True)
class DomainSpec:
    """Continuous bounds in user units plus the qualitative space."""

    continuous_bounds: tuple
    qualitative: QualitativeSpace
    names: tuple | None = None
    factor_names: tuple | None = None

    def __post_init__(self):
        bounds = tuple((float(lo), float(hi)) for lo, hi in self.continuous_bounds)
        for lo, hi in bounds:
            if not lo < hi:
                raise InvalidArgumentError(f"continuous bound ({lo}, {hi}) is not ordered")
        object.__setattr__(self, "continuous_bounds", bounds)

    @property
    def p(self):
        return len(self.continuous_bounds)

    @property
    def q(self):
        return self.qualitative.q

    @property
    def level_counts(self):
        return self.qualitative.level_counts

    def _lo_span(self):
        b = np.asarray(self.continuous_bounds, dtype=float).reshape(-1, 2)
        return b[:, 0], b[:, 1] - b[:, 0]

    def to_unit(self, x):
        lo, span = self._lo_span()
        return (np.asarray(x, dtype=float) - lo) / span

    def from_unit(self, u):
        lo, span = self._lo_span()
        return lo + np.asarray(u, dtype=float) * span

    def to_dict(self):
        cont = []
        for i, (lo, hi) in enumerate(self.continuous_bounds):
            name = self.names[i] if self.names else f"x{i + 1}"
            cont.append({"name": name, "low": lo, "high": hi})
        qual = []
        for j, m in enumerate(self.level_counts):
            name = self.factor_names[j] if self.factor_names else f"z{j + 1}"
            levels = list(self.qualitative.labels[j]) if self.qualitative.labels else [
                str(k) for k in range(1, m + 1)
            ]
            qual.append({"name": name, "levels": levels})
        return {"continuous": cont, "qualitative": qual}

    @classmethod
    def from_dict(cls, d):
        if set(d) - {"continuous", "qualitative"}:
            raise InvalidArgumentError(f"unknown domain fields: {sorted(set(d) - {'continuous', 'qualitative'})}")
        cont = d.get("continuous", [])
        qual = d.get("qualitative", [])
        bounds = [(c["low"], c["high"]) for c in cont]
        names = tuple(c.get("name", f"x{i + 1}") for i, c in enumerate(cont))
        labels = tuple(tuple(f["levels"]) for f in qual)
        fnames = tuple(f.get("name", f"z{j + 1}") for j, f in enumerate(qual))
        space = QualitativeSpace(tuple(len(lv) for lv in labels), labels)
        return cls(tuple(bounds), space, names, fnames)


@dataclass(frozen=True)
class KernelParams:
    """Variance components, inverse length-scales and hypersphere angles.

    Attributes
    ----------
    sigma2 : ndarray of shape (q,)
    theta : ndarray of shape (q, p)
        Inverse squared length-scales on the unit scale.
    angles : tuple of ndarray
        ``angles[j]`` holds ``m_j * (m_j - 1) / 2`` values in (0, pi),
        ordered row by row (row 2 first).
    """

    sigma2: np.ndarray
    theta: np.ndarray
    angles: tuple = field(default_factory=tuple)

    def __post_init__(self):
        sigma2 = np.asarray(self.sigma2, dtype=float).reshape(-1)
        theta = np.asarray(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = theta.reshape(len(sigma2), -1)
        if theta.shape[0] != len(sigma2):
            raise InvalidArgumentError("theta must have one row per qualitative factor")
        if np.any(sigma2 <= 0) or np.any(theta <= 0):
            raise InvalidArgumentError("sigma2 and theta must be strictly positive")
        angles = tuple(np.asarray(a, dtype=float).reshape(-1) for a in self.angles)
        if len(angles) != len(sigma2):
            raise InvalidArgumentError("need one angle vector per qualitative factor")
        object.__setattr__(self, "sigma2", sigma2)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "angles", angles)

    @property
    def q(self):
        return len(self.sigma2)

    @property
    def p(self):
        return self.theta.shape[1]

    @property
    def level_counts(self):
        return tuple(_levels_from_angle_count(len(a)) for a in self.angles)

    @property
    def total_variance(self):
        return float(np.sum(self.sigma2))

    def corr_matrices(self):
        return [hypersphere_to_corr(a, m) for a, m in zip(self.angles, self.level_counts)]

    @classmethod
    def default(cls, level_counts, p, sigma2=1.0):
        """Unit length-scales and identity level correlations."""
        q = len(level_counts)
        return cls(
            np.full(q, sigma2 / max(q, 1)),
            np.ones((q, p)),
            tuple(np.full(m * (m - 1) // 2, np.pi / 2) for m in level_counts),
        )

    def to_dict(self):
        return {
            "sigma2": self.sigma2.tolist(),
            "theta": self.theta.tolist(),
            "angles": [a.tolist() for a in self.angles],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["sigma2"]), np.array(d["theta"]), tuple(np.array(a) for a in d["angles"]))


def n_free_params(level_counts, p, include_mean=False):
    """Free parameters of the additive model: ``q + sum m(m-1)/2 + p*q`` (+1 for the mean)."""
    q = len(level_counts)
    n = q + sum(m * (m - 1) // 2 for m in level_counts) + p * q
    return n + 1 if include_mean else n


def _levels_from_angle_count(k):
    m = int(round((1 + math.sqrt(1 + 8 * k)) / 2))
    if m * (m - 1) // 2 != k:
        raise InvalidArgumentError(f"{k} is not a triangular angle count")
    return m


def gauss_corr(x1, x2, theta_row):
    """Gaussian correlation ``exp(-sum theta_i (x1_i - x2_i)^2)``."""
    x1 = np.asarray(x1, dtype=float).reshape(-1)
    x2 = np.asarray(x2, dtype=float).reshape(-1)
    theta_row = np.asarray(theta_row, dtype=float).reshape(-1)
    if not (x1.shape == x2.shape == theta_row.shape):
        raise InvalidArgumentError(
            f"dimension mismatch: {x1.shape}, {x2.shape}, {theta_row.shape}"
        )
    if np.any(theta_row <= 0):
        raise InvalidArgumentError("theta must be strictly positive")
    return float(np.exp(-np.sum(theta_row * (x1 - x2) ** 2)))


def hypersphere_cholesky(angles, m):
    """Lower-triangular factor with unit-norm rows built from angles.

    Row ``r`` (0-based, r >= 1) uses ``r`` angles ``t_1..t_r``:
    ``l[r, s] = sin(t_1)...sin(t_s) cos(t_{s+1})`` for ``s < r`` and
    ``l[r, r] = sin(t_1)...sin(t_r)``.
    """
    angles = np.asarray(angles, dtype=float).reshape(-1)
    m = int(m)
    if m < 1:
        raise InvalidArgumentError("level count must be positive")
    if len(angles) != m * (m - 1) // 2:
        raise InvalidArgumentError(f"expected {m * (m - 1) // 2} angles for m={m}, got {len(angles)}")
    if np.any(angles <= 0.0) or np.any(angles >= np.pi):
        raise InvalidArgumentError("angles must lie strictly inside (0, pi)")
    L = np.zeros((m, m))
    L[0, 0] = 1.0
    k = 0
    for r in range(1, m):
        t = angles[k:k + r]
        k += r
        sin_prod = np.concatenate(([1.0], np.cumprod(np.sin(t))))
        L[r, :r] = sin_prod[:r] * np.cos(t)
        L[r, r] = sin_prod[r]
    return L


def hypersphere_to_corr(angles, m):
    """Correlation matrix ``L L^T`` from hypersphere angles."""
    L = hypersphere_cholesky(angles, m)
    T = L @ L.T
    np.fill_diagonal(T, 1.0)
    return T


def hypersphere_cholesky_grad(angles, m):
    """Derivatives of the factor with respect to each angle.

    Angle ``k`` only touches one row of ``L``. Returns ``(dL, rows)`` where
    ``dL[k]`` is the derivative of row ``rows[k]``.
    """
    angles = np.asarray(angles, dtype=float).reshape(-1)
    L = hypersphere_cholesky(angles, m)
    rows = np.empty(len(angles), dtype=int)
    dL = np.zeros((len(angles), m))
    k = 0
    for r in range(1, m):
        t = angles[k:k + r]
        sin_prod = np.concatenate(([1.0], np.cumprod(np.sin(t))))
        for a in range(r):
            d = np.zeros(m)
            d[a] = -sin_prod[a + 1]
            d[a + 1:r + 1] = L[r, a + 1:r + 1] / np.tan(t[a])
            dL[k + a] = d
            rows[k + a] = r
        k += r
    return dL, rows


def _as_arrays(points):
    X = np.array([pt.x for pt in points], dtype=float)
    Z = np.array([pt.z for pt in points], dtype=int)
    if X.ndim == 1:
        X = X.reshape(len(points), -1)
    if Z.ndim == 1:
        Z = Z.reshape(len(points), -1)
    return X, Z


def cross_cov_matrix(X1, Z1, X2, Z2, params: KernelParams, corr=None):
    """Additive cross-covariance between two point sets, shape (n1, n2)."""
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    Z1 = np.asarray(Z1, dtype=int)
    Z2 = np.asarray(Z2, dtype=int)
    if X1.shape[1] != params.p or X2.shape[1] != params.p:
        raise InvalidArgumentError(f"expected {params.p} continuous columns")
    if Z1.shape[1] != params.q or Z2.shape[1] != params.q:
        raise InvalidArgumentError(f"expected {params.q} qualitative columns")
    if corr is None:
        corr = params.corr_matrices()
    sq = (X1[:, None, :] - X2[None, :, :]) ** 2
    out = np.zeros((X1.shape[0], X2.shape[0]))
    for j in range(params.q):
        K = np.exp(-sq @ params.theta[j])
        T = corr[j]
        out += params.sigma2[j] * T[np.ix_(Z1[:, j] - 1, Z2[:, j] - 1)] * K
    return out


def cross_cov(w1: MixedPoint, w2: MixedPoint, params: KernelParams):
    """Covariance between the responses at two mixed points."""
    if len(w1.x) != params.p or len(w2.x) != params.p or len(w1.z) != params.q or len(w2.z) != params.q:
        raise InvalidArgumentError("point dimensions do not match the kernel parameters")
    for z in (w1.z, w2.z):
        for v, m in zip(z, params.level_counts):
            if not 1 <= v <= m:
                raise InvalidArgumentError(f"level {v} out of range 1..{m}")
    X, Z = _as_arrays([w1, w2])
    return float(cross_cov_matrix(X[:1], Z[:1], X[1:], Z[1:], params)[0, 0])


def cov_matrix(points, params: KernelParams, jitter=None):
    """Covariance matrix of the responses at ``points`` plus diagonal jitter.

    ``jitter`` is absolute; the default is ``1e-6 * sum(sigma2)``.
    """
    if len(points) < 1:
        raise InvalidArgumentError("need at least one point")
    if jitter is None:
        jitter = DEFAULT_JITTER * params.total_variance
    if jitter < 0:
        raise InvalidArgumentError("jitter must be nonnegative")
    X, Z = _as_arrays(points)
    Phi = cross_cov_matrix(X, Z, X, Z, params)
    Phi = 0.5 * (Phi + Phi.T)
    Phi[np.diag_indices_from(Phi)] += jitter
    return Phi
