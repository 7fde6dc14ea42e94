"""Acquisition criteria and the adaptive search region.

All scoring uses a single orientation: lower scores are better. Maximisation
problems are turned into minimisation by negating responses before the
model is fitted, so nothing here needs to know about the sense except
:func:`cee_score`, which also offers the maximisation form directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .exceptions import InvalidArgumentError


class Strategy(str, enum.Enum):
    ADAPTIVE_CEE = "ADAPTIVE_CEE"
    CEE = "CEE"
    EI = "EI"
    MU = "MU"
    SI = "SI"
    RA = "RA"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).upper().replace("-", "_")
        aliases = {"ACEE": "ADAPTIVE_CEE", "ADAPTIVE": "ADAPTIVE_CEE"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise InvalidArgumentError(f"unknown strategy {value!r}") from None


class Sense(str, enum.Enum):
    MIN = "MIN"
    MAX = "MAX"

    @classmethod
    def parse(cls, value):
        try:
            return cls(str(value.value if isinstance(value, cls) else value).upper())
        except ValueError:
            raise InvalidArgumentError(f"unknown sense {value!r}") from None


@dataclass(frozen=True)
class AcquisitionConfig:
    strategy: Strategy = Strategy.ADAPTIVE_CEE
    rho: float = 2.0
    alpha: float = 0.05
    sense: Sense = Sense.MIN

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        object.__setattr__(self, "sense", Sense.parse(self.sense))
        if not self.rho >= 0:
            raise InvalidArgumentError("rho must be nonnegative")
        if not 0 < self.alpha < 1:
            raise InvalidArgumentError("alpha must lie in (0, 1)")

    def to_dict(self):
        return {"strategy": self.strategy.value, "rho": self.rho, "alpha": self.alpha,
                "sense": self.sense.value}

    @classmethod
    def from_dict(cls, d):
        return cls(d["strategy"], float(d["rho"]), float(d["alpha"]), d["sense"])


@dataclass
class RegionBounds:
    """Confidence bounds over a candidate pool and adaptive-region membership."""

    beta: float
    mu_L: np.ndarray
    mu_U: np.ndarray
    threshold: float
    in_region: np.ndarray

    @property
    def size(self):
        return int(np.count_nonzero(self.in_region))

    @property
    def fraction(self):
        return self.size / len(self.in_region)


def _beta_raw(n, M, alpha):
    arg = math.pi ** 2 * n ** 2 * M / (6.0 * alpha)
    return max(0.0, 2.0 * math.log(arg))


def beta(n, M, alpha):
    """Confidence-width multiplier ``2 log(pi^2 n^2 M / (6 alpha))``, clamped at 0."""
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")
    if n < 1 or M < 1:
        raise InvalidArgumentError("n and M must be positive")
    return _beta_raw(n, M, alpha)


def cee_score(mean, sd, rho, sense=Sense.MIN):
    """``mean - rho * sd`` (or ``mean + rho * sd`` to be maximised for ``MAX``)."""
    if rho < 0:
        raise InvalidArgumentError("rho must be nonnegative")
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if Sense.parse(sense) is Sense.MAX:
        return mean + rho * sd
    return mean - rho * sd


def _width(sd, beta_value):
    sd = np.asarray(sd, dtype=float)
    if np.isinf(beta_value):
        return np.where(sd > 0, np.inf, 0.0)
    return math.sqrt(beta_value) * sd


def confidence_bounds(mean, sd, beta_value):
    """Lower and upper bounds ``mean -/+ sqrt(beta) * sd``."""
    if beta_value < 0:
        raise InvalidArgumentError("beta must be nonnegative")
    mean = np.asarray(mean, dtype=float)
    w = _width(sd, beta_value)
    return mean - w, mean + w


def adaptive_region(mean, sd, beta_value):
    """Adaptive region over a finite pool.

    A candidate belongs to the region when its lower bound does not exceed
    the smallest upper bound over the pool.

    Parameters
    ----------
    mean, sd : array_like of shape (N,)
        Predictive distribution at each candidate.
    beta_value : float

    Returns
    -------
    RegionBounds
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.atleast_1d(np.asarray(sd, dtype=float))
    if mean.size == 0:
        raise InvalidArgumentError("candidate set is empty")
    mu_L, mu_U = confidence_bounds(mean, sd, beta_value)
    threshold = float(np.min(mu_U))
    in_region = mu_L <= threshold
    in_region[int(np.argmin(mu_U))] = True
    return RegionBounds(float(beta_value), mu_L, mu_U, threshold, in_region)


def ei_score(mean, sd, best_observed):
    """Expected improvement below ``best_observed`` for a normal predictive.

    Falls back to ``max(best_observed - mean, 0)`` where ``sd == 0``.
    """
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    diff = best_observed - mean
    pos = sd > 0
    safe_sd = np.where(pos, sd, 1.0)
    u = diff / safe_sd
    ei = np.where(pos, sd * norm.pdf(u) + diff * norm.cdf(u), np.maximum(diff, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def score(mean, sd, config: AcquisitionConfig, best_observed=None, beta_value=None):
    """Strategy score, lower is better.

    CEE variants score ``mean - rho * sd``; EI is negated; MU is the mean;
    SI is the negated standard deviation.
    """
    s = config.strategy
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    if s is Strategy.ADAPTIVE_CEE:
        if beta_value is None:
            raise InvalidArgumentError("ADAPTIVE_CEE needs beta in the scoring context")
        return cee_score(mean, sd, config.rho)
    if s is Strategy.CEE:
        return cee_score(mean, sd, config.rho)
    if s is Strategy.EI:
        if best_observed is None:
            raise InvalidArgumentError("EI needs best_observed in the scoring context")
        return -np.asarray(ei_score(mean, sd, best_observed))
    if s is Strategy.MU:
        return mean.copy()
    if s is Strategy.SI:
        return -sd
    raise InvalidArgumentError(f"strategy {s.value} does not score candidates")


@dataclass
class Selection:
    index: int
    criterion: float
    scores: np.ndarray
    region: RegionBounds | None


def select(mean, sd, config: AcquisitionConfig, best_observed=None, beta_value=None):
    """Pick the best candidate; ties go to the lowest index.

    For ``ADAPTIVE_CEE`` only candidates in the adaptive region compete.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    sd = np.atleast_1d(np.asarray(sd, dtype=float))
    if mean.size == 0:
        raise InvalidArgumentError("candidate set is empty")
    scores = np.atleast_1d(score(mean, sd, config, best_observed, beta_value))
    region = None
    masked = scores
    if config.strategy is Strategy.ADAPTIVE_CEE:
        region = adaptive_region(mean, sd, beta_value)
        masked = np.where(region.in_region, scores, np.inf)
    idx = int(np.argmin(masked))
    return Selection(idx, float(scores[idx]), scores, region)
