"""Initial designs and candidate pools for mixed inputs."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidArgumentError
from .kernels import DomainSpec, MixedPoint, QualitativeSpace

DEFAULT_CANDIDATES = 200
_DUPLICATE_TOL = 1e-6
_MAX_VERTEX_DIM = 8


class QualitativePlan(str, enum.Enum):
    FULL_FACTORIAL = "FULL_FACTORIAL"
    FRACTIONAL_3LEVEL = "FRACTIONAL_3LEVEL"
    RANDOM = "RANDOM"


@dataclass(frozen=True)
class InitialDesignSpec:
    n_runs: int
    qualitative_plan: QualitativePlan | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_runs < 1:
            raise InvalidArgumentError("n_runs must be positive")
        if self.qualitative_plan is not None:
            object.__setattr__(self, "qualitative_plan", QualitativePlan(str(
                getattr(self.qualitative_plan, "value", self.qualitative_plan)).upper()))

    def resolve_plan(self, space: QualitativeSpace):
        """The explicit plan, or the natural default for this space and size."""
        if self.qualitative_plan is not None:
            return self.qualitative_plan
        if self.n_runs == space.n_combinations:
            return QualitativePlan.FULL_FACTORIAL
        if space.level_counts == (3, 3, 3) and self.n_runs == 9:
            return QualitativePlan.FRACTIONAL_3LEVEL
        return QualitativePlan.RANDOM

    def to_dict(self):
        plan = self.qualitative_plan.value if self.qualitative_plan is not None else None
        return {"n_runs": self.n_runs, "qualitative_plan": plan, "rng_seed": self.rng_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["n_runs"]), d.get("qualitative_plan"), int(d["rng_seed"]))


@dataclass
class CandidateSet:
    """Finite search pool; ``X`` is unit-scale, ``Z`` holds level indices."""

    X: np.ndarray
    Z: np.ndarray
    per_level_count: int
    rng_seed: int | None = None

    def __len__(self):
        return len(self.X)

    def points(self):
        return [MixedPoint(x, z) for x, z in zip(self.X, self.Z)]

    def as_array(self):
        return np.hstack([self.X, self.Z.astype(float)])


def random_lhd(n, p, rng):
    """Random Latin hypercube of ``n`` runs in ``[0, 1]^p``.

    Column ``i`` is ``(perm_i + u) / n`` with a random permutation and
    uniform jitter strictly inside each stratum.
    """
    if n < 1 or p < 0:
        raise InvalidArgumentError("need n >= 1 and p >= 0")
    rng = np.random.default_rng(rng)
    perms = np.column_stack([rng.permutation(n) for _ in range(p)]) if p else np.empty((n, 0))
    u = 1e-9 + (1.0 - 2e-9) * rng.random((n, p))
    return (perms + u) / n


def full_factorial(space):
    """All level combinations in lexicographic order."""
    counts = space.level_counts if isinstance(space, QualitativeSpace) else tuple(space)
    return [tuple(c) for c in itertools.product(*(range(1, m + 1) for m in counts))]


def fractional_factorial_3level(q=3):
    """Nine-run 3^(3-1) design with ``z3 = z1 + z2 (mod 3)`` on 0-based levels."""
    if q != 3:
        raise InvalidArgumentError("the fractional design is defined for three 3-level factors")
    return [(a + 1, b + 1, (a + b) % 3 + 1) for a in range(3) for b in range(3)]


def qualitative_rows(plan, space: QualitativeSpace, n_runs, rng):
    plan = QualitativePlan(plan)
    if plan is QualitativePlan.FULL_FACTORIAL:
        rows = full_factorial(space)
        if len(rows) != n_runs:
            raise InvalidArgumentError(f"a full factorial has {len(rows)} runs, requested {n_runs}")
        return rows
    if plan is QualitativePlan.FRACTIONAL_3LEVEL:
        if space.level_counts != (3, 3, 3):
            raise InvalidArgumentError("the fractional design needs three 3-level factors")
        if n_runs != 9:
            raise InvalidArgumentError(f"the fractional design has 9 runs, requested {n_runs}")
        return fractional_factorial_3level(3)
    cols = [rng.integers(1, m + 1, size=n_runs) for m in space.level_counts]
    return [tuple(int(c[t]) for c in cols) for t in range(n_runs)]


def initial_design(spec: InitialDesignSpec, domain: DomainSpec):
    """Pair the ``t``-th qualitative row with the ``t``-th Latin hypercube row.

    Returns
    -------
    X : ndarray of shape (n_runs, p), unit scale
    Z : ndarray of shape (n_runs, q), level indices
    """
    rng = np.random.default_rng(spec.rng_seed)
    plan = spec.resolve_plan(domain.qualitative)
    X = random_lhd(spec.n_runs, domain.p, rng)
    rows = qualitative_rows(plan, domain.qualitative, spec.n_runs, rng)
    Z = np.array(rows, dtype=int).reshape(spec.n_runs, domain.q)
    return X, Z


def one_shot_design(n_runs, domain: DomainSpec, rng):
    """Non-sequential design: uniform random levels with a Latin hypercube in ``x``."""
    rng = np.random.default_rng(rng)
    X = random_lhd(n_runs, domain.p, rng)
    rows = qualitative_rows(QualitativePlan.RANDOM, domain.qualitative, n_runs, rng)
    return X, np.array(rows, dtype=int).reshape(n_runs, domain.q)


def candidate_pool(X_train, Z_train, y_train, domain: DomainSpec, n_per_level=DEFAULT_CANDIDATES,
                   rng=None, n_best=3, vertices=False):
    """Search pool: a fresh Latin hypercube per level combination plus the
    best observed ``x`` locations crossed with every combination.

    With ``vertices`` the corners of the unit cube are added too (only for
    ``p <= 8``); interior Latin hypercube points never reach the boundary.

    Candidates closer than ``1e-6`` (unit scale, same levels) to a training
    point are dropped.
    """
    if n_per_level < 1:
        raise InvalidArgumentError("n_per_level must be at least 1")
    rng = np.random.default_rng(rng)
    X_train = np.asarray(X_train, dtype=float).reshape(-1, domain.p)
    Z_train = np.asarray(Z_train, dtype=int).reshape(-1, domain.q)
    combos = np.array(full_factorial(domain.qualitative), dtype=int).reshape(-1, domain.q)
    best_x = np.empty((0, domain.p))
    if len(X_train) and y_train is not None and len(y_train):
        order = np.argsort(np.asarray(y_train, dtype=float), kind="stable")[:n_best]
        best_x = X_train[order]
    if vertices and 0 < domain.p <= _MAX_VERTEX_DIM:
        best_x = np.vstack([best_x, np.array(list(itertools.product((0.0, 1.0), repeat=domain.p)))])
    blocks_x, blocks_z = [], []
    for combo in combos:
        xs = np.vstack([random_lhd(n_per_level, domain.p, rng), best_x])
        blocks_x.append(xs)
        blocks_z.append(np.repeat(combo[None, :], len(xs), axis=0))
    X = np.vstack(blocks_x)
    Z = np.vstack(blocks_z)
    keep = _not_duplicate(X, Z, X_train, Z_train)
    return CandidateSet(X[keep], Z[keep], n_per_level)


def _not_duplicate(X, Z, X_train, Z_train):
    keep = np.ones(len(X), dtype=bool)
    for xt, zt in zip(X_train, Z_train):
        same_z = np.all(Z == zt, axis=1)
        close = np.sqrt(np.sum((X - xt) ** 2, axis=1)) < _DUPLICATE_TOL
        keep &= ~(same_z & close)
    return keep


def grid(domain: DomainSpec, n_per_axis):
    """Regular grid over the unit cube crossed with every level combination."""
    axes = [np.linspace(0.0, 1.0, n_per_axis)] * domain.p
    xs = np.array(list(itertools.product(*axes))).reshape(-1, domain.p)
    combos = np.array(full_factorial(domain.qualitative), dtype=int).reshape(-1, domain.q)
    X = np.tile(xs, (len(combos), 1))
    Z = np.repeat(combos, len(xs), axis=0)
    return CandidateSet(X, Z, len(xs))
