"""Sequential design driver with ask/tell and JSON persistence.

A :class:`Campaign` walks through the initial design first and then
proposes one point per iteration: refit the surrogate, draw a candidate
pool, score it, and return the winner. Each iteration's randomness is
derived from ``(rng_seed, iteration)`` only, so a campaign reloaded from
disk proposes exactly the point the original would have.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .acquisition import AcquisitionConfig, Sense, Strategy, beta, select
from .design import (
    DEFAULT_CANDIDATES,
    InitialDesignSpec,
    candidate_pool,
    initial_design,
    one_shot_design,
)
from .exceptions import (
    FitFailureError,
    InvalidArgumentError,
    NumericalFailureError,
    PersistenceError,
    ProtocolError,
)
from .gp import AGPRegressor, mixed_array
from .kernels import DomainSpec, MixedPoint

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
READY = "READY"
AWAITING_RESPONSE = "AWAITING_RESPONSE"
# grow the pool when the adaptive region keeps less than this fraction
_SPARSE_REGION = 0.05
_POLISH_EVALS = 50
_POLISH_HALF_WIDTH = 0.1


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 5
    max_iter: int = 200
    tol: float = 1e-6
    theta_bounds: tuple = (1e-3, 1e3)
    sigma2_bounds: tuple = (1e-8, 1e3)
    jitter: float = 1e-6

    def __post_init__(self):
        if self.n_starts < 1:
            raise InvalidArgumentError("n_starts must be at least 1")
        object.__setattr__(self, "theta_bounds", tuple(float(v) for v in self.theta_bounds))
        object.__setattr__(self, "sigma2_bounds", tuple(float(v) for v in self.sigma2_bounds))

    def estimator(self, level_counts, seed):
        return AGPRegressor(
            level_counts=level_counts, n_starts=self.n_starts, max_iter=self.max_iter, tol=self.tol,
            theta_bounds=self.theta_bounds, sigma2_bounds=self.sigma2_bounds, jitter=self.jitter,
            random_state=seed,
        )

    def to_dict(self):
        d = asdict(self)
        d["theta_bounds"] = list(self.theta_bounds)
        d["sigma2_bounds"] = list(self.sigma2_bounds)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class CampaignConfig:
    domain: DomainSpec
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    init_spec: InitialDesignSpec = None
    n_sequential: int | None = None
    fit: FitConfig = field(default_factory=FitConfig)
    rng_seed: int = 0
    n_candidates: int = DEFAULT_CANDIDATES
    polish: bool = False
    pool_vertices: bool = False

    def __post_init__(self):
        if self.init_spec is None:
            n0 = self.domain.qualitative.n_combinations
            object.__setattr__(self, "init_spec", InitialDesignSpec(n0, rng_seed=self.rng_seed))
        if self.n_sequential is not None and self.n_sequential < 0:
            raise InvalidArgumentError("n_sequential must be nonnegative")
        if self.n_candidates < 1:
            raise InvalidArgumentError("n_candidates must be positive")

    @property
    def budget(self):
        if self.n_sequential is None:
            return None
        return self.init_spec.n_runs + self.n_sequential

    def to_dict(self):
        return {
            "domain": self.domain.to_dict(),
            "acquisition": self.acquisition.to_dict(),
            "init": self.init_spec.to_dict(),
            "n_sequential": self.n_sequential,
            "fit": self.fit.to_dict(),
            "rng_seed": self.rng_seed,
            "n_candidates": self.n_candidates,
            "polish": self.polish,
            "pool_vertices": self.pool_vertices,
        }

    @classmethod
    def from_dict(cls, d):
        expected = {"domain", "acquisition", "init", "n_sequential", "fit", "rng_seed", "n_candidates", "polish",
                    "pool_vertices"}
        if set(d) != expected:
            raise PersistenceError(f"config fields differ from {sorted(expected)}: {sorted(d)}")
        return cls(
            domain=DomainSpec.from_dict(d["domain"]),
            acquisition=AcquisitionConfig.from_dict(d["acquisition"]),
            init_spec=InitialDesignSpec.from_dict(d["init"]),
            n_sequential=d["n_sequential"],
            fit=FitConfig.from_dict(d["fit"]),
            rng_seed=int(d["rng_seed"]),
            n_candidates=int(d["n_candidates"]),
            polish=bool(d["polish"]),
            pool_vertices=bool(d["pool_vertices"]),
        )


def _seed(*keys):
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])


class Campaign:
    """Open-loop sequential design session.

    Responses are stored in minimisation orientation internally; for a
    ``MAX`` problem they are negated on the way in and out.
    """

    def __init__(self, config: CampaignConfig):
        self.config = config
        self.X = np.empty((0, config.domain.p))
        self.Z = np.empty((0, config.domain.q), dtype=int)
        self._y = np.empty(0)
        self.iteration = 0
        self.history = []
        self.phase = READY
        self.n_fits = 0
        self._pending = None
        self._models = {}
        self._init_design = None
        self._one_shot = None
        self.last_pool = None

    # -- orientation -----------------------------------------------------

    @property
    def _sign(self):
        return -1.0 if self.config.acquisition.sense is Sense.MAX else 1.0

    @property
    def responses(self):
        """Observed responses in the user's orientation."""
        return self._sign * self._y

    @property
    def n_observations(self):
        return len(self._y)

    @property
    def best_value(self):
        if not len(self._y):
            return None
        return float(self._sign * np.min(self._y))

    @property
    def best_point(self):
        if not len(self._y):
            return None
        i = int(np.argmin(self._y))
        return MixedPoint(self.X[i], self.Z[i])

    def best_trace(self):
        """Best-so-far (user orientation) after each observation."""
        return self._sign * np.minimum.accumulate(self._y)

    # -- designs ---------------------------------------------------------

    def _initial_rows(self):
        if self._init_design is None:
            self._init_design = initial_design(self.config.init_spec, self.config.domain)
        return self._init_design

    def _one_shot_rows(self):
        if self._one_shot is None:
            budget = self.config.budget
            if budget is None:
                raise InvalidArgumentError("the one-shot strategy needs a fixed budget (n_sequential)")
            self._one_shot = one_shot_design(budget, self.config.domain, _seed(self.config.rng_seed, 7))
        return self._one_shot

    @property
    def in_initial_phase(self):
        return (self.config.acquisition.strategy is not Strategy.RA
                and self.n_observations < self.config.init_spec.n_runs)

    # -- model -----------------------------------------------------------

    def _fit_at(self, n):
        if n in self._models:
            return self._models[n]
        est = self.config.fit.estimator(self.config.domain.level_counts, _seed(self.config.rng_seed, n, 3))
        model = est.fit(mixed_array(self.X[:n], self.Z[:n]), self._y[:n])
        self.n_fits += 1
        self._models = {k: v for k, v in self._models.items() if k >= n - 1}
        self._models[n] = model
        return model

    def fit_model(self):
        """Surrogate fitted to every observation so far."""
        if self.n_observations < 1:
            raise ProtocolError("no observations to fit")
        return self._fit_at(self.n_observations)

    def _model_for_ask(self):
        n = self.n_observations
        try:
            return self._fit_at(n), False
        except (FitFailureError, NumericalFailureError) as exc:
            prev_fallback = bool(self.history and self.history[-1].get("fallback"))
            if n > 1 and not prev_fallback:
                logger.warning("fit failed at n=%d (%s); reusing the previous model", n, exc)
                try:
                    return self._fit_at(n - 1), True
                except (FitFailureError, NumericalFailureError):
                    pass
            err = exc if isinstance(exc, FitFailureError) else FitFailureError(str(exc))
            err.state = self
            raise err from exc

    def beta_now(self, n=None):
        cfg = self.config
        n = self.n_observations if n is None else n
        return beta(n, cfg.domain.qualitative.n_combinations, cfg.acquisition.alpha)

    def region_on(self, candidates, model=None):
        """Adaptive region of the current model over a given pool."""
        from .acquisition import adaptive_region

        model = self.fit_model() if model is None else model
        dist = model.predict_dist(candidates.as_array())
        return adaptive_region(dist.mean, dist.sd, self.beta_now())

    # -- protocol --------------------------------------------------------

    def ask(self):
        """Propose the next point (unit scale) and wait for its response."""
        if self.phase != READY:
            raise ProtocolError("ask() called while a response is pending")
        cfg = self.config
        n = self.n_observations
        if cfg.acquisition.strategy is Strategy.RA:
            X1, Z1 = self._one_shot_rows()
            if n >= len(X1):
                raise ProtocolError("budget exhausted")
            point = MixedPoint(X1[n], Z1[n])
        elif n < cfg.init_spec.n_runs:
            X0, Z0 = self._initial_rows()
            point = MixedPoint(X0[n], Z0[n])
        else:
            if cfg.n_sequential is not None and self.iteration >= cfg.n_sequential:
                raise ProtocolError("budget exhausted")
            point = self._propose()
        self._pending = point
        self.phase = AWAITING_RESPONSE
        return point

    def _propose(self):
        cfg = self.config
        acq = cfg.acquisition
        model, fallback = self._model_for_ask()
        rng = np.random.default_rng(_seed(cfg.rng_seed, self.iteration, 5))
        b = self.beta_now()
        best = float(np.min(self._y))
        pool = candidate_pool(self.X, self.Z, self._y, cfg.domain, cfg.n_candidates, rng,
                              vertices=cfg.pool_vertices)
        dist = model.predict_dist(pool.as_array())
        sel = select(dist.mean, dist.sd, acq, best_observed=best, beta_value=b)
        if sel.region is not None and sel.region.fraction < _SPARSE_REGION:
            extra = candidate_pool(self.X, self.Z, self._y, cfg.domain, cfg.n_candidates, rng, n_best=0, vertices=False)
            pool.X = np.vstack([pool.X, extra.X])
            pool.Z = np.vstack([pool.Z, extra.Z])
            pool.per_level_count *= 2
            dist = model.predict_dist(pool.as_array())
            sel = select(dist.mean, dist.sd, acq, best_observed=best, beta_value=b)
        # kept for diagnostics only, never persisted
        self.last_pool = pool
        x, z = pool.X[sel.index], pool.Z[sel.index]
        criterion = sel.criterion
        if cfg.polish:
            x, criterion = self._polish(model, x, z, criterion, best, b, sel.region)
        self.iteration += 1
        self.history.append({
            "iteration": self.iteration,
            "x_unit": [float(v) for v in x],
            "z": [int(v) for v in z],
            "criterion": float(criterion),
            "beta": float(b),
            "region_size": None if sel.region is None else sel.region.size,
            "region_fraction": None if sel.region is None else float(sel.region.fraction),
            "n_candidates": len(pool),
            "log_likelihood": float(model.log_likelihood_),
            "fallback": fallback,
        })
        return MixedPoint(x, z)

    def _polish(self, model, x, z, criterion, best, b, region):
        """Coordinate-wise golden-section refinement of ``x`` within level ``z``."""
        from .acquisition import confidence_bounds, score

        acq = self.config.acquisition
        p = len(x)
        if p == 0:
            return x, criterion
        threshold = None if region is None else region.threshold

        def f(xv):
            if np.any(np.max(np.abs(self.X - xv), axis=1, initial=np.inf)[np.all(self.Z == z, axis=1)] < 1e-6):
                return np.inf
            d = model.predict_dist(np.hstack([xv, z])[None, :].astype(float))
            if threshold is not None:
                lo, _ = confidence_bounds(d.mean, d.sd, b)
                if lo[0] > threshold:
                    return np.inf
            return float(score(d.mean, d.sd, acq, best_observed=best, beta_value=b)[0])

        per_coord = max(2, _POLISH_EVALS // p)
        best_x, best_f = np.array(x, dtype=float), float(criterion)
        gr = (math.sqrt(5) - 1) / 2
        for i in range(p):
            lo = max(0.0, best_x[i] - _POLISH_HALF_WIDTH)
            hi = min(1.0, best_x[i] + _POLISH_HALF_WIDTH)
            a, c = lo, hi
            cand = best_x.copy()

            def fi(t):
                cand[i] = t
                return f(cand)

            x1, x2 = c - gr * (c - a), a + gr * (c - a)
            f1, f2 = fi(x1), fi(x2)
            for _ in range(per_coord - 2):
                if f1 <= f2:
                    c, x2, f2 = x2, x1, f1
                    x1 = c - gr * (c - a)
                    f1 = fi(x1)
                else:
                    a, x1, f1 = x1, x2, f2
                    x2 = a + gr * (c - a)
                    f2 = fi(x2)
            t, ft = (x1, f1) if f1 <= f2 else (x2, f2)
            if ft < best_f:
                best_x[i], best_f = t, ft
        return best_x, best_f

    def tell(self, y):
        """Record the response to the pending point."""
        if self.phase != AWAITING_RESPONSE:
            raise ProtocolError("tell() called without a pending point")
        y = float(y)
        if not math.isfinite(y):
            raise InvalidArgumentError("response must be finite")
        pt = self._pending
        self.X = np.vstack([self.X, np.asarray(pt.x, dtype=float)[None, :]])
        self.Z = np.vstack([self.Z, np.asarray(pt.z, dtype=int)[None, :]])
        self._y = np.append(self._y, self._sign * y)
        if self.history and self.n_observations > self._n_before_history():
            self.history[-1]["y"] = y
            self.history[-1]["best_value"] = self.best_value
        self._pending = None
        self.phase = READY
        return self

    def _n_before_history(self):
        if self.config.acquisition.strategy is Strategy.RA:
            return self.n_observations
        return self.config.init_spec.n_runs

    @property
    def pending(self):
        return self._pending

    # -- user units ------------------------------------------------------

    def to_user(self, point: MixedPoint):
        dom = self.config.domain
        x = dom.from_unit(np.asarray(point.x))
        labels = [dom.qualitative.label_of(j, v) for j, v in enumerate(point.z)]
        return {"x": [float(v) for v in x], "z": labels}

    # -- persistence -----------------------------------------------------

    def to_dict(self):
        points = []
        for x, z in zip(self.X, self.Z):
            rec = self.to_user(MixedPoint(x, z))
            rec["x_unit"] = [float(v) for v in x]
            points.append(rec)
        return {
            "version": FORMAT_VERSION,
            "config": self.config.to_dict(),
            "points": points,
            "responses": [float(v) for v in self.responses],
            "iteration": self.iteration,
            "phase": self.phase,
            "rng_state": {"seed": self.config.rng_seed, "scheme": "per-iteration"},
            "history": self.history,
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            fh.write(self.dumps())
        os.replace(tmp, path)

    @classmethod
    def from_dict(cls, d):
        expected = {"version", "config", "points", "responses", "iteration", "phase", "rng_state", "history"}
        if set(d) != expected:
            raise PersistenceError(f"campaign fields differ from {sorted(expected)}: {sorted(d)}")
        if d["version"] != FORMAT_VERSION:
            raise PersistenceError(f"unsupported campaign version {d['version']}")
        try:
            cfg = CampaignConfig.from_dict(d["config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise PersistenceError(f"bad config: {exc}") from exc
        if d["rng_state"] != {"seed": cfg.rng_seed, "scheme": "per-iteration"}:
            raise PersistenceError("rng_state does not match the config seed")
        c = cls(cfg)
        dom = cfg.domain
        if len(d["points"]) != len(d["responses"]):
            raise PersistenceError("points and responses differ in length")
        X, Z = [], []
        for rec in d["points"]:
            if set(rec) - {"x", "z", "x_unit"}:
                raise PersistenceError(f"unknown point fields {sorted(set(rec) - {'x', 'z', 'x_unit'})}")
            x = np.asarray(rec["x_unit"], dtype=float) if "x_unit" in rec else dom.to_unit(rec["x"])
            z = [dom.qualitative.level_of(j, lab) for j, lab in enumerate(rec["z"])]
            MixedPoint(x, z).check(dom.p, dom.qualitative)
            X.append(x)
            Z.append(z)
        c.X = np.array(X, dtype=float).reshape(-1, dom.p)
        c.Z = np.array(Z, dtype=int).reshape(-1, dom.q)
        ys = np.asarray(d["responses"], dtype=float)
        if not np.all(np.isfinite(ys)):
            raise PersistenceError("responses must be finite")
        c._y = c._sign * ys
        c.iteration = int(d["iteration"])
        c.history = list(d["history"])
        if len(c.history) != c.iteration:
            raise PersistenceError("history length does not match the iteration count")
        if d["phase"] not in (READY, AWAITING_RESPONSE):
            raise PersistenceError(f"unknown phase {d['phase']!r}")
        c.phase = d["phase"]
        if c.phase == AWAITING_RESPONSE:
            c._pending = c._recover_pending()
        return c

    def _recover_pending(self):
        n = self.n_observations
        if self.config.acquisition.strategy is Strategy.RA:
            X1, Z1 = self._one_shot_rows()
            return MixedPoint(X1[n], Z1[n])
        if n < self.config.init_spec.n_runs:
            X0, Z0 = self._initial_rows()
            return MixedPoint(X0[n], Z0[n])
        if not self.history:
            raise PersistenceError("pending sequential point missing from history")
        rec = self.history[-1]
        return MixedPoint(rec["x_unit"], rec["z"])

    @classmethod
    def loads(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PersistenceError(f"not a campaign file: {exc}") from exc
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())

    def with_acquisition(self, **changes):
        """Switch strategy settings (e.g. rho) for subsequent asks."""
        acq = replace(self.config.acquisition, **changes)
        self.config = replace(self.config, acquisition=acq)
        return self


def _evaluate(objective, campaign, point):
    dom = campaign.config.domain
    x_user = dom.from_unit(np.asarray(point.x, dtype=float))
    return float(objective(x_user, tuple(point.z)))


def run_campaign(objective, config: CampaignConfig):
    """Closed-loop run: initial design followed by ``n_sequential`` iterations.

    ``objective(x, z)`` receives user-unit ``x`` and a tuple of level indices.
    """
    if config.n_sequential is None:
        raise InvalidArgumentError("run_campaign needs a fixed n_sequential")
    c = Campaign(config)
    budget = config.budget
    while c.n_observations < budget:
        point = c.ask()
        c.tell(_evaluate(objective, c, point))
    return c


def run_ra(objective, config: CampaignConfig):
    """One-shot baseline: evaluate a single space-filling design of the full budget."""
    cfg = replace(config, acquisition=replace(config.acquisition, strategy=Strategy.RA))
    return run_campaign(objective, cfg)
