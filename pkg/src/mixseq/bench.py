"""Benchmark objectives, brute-force oracles and replicated studies."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .acquisition import AcquisitionConfig, Strategy
from .campaign import Campaign, CampaignConfig, FitConfig, _seed, run_campaign
from .design import DEFAULT_CANDIDATES, InitialDesignSpec, full_factorial
from .exceptions import InvalidArgumentError, MixseqError
from .kernels import DomainSpec, QualitativeSpace


MAX_ORACLE_EVALS = 10_000_000
_EX2_LEVELS = np.array([-50.0, 0.0, 50.0])


@dataclass(frozen=True)
class KnownMinimum:
    value: float
    x: tuple
    z: tuple
    provenance: str


@dataclass(frozen=True)
class BenchmarkFn:
    """Deterministic test objective over a mixed domain.

    ``batch(X, Z)`` takes user-unit ``X`` of shape (N, p) and level indices
    ``Z`` of shape (N, q); calling the object evaluates a single point.
    """

    name: str
    domain: DomainSpec
    batch: callable
    known_min: KnownMinimum | None = None
    # optional fast exhaustive sweep: grid_sweep(k, polish) over k points per axis
    grid_sweep: callable = None

    def __post_init__(self):
        km = self.known_min
        if km is not None:
            got = self(np.asarray(km.x), km.z)
            if abs(got - km.value) > 1e-9:
                raise InvalidArgumentError(f"{self.name}: known minimum {km.value} but evaluator gives {got}")

    def __call__(self, x, z):
        X = np.asarray(x, dtype=float).reshape(1, -1)
        Z = np.asarray(z, dtype=int).reshape(1, -1)
        self._check(X, Z)
        return float(self.batch(X, Z)[0])

    def _check(self, X, Z):
        dom = self.domain
        lo, span = dom._lo_span()
        if X.shape[1] != dom.p or Z.shape[1] != dom.q:
            raise InvalidArgumentError(f"{self.name} takes {dom.p} continuous and {dom.q} qualitative inputs")
        slack = 1e-9 * span
        if np.any(X < lo - slack) or np.any(X > lo + span + slack):
            raise InvalidArgumentError(f"{self.name}: x outside the domain")
        if np.any(Z < 1) or np.any(Z > np.asarray(dom.level_counts)):
            raise InvalidArgumentError(f"{self.name}: level index out of range")


def _example1_batch(X, Z):
    x = X[:, 0]
    z = Z[:, 0]
    out = np.where(z == 1, 2.0 + np.cos(6 * np.pi * x), 0.0)
    out = np.where(z == 2, 1.0 - np.cos(4 * np.pi * x), out)
    out = np.where(z == 3, np.cos(2 * np.pi * x), out)
    return out


def _example2_batch(X, Z):
    zv = _EX2_LEVELS[Z - 1]
    lin = np.zeros(len(X))
    prod = np.ones(len(X))
    for i in range(3):
        zi = zv[:, 2 - i]  # x_i pairs with z_{4-i}
        s = math.sqrt(i + 1)
        lin += X[:, i] * zi / 4000.0
        prod *= np.cos(X[:, i] / s) * np.sin(zi / s)
    return lin + prod


def _example3_batch(X, Z):
    x1, x2, x3 = X[:, 0], X[:, 1], X[:, 2]
    f = np.stack([x1 + x2 ** 2 + x3 ** 3, x1 ** 2 + x2 + x3 ** 3, x1 ** 3 + x2 ** 2 + x3])
    g = np.stack([
        np.cos(x1) + np.cos(2 * x2) + np.cos(3 * x3),
        np.cos(3 * x1) + np.cos(2 * x2) + np.cos(x3),
        np.cos(2 * x1) + np.cos(x2) + np.cos(3 * x3),
    ])
    h = np.stack([
        np.sin(x1) + np.sin(2 * x2) + np.sin(3 * x3),
        np.sin(3 * x1) + np.sin(2 * x2) + np.sin(x3),
        np.sin(2 * x1) + np.sin(x2) + np.sin(3 * x3),
    ])
    idx = np.arange(len(X))
    return f[Z[:, 0] - 1, idx] * (g[Z[:, 1] - 1, idx] + h[Z[:, 2] - 1, idx])


def example1():
    dom = DomainSpec(((0.0, 1.0),), QualitativeSpace((3,)))
    return BenchmarkFn("example1", dom, _example1_batch,
                       KnownMinimum(-1.0, (0.5,), (3,), "paper: minimum -1 at z=3, x=0.5"))


def example2():
    labels = (("-50", "0", "50"),) * 3
    dom = DomainSpec(((-100.0, 100.0),) * 3, QualitativeSpace((3, 3, 3), labels))
    return BenchmarkFn("example2", dom, _example2_batch, grid_sweep=_example2_sweep)


def example3():
    dom = DomainSpec(((0.0, 1.0),) * 3, QualitativeSpace((3, 3, 3)))
    return BenchmarkFn("example3", dom, _example3_batch)


BENCHMARKS = {"example1": example1, "example2": example2, "example3": example3}

# Initial design and sequential budget used for each objective in the studies.
DEFAULT_BUDGETS = {"example1": (3, 6), "example2": (9, 9), "example3": (9, 6)}


def get_benchmark(name):
    try:
        return BENCHMARKS[name]()
    except KeyError:
        raise InvalidArgumentError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


class OracleBudgetError(InvalidArgumentError):
    category = "budget"


def brute_force_min(fn: BenchmarkFn, density, max_evals=MAX_ORACLE_EVALS, polish=True, chunk=2_000_000):
    """Exhaustive grid minimum over every level combination, then one local polish.

    ``density`` is the grid step on the unit scale, so each continuous axis
    gets ``round(1 / density) + 1`` points.

    Returns
    -------
    dict with keys ``value``, ``x`` (user units), ``z``, ``n_evals``, ``grid_value``.
    """
    if not 0 < density <= 1:
        raise InvalidArgumentError("density must lie in (0, 1]")
    dom = fn.domain
    k = int(round(1.0 / density)) + 1
    combos = full_factorial(dom.qualitative)
    total = k ** dom.p * len(combos)
    if total > max_evals:
        needed = 1.0 / (round((max_evals / len(combos)) ** (1.0 / max(dom.p, 1))) - 1)
        raise OracleBudgetError(
            f"{total:.3g} evaluations exceed the budget {max_evals:.3g}; "
            f"use density >= {needed:.3g} or raise max_evals"
        )
    if fn.grid_sweep is not None:
        return fn.grid_sweep(k, polish)
    axis = np.linspace(0.0, 1.0, k)
    best = (np.inf, None, None)
    n_x = k ** dom.p
    rows_per_chunk = max(1, chunk)
    for combo in combos:
        for start in range(0, n_x, rows_per_chunk):
            stop = min(n_x, start + rows_per_chunk)
            flat = np.arange(start, stop)
            U = np.empty((len(flat), dom.p))
            rem = flat.copy()
            for i in range(dom.p - 1, -1, -1):
                U[:, i] = axis[rem % k]
                rem //= k
            Xu = dom.from_unit(U)
            vals = fn.batch(Xu, np.repeat(np.array(combo)[None, :], len(flat), axis=0))
            j = int(np.argmin(vals))
            if vals[j] < best[0]:
                best = (float(vals[j]), U[j].copy(), tuple(combo))
    grid_value, u_best, z_best = best
    value, u_final = grid_value, u_best
    if polish and dom.p:
        zrow = np.array(z_best)[None, :]

        def f(u):
            return float(fn.batch(dom.from_unit(np.clip(u, 0, 1))[None, :], zrow)[0])

        res = minimize(f, u_best, method="L-BFGS-B", bounds=[(0.0, 1.0)] * dom.p)
        if res.fun < value:
            value, u_final = float(res.fun), np.clip(res.x, 0, 1)
    return {
        "value": value,
        "x": [float(v) for v in dom.from_unit(u_final)],
        "z": list(z_best),
        "n_evals": int(total),
        "grid_value": grid_value,
    }


def parse_strategy(token, rho=2.0, alpha=0.05):
    """``"NAME"`` or ``"NAME:rho=R"`` -> (label, AcquisitionConfig)."""
    if isinstance(token, tuple):
        return token
    name, _, opts = str(token).partition(":")
    kw = {"rho": rho, "alpha": alpha}
    for item in filter(None, opts.split(",")):
        key, _, val = item.partition("=")
        if key not in ("rho", "alpha"):
            raise InvalidArgumentError(f"unknown strategy option {key!r}")
        kw[key] = float(val)
    cfg = AcquisitionConfig(Strategy.parse(name), kw["rho"], kw["alpha"])
    label = cfg.strategy.value if not opts else f"{cfg.strategy.value}:{opts}"
    return label, cfg


@dataclass
class StudyResult:
    """Found minima per strategy and replication."""

    function: str
    strategies: list
    n_reps: int
    config: dict
    rows: list = field(default_factory=list)
    campaigns: dict = field(default_factory=dict, repr=False)

    @property
    def fingerprint(self):
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def values(self, strategy):
        return np.array([r["best_value"] for r in self.rows if r["strategy"] == strategy and r["error"] is None])

    def summary(self):
        return summarize(self.rows, self.strategies)


def summarize(rows, strategies):
    out = {}
    for s in strategies:
        vals = np.array([float(r["best_value"]) for r in rows
                         if r["strategy"] == s and r.get("error") in (None, "")])
        n_failed = sum(1 for r in rows if r["strategy"] == s and r.get("error") not in (None, ""))
        if len(vals):
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            out[s] = {"n": int(len(vals)), "n_failed": n_failed, "median": float(med), "q1": float(q1),
                      "q3": float(q3), "min": float(vals.min()), "max": float(vals.max())}
        else:
            out[s] = {"n": 0, "n_failed": n_failed, "median": None, "q1": None, "q3": None,
                      "min": None, "max": None}
    return out


def _run_one(fn, label, acq, n_init, n_sequential, rep_seed, fit, n_candidates, polish, keep, vertices=False):
    cfg = CampaignConfig(
        domain=fn.domain, acquisition=acq,
        init_spec=InitialDesignSpec(n_init, rng_seed=rep_seed),
        n_sequential=n_sequential, fit=fit, rng_seed=rep_seed,
        n_candidates=n_candidates, polish=polish, pool_vertices=vertices,
    )
    t0 = time.perf_counter()
    try:
        c = run_campaign(fn, cfg)
        best, err = c.best_value, None
    except MixseqError as exc:
        c, best, err = None, float("nan"), f"{exc.category}: {exc}"
    wall = (time.perf_counter() - t0) * 1000.0
    return {"strategy": label, "best_value": best, "wall_ms": wall, "error": err}, (c if keep else None)


def replicate_study(fn, strategies, n_reps=100, budget=None, seed=0, rho=2.0, alpha=0.05,
                    fit=None, n_candidates=DEFAULT_CANDIDATES, polish=True, n_jobs=1,
                    keep_campaigns=False, max_failure_rate=0.05, pool_vertices=False):
    """Run every strategy on ``n_reps`` replications of ``fn``.

    Replication ``r`` uses seed ``_seed(seed, r)`` for its initial design,
    so all sequential strategies in one replication start from the same
    points.

    Parameters
    ----------
    fn : BenchmarkFn or str
    strategies : list of str
        Names such as ``"ADAPTIVE_CEE"`` or ``"ADAPTIVE_CEE:rho=0.5"``.
    budget : (int, int)
        Initial runs and sequential iterations.
    polish : bool
        Refine each sequential pick locally; applies to every strategy alike.
    n_jobs : int
        Worker processes (joblib); 1 runs inline.
    """
    if isinstance(fn, str):
        fn = get_benchmark(fn)
    if not strategies:
        raise InvalidArgumentError("need at least one strategy")
    if budget is None:
        budget = DEFAULT_BUDGETS.get(fn.name, (fn.domain.qualitative.n_combinations, 6))
    n_init, n_seq = (int(v) for v in budget)
    fit = fit or FitConfig()
    parsed = [parse_strategy(s, rho, alpha) for s in strategies]
    labels = [lab for lab, _ in parsed]
    if len(set(labels)) != len(labels):
        raise InvalidArgumentError("duplicate strategy labels")
    seeds = [_seed(seed, r) for r in range(n_reps)]
    config = {
        "function": fn.name, "strategies": labels, "n_reps": n_reps, "budget": [n_init, n_seq],
        "seed": seed, "rho": rho, "alpha": alpha, "fit": fit.to_dict(), "n_candidates": n_candidates,
        "polish": polish, "pool_vertices": pool_vertices,
    }
    tasks = [(r, lab, acq) for r in range(n_reps) for lab, acq in parsed]

    def job(r, lab, acq):
        return _run_one(fn, lab, acq, n_init, n_seq, seeds[r], fit, n_candidates, polish, keep_campaigns,
                        pool_vertices)

    if n_jobs == 1:
        outs = [job(*t) for t in tasks]
    else:
        from joblib import Parallel, delayed

        outs = Parallel(n_jobs=n_jobs)(delayed(job)(*t) for t in tasks)
    result = StudyResult(fn.name, labels, n_reps, config)
    for (r, lab, _), (row, camp) in zip(tasks, outs):
        row.update({"function": fn.name, "replication": r, "seed": seeds[r]})
        result.rows.append(row)
        if camp is not None:
            result.campaigns[(lab, r)] = camp
    n_failed = sum(1 for row in result.rows if row["error"] is not None)
    if n_failed > max_failure_rate * len(result.rows):
        raise MixseqError(f"{n_failed} of {len(result.rows)} replications failed")
    return result


RHO_SWEEP = (0.5, 1.0, 2.0, 3.0)


def rho_sensitivity(fn="example1", rhos=RHO_SWEEP, **kwargs):
    """Adaptive CEE at several ``rho`` values on the same replications."""
    strategies = [f"ADAPTIVE_CEE:rho={r:g}" for r in rhos]
    return replicate_study(fn, strategies, **kwargs)


def iqr_overlap(a, b):
    qa = np.percentile(a, [25, 75])
    qb = np.percentile(b, [25, 75])
    return bool(qa[0] <= qb[1] and qb[0] <= qa[1])


RUN_FIELDS = ["function", "strategy", "replication", "seed", "best_value", "error"]
TIMING_FIELDS = ["function", "strategy", "replication", "wall_ms"]
QUANTILES = (0.0, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 1.0)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def runs_csv(result: StudyResult):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RUN_FIELDS)
    for r in result.rows:
        w.writerow([_fmt(r[k]) for k in RUN_FIELDS])
    return buf.getvalue()


def read_runs(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["replication"] = int(r["replication"])
        r["seed"] = int(r["seed"])
        r["best_value"] = float(r["best_value"]) if r["best_value"] != "" else float("nan")
        r["error"] = r["error"] or None
    return rows


def summary_table(rows, strategies, fmt="csv"):
    summ = summarize(rows, strategies)
    if fmt == "json":
        return json.dumps(summ, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = ["n", "n_failed", "median", "q1", "q3", "min", "max"]
    w.writerow(["strategy"] + keys)
    for s in strategies:
        w.writerow([s] + [_fmt(summ[s][k]) for k in keys])
    return buf.getvalue()


def quantile_table(rows, strategies, fmt="csv"):
    table = {}
    for s in strategies:
        vals = np.array([r["best_value"] for r in rows if r["strategy"] == s and r.get("error") is None])
        table[s] = [float(v) for v in np.quantile(vals, QUANTILES)] if len(vals) else []
    if fmt == "json":
        return json.dumps({"quantiles": list(QUANTILES), "values": table}, indent=2, sort_keys=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy"] + [f"q{q:g}" for q in QUANTILES])
    for s in strategies:
        w.writerow([s] + [_fmt(v) for v in table[s]])
    return buf.getvalue()


def report(result, out_dir, fmt="csv"):
    """Write raw runs, timings, summary and quantile tables to ``out_dir``.

    Everything except ``timings.csv`` is byte-stable for identical inputs.
    """
    if fmt not in ("csv", "json"):
        raise InvalidArgumentError(f"unknown report format {fmt!r}")
    if not result.strategies:
        raise InvalidArgumentError("study has no strategies")
    os.makedirs(out_dir, exist_ok=True)
    written = {}

    def put(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        written[name] = path

    put("runs.csv", runs_csv(result))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_FIELDS)
    for r in result.rows:
        w.writerow([_fmt(r[k]) for k in TIMING_FIELDS])
    put("timings.csv", buf.getvalue())
    meta = dict(result.config, fingerprint=result.fingerprint)
    put("study.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    put(f"summary.{fmt}", summary_table(result.rows, result.strategies, fmt))
    put(f"quantiles.{fmt}", quantile_table(result.rows, result.strategies, fmt))
    return written


def report_from_dir(in_dir, fmt="csv"):
    """Regenerate summary and quantile tables from a study directory's raw CSV."""
    with open(os.path.join(in_dir, "study.json")) as fh:
        meta = json.load(fh)
    rows = read_runs(os.path.join(in_dir, "runs.csv"))
    strategies = meta["strategies"]
    out = {}
    for name, text in ((f"summary.{fmt}", summary_table(rows, strategies, fmt)),
                       (f"quantiles.{fmt}", quantile_table(rows, strategies, fmt))):
        path = os.path.join(in_dir, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        out[name] = path
    return out


def diagnostic_grid(domain, n_x=512):
    """Regular grid for region snapshots: ``n_x`` points per axis times every level combination."""
    from .design import grid

    return grid(domain, n_x)


def region_trace(campaign: Campaign, grid):
    """Membership of the current adaptive region on ``grid`` (bool array)."""
    return campaign.region_on(grid).in_region


def example1_diagnostics(seed, n_sequential=15, out_dir=None, rho=2.0, alpha=0.05, n_x=512, fit=None):
    """One Example-1 trial with per-iteration criterion, best-so-far and region snapshots.

    Returns a dict of arrays; when ``out_dir`` is given, also writes
    ``trace.csv`` and ``regions.csv``.
    """
    fn = example1()
    cfg = CampaignConfig(
        domain=fn.domain, acquisition=AcquisitionConfig(Strategy.ADAPTIVE_CEE, rho, alpha),
        init_spec=InitialDesignSpec(3, rng_seed=seed), n_sequential=n_sequential,
        fit=fit or FitConfig(), rng_seed=seed,
    )
    c = Campaign(cfg)
    g = diagnostic_grid(fn.domain, n_x)
    regions = []
    while c.n_observations < cfg.budget:
        pt = c.ask()
        c.tell(fn(fn.domain.from_unit(np.asarray(pt.x)), pt.z))
        if c.n_observations >= cfg.init_spec.n_runs:
            regions.append(region_trace(c, g))
    out = {
        "criterion": np.array([h["criterion"] for h in c.history]),
        "best": c.best_trace(),
        "regions": np.array(regions),
        "grid_x": g.X[:, 0],
        "grid_z": g.Z[:, 0],
        "campaign": c,
    }
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "trace.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", "x", "z", "y", "best_so_far"])
            for i, (x, z, y, b) in enumerate(zip(c.X[:, 0], c.Z[:, 0], c.responses, out["best"])):
                w.writerow([i + 1, repr(float(x)), int(z), repr(float(y)), repr(float(b))])
        with open(os.path.join(out_dir, "regions.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_obs", "x", "z", "in_region"])
            for k, mask in enumerate(regions):
                n_obs = cfg.init_spec.n_runs + k
                for x, z, m in zip(g.X[:, 0], g.Z[:, 0], mask):
                    w.writerow([n_obs, repr(float(x)), int(z), int(m)])
    return out


def _example2_sweep(k, polish=True):
    """Exhaustive minimum of example 2 on ``k`` grid points per axis.

    Within a level combination the objective is
    ``sum_i a_i x_i + c prod_i cos(x_i / sqrt(i))``, so the 3-D grid is swept
    one ``x_1`` slice at a time from precomputed 1-D factors. Same grid
    points as the generic sweep, at a fraction of the cost.
    """
    fn = BenchmarkFn("example2", DomainSpec(((-100.0, 100.0),) * 3, QualitativeSpace((3, 3, 3))),
                     _example2_batch)
    axis = np.linspace(-100.0, 100.0, k)
    best = (np.inf, None, None)
    for combo in full_factorial(fn.domain.qualitative):
        zv = _EX2_LEVELS[np.array(combo) - 1]
        lin, cs = [], []
        c = 1.0
        for i in range(3):
            zi = zv[2 - i]
            s = math.sqrt(i + 1)
            lin.append(axis * zi / 4000.0)
            cs.append(np.cos(axis / s))
            c *= math.sin(zi / s)
        base23 = lin[1][:, None] + lin[2][None, :]
        cos23 = c * np.outer(cs[1], cs[2])
        for a in range(k):
            vals = lin[0][a] + base23 + cs[0][a] * cos23
            j = int(np.argmin(vals))
            if vals.flat[j] < best[0]:
                b, d = divmod(j, k)
                best = (float(vals.flat[j]), np.array([axis[a], axis[b], axis[d]]), tuple(combo))
    grid_value, x_best, z_best = best
    value, x_final = grid_value, x_best
    if polish:
        zrow = np.array(z_best)[None, :]
        res = minimize(lambda x: float(fn.batch(x[None, :], zrow)[0]), x_best, method="L-BFGS-B",
                       bounds=[(-100.0, 100.0)] * 3)
        if res.fun < value:
            value, x_final = float(res.fun), res.x
    return {"value": value, "x": [float(v) for v in x_final], "z": list(z_best),
            "n_evals": int(k ** 3 * 27), "grid_value": grid_value}
