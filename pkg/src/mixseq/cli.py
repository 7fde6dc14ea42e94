"""Command line entry point.

Every subcommand prints JSON on stdout. Failures print
``{"error": <category>, "message": ...}`` on stderr and exit nonzero.
"""

import argparse
import json
import sys

from . import bench
from .acquisition import AcquisitionConfig
from .campaign import Campaign, CampaignConfig
from .design import InitialDesignSpec
from .exceptions import InvalidArgumentError, MixseqError, PersistenceError
from .kernels import DomainSpec, MixedPoint

EXIT_CODES = {
    "error": 1,
    "invalid-argument": 2,
    "protocol": 3,
    "persistence": 4,
    "fit-failure": 5,
    "numerical-failure": 6,
    "budget": 7,
}


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load_campaign(path):
    try:
        return Campaign.load(path)
    except OSError as exc:
        raise PersistenceError(f"cannot read campaign {path}: {exc}") from exc


def _save_campaign(c, path):
    try:
        c.save(path)
    except OSError as exc:
        raise PersistenceError(f"cannot write campaign {path}: {exc}") from exc


def _point_record(c, point):
    rec = c.to_user(point)
    rec["x_unit"] = [float(v) for v in point.x]
    rec["n_observations"] = c.n_observations
    rec["iteration"] = c.iteration
    return rec


def cmd_init(args):
    try:
        with open(args.domain) as fh:
            dom = DomainSpec.from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InvalidArgumentError(f"bad domain file {args.domain}: {exc}") from exc
    n_init = args.n_init if args.n_init is not None else dom.qualitative.n_combinations
    cfg = CampaignConfig(
        domain=dom,
        acquisition=AcquisitionConfig(args.strategy, args.rho, args.alpha, args.sense),
        init_spec=InitialDesignSpec(n_init, args.plan, rng_seed=args.seed),
        n_sequential=args.n_sequential,
        rng_seed=args.seed,
        n_candidates=args.candidates,
        polish=args.polish,
    )
    c = Campaign(cfg)
    X0, Z0 = c._initial_rows()
    design = [c.to_user(MixedPoint(x, z)) for x, z in zip(X0, Z0)]
    _save_campaign(c, args.out)
    _emit({"campaign": args.out, "initial_design": design})


def cmd_suggest(args):
    c = _load_campaign(args.campaign)
    changes = {}
    if args.strategy is not None:
        changes["strategy"] = args.strategy
    if args.rho is not None:
        changes["rho"] = args.rho
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if changes:
        c.with_acquisition(**changes)
    point = c.ask()
    _save_campaign(c, args.campaign)
    _emit(_point_record(c, point))


def cmd_tell(args):
    c = _load_campaign(args.campaign)
    c.tell(args.y)
    _save_campaign(c, args.campaign)
    _emit({"n_observations": c.n_observations, "best_value": c.best_value,
           "best_point": c.to_user(c.best_point)})


def _parse_budget(text):
    try:
        a, b = text.split("+")
        return int(a), int(b)
    except ValueError:
        raise InvalidArgumentError(f"budget must look like 'I+S', got {text!r}") from None


def cmd_run_bench(args):
    budget = _parse_budget(args.budget) if args.budget else None
    kwargs = dict(n_reps=args.reps, budget=budget, seed=args.seed, rho=args.rho, alpha=args.alpha,
                  polish=not args.no_polish, n_jobs=args.jobs)
    if args.preset == "rho-sweep":
        result = bench.rho_sensitivity(args.function, **kwargs)
    else:
        strategies = [s.strip() for s in args.strategies.split(";" if ":" in args.strategies else ",")
                      if s.strip()]
        result = bench.replicate_study(args.function, strategies, **kwargs)
    try:
        files = bench.report(result, args.out, args.format)
    except OSError as exc:
        raise PersistenceError(f"cannot write to {args.out}: {exc}") from exc
    _emit({"fingerprint": result.fingerprint, "files": files, "summary": result.summary()})


def cmd_oracle(args):
    fn = bench.get_benchmark(args.function)
    res = bench.brute_force_min(fn, args.density, max_evals=args.max_evals, polish=not args.no_polish)
    res["function"] = fn.name
    if fn.known_min is not None:
        res["known_min"] = fn.known_min.value
    _emit(res)


def cmd_report(args):
    try:
        files = bench.report_from_dir(args.in_dir, args.format)
    except OSError as exc:
        raise PersistenceError(f"cannot read study in {args.in_dir}: {exc}") from exc
    _emit({"files": files})


def build_parser():
    ap = argparse.ArgumentParser(prog="mixseq", description="Sequential design for mixed inputs.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a campaign and list its initial design")
    p.add_argument("--domain", required=True, help="JSON domain file")
    p.add_argument("--n-init", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", default="ADAPTIVE_CEE")
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sense", default="MIN", choices=["MIN", "MAX"])
    p.add_argument("--plan", default=None, choices=["FULL_FACTORIAL", "FRACTIONAL_3LEVEL", "RANDOM"])
    p.add_argument("--n-sequential", type=int, default=None)
    p.add_argument("--candidates", type=int, default=200)
    p.add_argument("--polish", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("suggest", help="propose the next point")
    p.add_argument("--campaign", required=True)
    p.add_argument("--strategy", default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(func=cmd_suggest)

    p = sub.add_parser("tell", help="record the response to the pending point")
    p.add_argument("--campaign", required=True)
    p.add_argument("--y", type=float, required=True)
    p.set_defaults(func=cmd_tell)

    p = sub.add_parser("run-bench", help="replicated benchmark study")
    p.add_argument("--function", required=True, choices=sorted(bench.BENCHMARKS))
    p.add_argument("--strategies", default="ADAPTIVE_CEE,EI,MU,SI,RA")
    p.add_argument("--preset", default=None, choices=["rho-sweep"])
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--budget", default=None, help="initial+sequential, e.g. 3+6")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=2.0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--no-polish", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run_bench)

    p = sub.add_parser("oracle", help="brute-force grid minimum")
    p.add_argument("--function", required=True, choices=sorted(bench.BENCHMARKS))
    p.add_argument("--density", type=float, required=True, help="grid step on the unit scale")
    p.add_argument("--max-evals", type=float, default=bench.MAX_ORACLE_EVALS)
    p.add_argument("--no-polish", action="store_true")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("report", help="summary and quantile tables from a study directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--format", default="csv", choices=["csv", "json"])
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except MixseqError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
