"""Command-line entry point.

Subcommands: validate, simulate, ode, tropical, predict, experiment,
oracle. Every run prints the resolved configuration (including the seed)
before any output; diagnostics go to stderr as one-line JSON records.
Exit codes: 0 success, 1 usage, 2 invalid model/plan, 3 runtime failure.
Set VC_LOG=debug|info|warning for logging verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .gillespie import PopulationState, RunawayPopulation, monomorphic_state, run
from .harness import PlanError, load_plan, run_experiment
from .model import ModelError, derive_landscape, load_model, validate_valley
from .ode import IntegrationError, integrate
from .oracles import cascade_exponent_bruteforce, mc_excursion_births, mc_ruin
from .theory import TheoryError, classify_regime
from .tropical import CascadeSpec, TropicalError, verify_against_ode

log = logging.getLogger("valleycross")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_MODEL = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; we map usage to 1
        raise UsageError(message)


def _diag(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def _echo_config(args: argparse.Namespace) -> None:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + json.dumps(cfg, sort_keys=True, default=str))


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_validate(args) -> int:
    params = load_model(args.model)
    _echo_config(args)
    report = validate_valley(derive_landscape(params), tol=args.tol)
    print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK if report.valid else EXIT_MODEL


def cmd_simulate(args) -> int:
    params = load_model(args.model)
    _echo_config(args)
    if args.init:
        init = PopulationState(np.array([int(v) for v in args.init.split(",")]))
    else:
        init = monomorphic_state(params)
    watches = []
    for spec in args.watch or []:
        trait, _, level = spec.partition(":")
        lv = int(level) if "." not in level else float(level)
        watches.append((int(trait), lv))
    try:
        traj, stopping = run(
            params, init, args.horizon, watches, seed=args.seed,
            stop_on_watches="all" if args.stop_on_watches else None,
        )
    except RunawayPopulation as exc:
        _diag("runtime", str(exc))
        return EXIT_RUNTIME
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "model": params.digest(), "seed": args.seed,
        "rng": "xoshiro256++/SeedSequence-spawn", "version": __version__,
    }
    traj.to_csv(out / "trajectory.csv", meta=meta)
    doc = {
        "meta": meta,
        "terminal": traj.terminal,
        "events": traj.events,
        "t_end": traj.t_end,
        "final_counts": [int(v) for v in traj.final_counts],
        "stopping_times": stopping.to_dict(),
    }
    (out / "stopping_times.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    print(json.dumps(doc, sort_keys=True))
    return EXIT_OK


def cmd_ode(args) -> int:
    params = load_model(args.model)
    _echo_config(args)
    x0 = None
    if args.x0:
        x0 = np.array(_parse_floats(args.x0))
    else:
        land = derive_landscape(params)
        x0 = np.zeros(params.L + 1)
        x0[0] = land.xbar[0]
    grid = np.linspace(0.0, args.t_end, args.grid)
    path = integrate(params, x0, args.t_end, tol=args.tol, t_eval=grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path.to_csv(out / "ode.csv", rescaled_mu=params.mu if params.mu > 0 else None)
    print(json.dumps({
        "t_end": args.t_end, "n_clamped": path.n_clamped,
        "n_clamped_large": path.n_clamped_large, "nfev": path.nfev,
        "final": [float(v) for v in path.x[-1]],
    }, sort_keys=True))
    return EXIT_OK


def cmd_tropical(args) -> int:
    params = load_model(args.model)
    _echo_config(args)
    mus = _parse_floats(args.mu_list)
    start, stop, npts = (float(v) for v in args.grid.split(":"))
    grid = np.linspace(start, stop, int(npts))
    report = verify_against_ode(params, mus, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "limit_paths.json").write_text(
        json.dumps([p.to_dict(trait=i) for i, p in enumerate(report.paths)], indent=1) + "\n"
    )
    print(json.dumps(report.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_predict(args) -> int:
    params = load_model(args.model)
    _echo_config(args)
    pred = classify_regime(params)
    print(json.dumps(pred.to_dict(), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args) -> int:
    plan = load_plan(args.plan)
    if args.threads:
        plan.threads = args.threads
    if args.seed is not None:
        plan.master_seed = args.seed
    _echo_config(args)
    report = run_experiment(plan)
    formats = ("json", "csv") if args.format == "csv" else ("json",)
    written = report.write(args.out, formats=formats)
    print(json.dumps({
        "out": str(args.out),
        "files": [str(p) for p in written],
        "body_sha256_16": report.body_hash(),
    }, sort_keys=True))
    return EXIT_OK


def cmd_oracle(args) -> int:
    _echo_config(args)
    if args.kind == "excursion":
        births = mc_excursion_births(args.b, args.d, args.n, seed=args.seed)
        ks, counts = np.unique(births, return_counts=True)
        print(json.dumps({
            "n": args.n, "mean": float(births.mean()),
            "pmf": {int(k): int(c) for k, c in zip(ks, counts)},
        }, sort_keys=True))
    elif args.kind == "ruin":
        p = mc_ruin(args.b, args.d, args.i, args.j, args.k, args.n, seed=args.seed)
        print(json.dumps({"n": args.n, "p_hit_hi_first": p}, sort_keys=True))
    else:  # tropmin
        doc = json.loads(Path(args.spec).read_text())
        spec = CascadeSpec(
            zeta=doc["zeta"], f=doc["f"], b=doc["b"], ell=doc["ell"], p=doc["p"]
        )
        vals = cascade_exponent_bruteforce(spec, args.t)
        print(json.dumps({"t": args.t, "exponents": [float(v) for v in vals]}))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="valleycross", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("validate", help="check the fitness-valley conditions")
    p.add_argument("model")
    p.add_argument("--tol", type=float, default=1e-12)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run one exact stochastic trajectory")
    p.add_argument("model")
    p.add_argument("--horizon", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", help="comma-separated initial counts")
    p.add_argument("--watch", action="append", metavar="TRAIT:LEVEL",
                   help="record first time trait hits level (int count or float density)")
    p.add_argument("--stop-on-watches", action="store_true")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ode", help="integrate the deterministic limit")
    p.add_argument("model")
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--x0", help="comma-separated initial densities")
    p.add_argument("--grid", type=int, default=500)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_ode)

    p = sub.add_parser("tropical", help="piecewise-linear limits and ODE convergence")
    p.add_argument("model")
    p.add_argument("--mu-list", required=True, help="comma-separated mu values")
    p.add_argument("--grid", default="0.5:10:96", help="start:stop:points on the rescaled clock")
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_tropical)

    p = sub.add_parser("predict", help="classify the regime and print the constants")
    p.add_argument("model")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("experiment", help="run a sweep experiment from a plan file")
    psub = p.add_subparsers(dest="subcommand", metavar="run")
    prun = psub.add_parser("run")
    prun.add_argument("plan")
    prun.add_argument("--out", default="out")
    prun.add_argument("--threads", type=int, default=0)
    prun.add_argument("--seed", type=int, default=None)
    prun.add_argument("--format", choices=("json", "csv"), default="csv")
    prun.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="brute-force Monte-Carlo/enumeration oracles")
    osub = p.add_subparsers(dest="kind", metavar="kind")
    pe = osub.add_parser("excursion")
    pe.add_argument("--b", type=float, required=True)
    pe.add_argument("--d", type=float, required=True)
    pe.add_argument("--n", type=int, default=100000)
    pe.add_argument("--seed", type=int, default=0)
    pe.set_defaults(func=cmd_oracle, kind="excursion")
    pr = osub.add_parser("ruin")
    pr.add_argument("--b", type=float, required=True)
    pr.add_argument("--d", type=float, required=True)
    pr.add_argument("--i", type=int, required=True)
    pr.add_argument("--j", type=int, required=True)
    pr.add_argument("--k", type=int, required=True)
    pr.add_argument("--n", type=int, default=1000000)
    pr.add_argument("--seed", type=int, default=0)
    pr.set_defaults(func=cmd_oracle, kind="ruin")
    pt = osub.add_parser("tropmin")
    pt.add_argument("--spec", required=True, help="JSON with zeta, f, b, ell, p")
    pt.add_argument("--t", type=float, required=True)
    pt.set_defaults(func=cmd_oracle, kind="tropmin")

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("VC_LOG", "warning").upper(),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            _diag("usage", "a subcommand is required")
            return EXIT_USAGE
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _diag("usage", str(exc))
        return EXIT_USAGE
    except (ModelError, PlanError) as exc:
        _diag("model", str(exc))
        return EXIT_MODEL
    except (TheoryError, TropicalError, IntegrationError, RunawayPopulation, OSError) as exc:
        _diag("runtime", str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
