"""Command-line entry point.

Exit codes: 0 all criteria pass, 1 a criterion failed, 2 usage or config
error, 3 numerical divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import chaos, experiments, stats
from .dynamics import Ensemble, MapSpec, evolve_ensemble, iterate
from .errors import ChaoticGDError, ConfigError, DivergenceError
from .objective import catalog_macro, make_objective

log = logging.getLogger("chaotic_gd")

OUT_ENV = "CHAOTIC_GD_OUT"
DEFAULT_OUT = "chaotic_gd_out"
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

# subcommand -> experiment id
EXPERIMENT_COMMANDS = {
    "bifurcation": "bifurcation",
    "residuals": "residual-orders",
    "escape": "escape-dichotomy",
    "momentum": "momentum",
    "matyas": "matyas-2d",
}

# flag dest -> config key
OVERRIDE_FLAGS = {"eta": "eta", "epsilon": "epsilon", "macro": "macro", "micro": "micro",
                  "seed": "seed", "workers": "workers"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _common(p, experiment=False):
    p.add_argument("--out", metavar="DIR",
                   help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p.add_argument("--seed", type=int, help="master seed (default: 42)")
    p.add_argument("--workers", type=int, help="worker threads; results do not depend on it")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    if experiment:
        p.add_argument("--config", metavar="FILE", help="experiment config file (INI)")
        p.add_argument("--quick", action="store_true", help="use the reduced quick profile")


def _objective_flags(p, eta=True):
    p.add_argument("--macro", default="quartic",
                   help="macro landscape id, e.g. quadratic, quartic, matyas, double-well:k=5")
    p.add_argument("--micro", default="sin",
                   help="micro-scale id: sin, cos-neg, quasi, sincos2d, modulated or none")
    p.add_argument("--epsilon", type=float, default=1e-6, help="micro-scale epsilon")
    if eta:
        p.add_argument("--eta", type=float, default=0.1, help="learning rate")


def build_parser():
    parser = _Parser(prog="chaotic-gd",
                     description="Gradient descent on multiscale objectives: "
                                 "orbits, chaos diagnostics and invariant laws.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("orbit", help="iterate one trajectory and dump it")
    _objective_flags(p)
    p.add_argument("--map", default="gd", choices=["gd", "stochastic-gd", "heavy-ball", "nag-sc"],
                   help="map kind")
    p.add_argument("--gamma", type=float, default=0.9, help="heavy-ball momentum")
    p.add_argument("--mu-hint", type=float, default=1.0, help="NAG-SC strong convexity hint")
    p.add_argument("--x0", type=float, nargs="+", default=[0.7], help="initial state")
    p.add_argument("--n", type=int, default=10_000, help="recorded steps")
    p.add_argument("--burn-in", type=int, default=0, help="discarded steps")
    p.add_argument("--thin", type=int, default=1, help="record every THIN-th state")
    p.add_argument("--format", choices=["csv", "binary"], default="csv", help="dump format")
    _common(p)

    p = sub.add_parser("ensemble", help="evolve a uniform ensemble and dump it")
    _objective_flags(p)
    p.add_argument("--members", type=int, default=10_000, help="ensemble size")
    p.add_argument("--steps", type=int, default=1_000, help="steps per member")
    p.add_argument("--low", type=float, default=-2.0, help="lower end of the initial box")
    p.add_argument("--high", type=float, default=2.0, help="upper end of the initial box")
    p.add_argument("--bins", type=int, default=100, help="histogram bins")
    _common(p)

    p = sub.add_parser("lyapunov", help="Lyapunov exponent of one orbit")
    _objective_flags(p)
    p.add_argument("--x0", type=float, nargs="+", default=[0.7], help="initial state")
    p.add_argument("--n", type=int, default=10_000_000, help="averaging steps")
    p.add_argument("--burn-in", type=int, default=10_000, help="discarded steps")
    _common(p)

    p = sub.add_parser("gibbs", help="tabulate the rescaled Gibbs density")
    p.add_argument("--macro", default="quartic", help="macro landscape id")
    p.add_argument("--eta", type=float, default=0.1, help="learning rate")
    p.add_argument("--sigma2", type=float, default=0.5, help="noise variance")
    p.add_argument("--samples", type=int, default=0, help="also draw this many samples")
    _common(p)

    for name, exp in EXPERIMENT_COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {exp} experiment")
        p.add_argument("--eta", type=float, help="learning rate override")
        p.add_argument("--epsilon", type=float, help="micro-scale epsilon override")
        p.add_argument("--macro", help="macro landscape override")
        p.add_argument("--micro", help="micro-scale override")
        _common(p, experiment=True)

    p = sub.add_parser("suite", help="run every experiment (or a subset)")
    p.add_argument("--only", metavar="IDS",
                   help="comma-separated experiment ids: " + ", ".join(experiments.EXPERIMENT_IDS))
    _common(p, experiment=True)
    return parser


def _out_dir(args):
    out = args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    os.makedirs(out, exist_ok=True)
    return out


def _objective(args):
    micro = None if args.micro in (None, "none") else args.micro
    return make_objective(args.macro, micro, args.epsilon if micro else None)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(experiments._jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _cmd_orbit(args):
    obj = _objective(args)
    kw = {}
    if args.map == "heavy-ball":
        kw["gamma"] = args.gamma
    if args.map == "nag-sc":
        kw["mu_hint"] = args.mu_hint
    spec = MapSpec(args.map, obj, args.eta, **kw)
    orb = iterate(spec, args.x0, args.n, args.burn_in, args.thin, args.seed or 0)
    out = _out_dir(args)
    path = os.path.join(out, "orbit.csv" if args.format == "csv" else "orbit.bin")
    (orb.to_csv if args.format == "csv" else orb.to_binary)(path)
    _write_json(os.path.join(out, "orbit.json"),
                {"map": spec.describe(), "states": len(orb), "burn_in": args.burn_in,
                 "thin": args.thin, "seed": orb.seed, "mean": orb.states.mean(axis=0),
                 "variance": orb.states.var(axis=0)})
    return EXIT_OK


def _cmd_ensemble(args):
    obj = _objective(args)
    spec = MapSpec("gd", obj, args.eta)
    seed = 42 if args.seed is None else args.seed
    init = Ensemble.uniform(args.members, args.low, args.high, obj.dim, seed)
    ens = evolve_ensemble(spec, init, args.steps, workers=args.workers or 1)
    out = _out_dir(args)
    ens.to_csv(os.path.join(out, "ensemble.csv"))
    summary = {"map": spec.describe(), "members": len(ens), "steps": args.steps, "seed": seed,
               "mean": ens.members.mean(axis=0), "variance": ens.members.var(axis=0)}
    if obj.dim <= 2:
        lim = float(np.max(np.abs(ens.members)))
        stats.make_histogram(ens.members, args.bins, (-lim, lim)).to_csv(
            os.path.join(out, "ensemble_hist.csv"))
    if obj.dim == 1 and obj.micro is not None and obj.micro.noise is not None:
        g = stats.gibbs_density(obj.macro, args.eta, obj.micro.noise.sigma2)
        summary["ks_vs_gibbs"] = stats.ks_distance(ens.x, g)
    _write_json(os.path.join(out, "ensemble.json"), summary)
    return EXIT_OK


def _cmd_lyapunov(args):
    obj = _objective(args)
    est = chaos.lyapunov(obj, args.eta, args.x0, args.n, args.burn_in)
    out = _out_dir(args)
    _write_json(os.path.join(out, "lyapunov.json"), est.to_dict())
    print(json.dumps(experiments._jsonable(est.to_dict()), sort_keys=True))
    return EXIT_OK


def _cmd_gibbs(args):
    f0 = catalog_macro(args.macro)
    g = stats.gibbs_density(f0, args.eta, args.sigma2)
    out = _out_dir(args)
    g.to_csv(os.path.join(out, "gibbs_density.csv"))
    summary = {"macro": f0.name, "eta": args.eta, "sigma2": args.sigma2, "Z": g.Z,
               "f_ref": g.f_ref, "radius": g.radius, "nodes_per_axis": g.grid[0].size,
               "edge_ratio": g.edge_ratio, "quadrature": g.quadrature()}
    if args.samples:
        seed = 42 if args.seed is None else args.seed
        s = g.sample(args.samples, seed)
        np.savetxt(os.path.join(out, "gibbs_samples.csv"), s.reshape(len(s), -1),
                   delimiter=",", header=",".join(f"x{i + 1}" for i in range(f0.dim)),
                   comments="")
        if f0.dim == 1:
            summary["ks_samples"] = stats.ks_distance(s, g)
    _write_json(os.path.join(out, "gibbs.json"), summary)
    return EXIT_OK


def _load_config(args, experiment):
    if args.config:
        cfg = experiments.ExperimentConfig.load(args.config)
        if experiment is not None and cfg.experiment != experiment:
            raise ConfigError(f"config is for {cfg.experiment!r}, not {experiment!r}")
        if args.quick and cfg.profile != "quick":
            raise ConfigError("--quick conflicts with the profile in the config file")
    else:
        cfg = experiments.default_config(experiment, "quick" if args.quick else "full")
    over = {}
    for flag, key in OVERRIDE_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if key not in cfg.params:
            raise ConfigError(f"--{flag} does not apply to experiment {cfg.experiment}")
        if args.config and cfg.params[key] != value:
            log.info("flag --%s=%s overrides config value %s", flag, value, cfg.params[key])
        over[key] = value
    return cfg.with_overrides(**over)


def _run_experiment(cfg, out):
    exp_dir = os.path.join(out, cfg.experiment)
    verdict = experiments.run(cfg, exp_dir)
    experiments.write_verdict(verdict, out)
    for line in verdict.lines():
        print(line)
    for err in verdict.errors:
        print(f"ERROR {cfg.experiment}: {err}", file=sys.stderr)
    return verdict


def _exit_code(verdicts):
    if any(v.diverged for v in verdicts):
        return EXIT_DIVERGED
    return EXIT_OK if all(v.passed for v in verdicts) else EXIT_FAIL


def _cmd_experiment(args):
    cfg = _load_config(args, EXPERIMENT_COMMANDS[args.command])
    return _exit_code([_run_experiment(cfg, _out_dir(args))])


def _cmd_suite(args):
    if args.config and args.only:
        raise ConfigError("--config and --only are mutually exclusive")
    if args.config:
        cfgs = [_load_config(args, None)]
    else:
        ids = experiments.EXPERIMENT_IDS if not args.only else \
            tuple(s.strip() for s in args.only.split(",") if s.strip())
        for i in ids:
            if i not in experiments.RUNNERS:
                raise ConfigError(f"unknown experiment {i!r}")
        cfgs = [_load_config(args, i) for i in ids]
    out = _out_dir(args)
    return _exit_code([_run_experiment(c, out) for c in cfgs])


COMMANDS = {"orbit": _cmd_orbit, "ensemble": _cmd_ensemble, "lyapunov": _cmd_lyapunov,
            "gibbs": _cmd_gibbs, "suite": _cmd_suite,
            **{k: _cmd_experiment for k in EXPERIMENT_COMMANDS}}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # --help exits through argparse
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"chaotic-gd: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ChaoticGDError, ValueError, KeyError) as exc:
        print(f"chaotic-gd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry():
    sys.exit(main())
