"""Config-driven experiments that emit JSON verdicts and CSV figure data.

A configuration is a flat INI document with a single ``[chaotic-gd]``
section::

    [chaotic-gd]
    version = 1
    experiment = ergodicity-1d
    profile = full
    seed = 42
    eta = 0.1
    tol.ks_ensemble_gibbs = 0.05

Keys other than ``version``, ``experiment`` and ``profile`` must belong to
the experiment's schema (see ``SCHEMAS``); ``tol.<criterion>`` overrides the
threshold of a named criterion.  Unknown keys are rejected.
"""
from __future__ import annotations

import configparser
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import chaos, stats
from .dynamics import Ensemble, MapSpec, evolve_ensemble, iterate, write_csv
from .errors import ConfigError, DivergenceError, DomainError
from .objective import (K_CRITICAL, MATYAS_HESSIAN, catalog_macro, catalog_micro,
                        make_objective, m_constant)
from .rng import check_seed, stream

CONFIG_VERSION = 1
SECTION = "chaotic-gd"

# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

_F, _I, _S, _L, _B = "float", "int", "str", "floats", "bool"


def _key(kind, full, quick=None):
    return (kind, full, full if quick is None else quick)


COMMON = {
    "seed": _key(_I, 42),
    "workers": _key(_I, 1),
}

SCHEMAS = {
    "ergodicity-1d": {
        "macro": _key(_S, "quartic"), "micro": _key(_S, "sin"),
        "epsilon": _key(_F, 1e-6), "eta": _key(_F, 0.1),
        "ensemble_n": _key(_I, 100_000, 5_000), "ensemble_steps": _key(_I, 10_000, 1_000),
        "orbit_n": _key(_I, 10_000_000, 200_000), "burn_in": _key(_I, 10_000, 1_000),
        "thin": _key(_I, 100, 20), "x0": _key(_F, 0.7), "low": _key(_F, -2.0),
        "high": _key(_F, 2.0), "bins": _key(_I, 200), "trace_n": _key(_I, 10_000, 1_000),
    },
    "aperiodic": {
        "macro": _key(_S, "quadratic"), "eta": _key(_F, 0.1),
        "quasi_epsilon": _key(_F, 1e-6), "modulated_epsilon": _key(_F, 1e-4),
        "ensemble_n": _key(_I, 100_000, 5_000), "ensemble_steps": _key(_I, 10_000, 1_000),
        "orbit_n": _key(_I, 10_000_000, 200_000), "burn_in": _key(_I, 10_000, 1_000),
        "thin": _key(_I, 100, 20), "x0": _key(_F, 0.7), "low": _key(_F, -2.0),
        "high": _key(_F, 2.0), "bins": _key(_I, 200), "trace_n": _key(_I, 10_000, 1_000),
    },
    "matyas-2d": {
        "micro": _key(_S, "sincos2d"), "epsilon": _key(_F, 1e-7), "eta": _key(_F, 0.01),
        "ensemble_n": _key(_I, 10_000, 1_000), "ensemble_steps": _key(_I, 20_000, 2_000),
        "slices": _key(_I, 64), "low": _key(_F, -2.0), "high": _key(_F, 2.0),
        "gibbs_etas": _key(_L, (0.1, 0.01, 0.001)), "gibbs_n": _key(_I, 2_000, 500),
        "gibbs_mixing": _key(_F, 5.0, 2.0), "orbit_n": _key(_I, 1_000_000, 50_000),
        "thin": _key(_I, 100, 10), "bins": _key(_I, 80),
    },
    "lyapunov-sweep": {
        "k": _key(_F, 1.0), "epsilon": _key(_F, 1e-6),
        "etas": _key(_L, tuple(float(v) for v in np.logspace(-3, -1, 5))),
        "orbit_n": _key(_I, 10_000_000, 100_000), "burn_in": _key(_I, 10_000, 1_000),
        "x0": _key(_F, 0.7), "epsilon_2d": _key(_F, 1e-5), "eta_2d": _key(_F, 0.1),
        "x0_2d": _key(_L, (0.3, 0.2)), "epsilon_sweep": _key(_L, (1e-4, 1e-5, 1e-6, 1e-7)),
        "epsilon_sweep_eta": _key(_F, 0.01),
    },
    "bifurcation": {
        "macro": _key(_S, "quartic"), "micro": _key(_S, "cos-neg"),
        "epsilon": _key(_F, 1e-3), "ratio_start": _key(_F, 0.1),
        "ratio_step": _key(_F, 0.04), "ratio_count": _key(_I, 100),
        "x0_ratio": _key(_F, 0.3), "burn_in": _key(_I, 100_000, 20_000),
        "record": _key(_I, 1024),
    },
    "momentum": {
        "macro": _key(_S, "quadratic"), "micro": _key(_S, "sin"),
        "epsilon": _key(_F, 1e-4), "eta": _key(_F, 0.01), "gamma": _key(_F, 0.9),
        "mu_hint": _key(_F, 1.0), "orbit_n": _key(_I, 10_000_000, 100_000),
        "thin": _key(_I, 1_000, 10), "burn_in": _key(_I, 10_000, 1_000),
        "floor_steps": _key(_I, 20_000, 2_000), "x0": _key(_F, 1.0),
        "low": _key(_F, -2.0), "high": _key(_F, 2.0), "bins": _key(_I, 100),
    },
    "escape-dichotomy": {
        "k_escape": _key(_F, 0.02), "k_trap": _key(_F, 5.0), "eta": _key(_F, 0.05),
        "epsilon": _key(_F, 1e-4), "orbit_n": _key(_I, 10_000_000, 100_000),
        "x0": _key(_F, 1.0), "gauss_k": _key(_F, 5.0),
        "gauss_etas": _key(_L, (0.05, 0.02, 0.01, 0.001)),
        "gauss_epsilon": _key(_F, 1e-6), "gauss_members": _key(_I, 20_000, 2_000),
        "gauss_min_steps": _key(_I, 2_000, 500), "gauss_step_factor": _key(_F, 20.0, 5.0),
        "gauss_low": _key(_F, 0.5), "gauss_high": _key(_F, 1.5),
        "brute_grid": _key(_I, 1_000_000, 100_000),
    },
    "residual-orders": {
        "etas": _key(_L, (0.2, 0.1, 0.05, 0.025)), "n_mc": _key(_I, 100_000_000, 1_000_000),
        "bump_widths": _key(_F, 6.0), "gibbs_resolution": _key(_I, 65_537),
        "moment_n": _key(_I, 1_000_000, 100_000), "coupling_eta": _key(_F, 0.1),
        "coupling_n": _key(_I, 100), "coupling_pairs": _key(_I, 16, 4),
        "modeq_epsilon": _key(_F, 1e-3), "modeq_ratio": _key(_F, 10.0),
        "modeq_points": _key(_I, 10_000), "modeq_low": _key(_F, -1.0),
        "modeq_high": _key(_F, 1.0),
    },
}

PROFILES = ("full", "quick")


def _parse(kind, text, key):
    try:
        if kind == _F:
            return float(text)
        if kind == _I:
            v = float(text)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == _L:
            return tuple(float(t) for t in text.split(",") if t.strip())
        if kind == _B:
            low = text.strip().lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        return text.strip()
    except ValueError:
        raise ConfigError(f"invalid value {text!r} for {key} ({kind})") from None


def _format(kind, value):
    if kind == _F:
        return repr(float(value))
    if kind == _L:
        return ", ".join(repr(float(v)) for v in value)
    if kind == _B:
        return "true" if value else "false"
    return str(value)


@dataclass
class ExperimentConfig:
    """Experiment id, profile, parameter values and tolerance overrides."""

    experiment: str
    profile: str = "full"
    params: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.experiment not in SCHEMAS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; "
                              f"expected one of {sorted(SCHEMAS)}")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        schema = self.schema
        col = 1 if self.profile == "full" else 2
        merged = {k: v[col] for k, v in schema.items()}
        for key, value in self.params.items():
            if key not in schema:
                raise ConfigError(f"unknown key {key!r} for experiment {self.experiment}")
            kind = schema[key][0]
            merged[key] = _parse(kind, value, key) if isinstance(value, str) and kind != _S \
                else _coerce(kind, value, key)
        self.params = merged
        names = {c.name for c in CRITERIA[self.experiment]}
        for name, value in self.tolerances.items():
            if name not in names:
                raise ConfigError(f"unknown criterion {name!r} for {self.experiment}")
            self.tolerances[name] = float(value)
        try:
            check_seed(self.params["seed"])
        except DomainError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def schema(self):
        return {**COMMON, **SCHEMAS[self.experiment]}

    def __getitem__(self, key):
        return self.params[key]

    def with_overrides(self, **kw):
        params = dict(self.params)
        params.update({k: v for k, v in kw.items() if v is not None})
        return ExperimentConfig(self.experiment, self.profile, params, dict(self.tolerances))

    def to_text(self):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        body = {"version": str(CONFIG_VERSION), "experiment": self.experiment,
                "profile": self.profile}
        schema = self.schema
        for key in sorted(schema):
            body[key] = _format(schema[key][0], self.params[key])
        for name in sorted(self.tolerances):
            body[f"tol.{name}"] = repr(self.tolerances[name])
        cp[SECTION] = body
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        if cp.sections() != [SECTION]:
            raise ConfigError(f"config needs exactly one [{SECTION}] section")
        body = dict(cp[SECTION])
        version = body.pop("version", None)
        if version is None or version.strip() != str(CONFIG_VERSION):
            raise ConfigError(f"unsupported config version {version!r}")
        exp = body.pop("experiment", None)
        if exp is None:
            raise ConfigError("config lacks an experiment id")
        profile = body.pop("profile", "full")
        tols = {k[4:]: v for k, v in body.items() if k.startswith("tol.")}
        params = {k: v for k, v in body.items() if not k.startswith("tol.")}
        try:
            tols = {k: float(v) for k, v in tols.items()}
        except ValueError:
            raise ConfigError("tolerance overrides must be numbers") from None
        return cls(exp.strip(), profile.strip(), params, tols)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())


def _coerce(kind, value, key):
    try:
        if kind == _F:
            return float(value)
        if kind == _I:
            if float(value) != int(value):
                raise ValueError
            return int(value)
        if kind == _L:
            return tuple(float(v) for v in np.atleast_1d(value))
        if kind == _B:
            return bool(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for {key}") from None


# ---------------------------------------------------------------------------
# criteria and verdicts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Criterion:
    """A pass rule over one metric.

    ``op`` is one of ``"<="``, ``">="``, ``"within"`` (``|metric - target|
    <= threshold``), ``"between"`` (``target <= metric <= threshold``) or
    ``"true"``.
    """

    name: str
    metric: str
    op: str
    threshold: float = 0.0
    target: float = 0.0

    def check(self, metrics, threshold=None):
        thr = self.threshold if threshold is None else threshold
        v = metrics.get(self.metric)
        if v is None or (isinstance(v, float) and not math.isfinite(v)):
            return False
        if self.op == "true":
            return v is True
        if self.op == "<=":
            return v <= thr
        if self.op == ">=":
            return v >= thr
        if self.op == "within":
            return abs(v - self.target) <= thr
        if self.op == "between":
            return self.target <= v <= thr
        raise ValueError(f"unknown op {self.op}")

    def describe(self, threshold=None):
        thr = self.threshold if threshold is None else threshold
        if self.op == "true":
            return f"{self.metric} is true"
        if self.op == "within":
            return f"|{self.metric} - ({self.target:g})| <= {thr:g}"
        if self.op == "between":
            return f"{self.target:g} <= {self.metric} <= {thr:g}"
        return f"{self.metric} {self.op} {thr:g}"


CRITERIA = {
    "ergodicity-1d": (
        Criterion("ks_ensemble_gibbs", "ks_ensemble_gibbs", "<=", 0.05),
        Criterion("orbit_vs_ensemble", "orbit_vs_ensemble_floor_ratio", "<=", 3.0),
        Criterion("orbit_halves", "orbit_halves_floor_ratio", "<=", 3.0),
    ),
    "aperiodic": (
        Criterion("quasi_ks_ensemble_gibbs", "quasi_ks_ensemble_gibbs", "<=", 0.05),
        Criterion("quasi_orbit_vs_ensemble", "quasi_orbit_vs_ensemble_floor_ratio", "<=", 3.0),
        Criterion("modulated_orbit_vs_ensemble", "modulated_orbit_vs_ensemble_floor_ratio",
                  "<=", 3.0),
    ),
    "matyas-2d": (
        Criterion("phi_vs_phihat", "phi_vs_phihat_floor_ratio", "<=", 2.0),
        Criterion("singleton_consistent", "singleton_consistent", "true"),
    ),
    "lyapunov-sweep": (
        Criterion("periodic_m", "periodic_mean_residual", "within", 0.1, -0.6931),
        Criterion("quasi_m", "quasi_mean_residual", "within", 0.1, -0.0117),
        Criterion("sincos2d_m", "sincos2d_residual", "within", 0.1, -0.2669),
    ),
    "bifurcation": (
        Criterion("first_aperiodic", "first_aperiodic_ratio", "between", 4.0, 3.0),
        Criterion("period2_window", "period2_window_contains_2.5", "true"),
    ),
    "momentum": (
        Criterion("heavy_ball_variance", "heavy_ball_variance_over_eps2", ">=", 100.0),
        Criterion("heavy_ball_halves", "heavy_ball_halves_floor_ratio", "<=", 3.0),
        Criterion("nag_sc_variance", "nag_sc_variance_over_eps2", ">=", 100.0),
        Criterion("nag_sc_halves", "nag_sc_halves_floor_ratio", "<=", 3.0),
        Criterion("gamma0_is_gd", "gamma0_matches_gd", "true"),
    ),
    "escape-dichotomy": (
        Criterion("low_k_escapes", "low_k_escaped", "true"),
        Criterion("high_k_trapped", "high_k_trapped", "true"),
        Criterion("connectivity_flip", "connectivity_flips_at_k_critical", "true"),
        Criterion("gaussian_monotone", "gaussian_ks_monotone", "true"),
        Criterion("gaussian_smallest_eta", "gaussian_ks_smallest_eta", "<=", 0.05),
    ),
    "residual-orders": (
        Criterion("residual_slope", "residual_slope", "within", 0.3, 3.0),
        Criterion("quadratic_moment_slope", "quadratic_moment_slope", "within", 0.05, 1.0),
        Criterion("quartic_moment_slope", "quartic_moment_slope", "within", 0.1, 1.25),
        Criterion("coupling_quadratic", "coupling_rate_quadratic", "within", 1e-9, 0.9),
        Criterion("coupling_matyas", "coupling_matyas_excess", "<=", 0.01),
        Criterion("modified_eq_growth", "modified_eq_fraction_ratio_ge_1", ">=", 0.9),
    ),
}


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    return v if v is None or isinstance(v, str) else str(v)


@dataclass
class Verdict:
    """Metrics and per-criterion pass flags of one experiment run.

    Pass flags are never stored independently: :attr:`flags` recomputes them
    from ``metrics`` and the criterion table on every access.  Wall-clock
    runtime lives in ``runtime`` and is written to a separate timings file so
    verdict files stay bit-identical across runs.
    """

    experiment: str
    metrics: dict
    seed: int
    parameters: dict
    tolerances: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    runtime: float = 0.0

    @property
    def criteria(self):
        return CRITERIA[self.experiment]

    @property
    def flags(self):
        return {c.name: c.check(self.metrics, self.tolerances.get(c.name))
                for c in self.criteria}

    @property
    def passed(self):
        return all(self.flags.values()) and not self.errors

    @property
    def diverged(self):
        return any(e.startswith("divergence") for e in self.errors)

    def to_dict(self):
        flags = self.flags
        return _jsonable({
            "schema_version": 1,
            "experiment": self.experiment,
            "seed": self.seed,
            "parameters": self.parameters,
            "metrics": self.metrics,
            "criteria": [{"name": c.name, "rule": c.describe(self.tolerances.get(c.name)),
                          "passed": flags[c.name]} for c in self.criteria],
            "errors": self.errors,
            "passed": self.passed,
        })

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def lines(self):
        """One human-readable pass/fail line per criterion."""
        flags = self.flags
        out = []
        for c in self.criteria:
            v = self.metrics.get(c.metric)
            shown = f"{v:.6g}" if isinstance(v, float) else str(v)
            out.append(f"{'PASS' if flags[c.name] else 'FAIL'} {self.experiment}/{c.name}: "
                       f"{c.metric} = {shown} ({c.describe(self.tolerances.get(c.name))})")
        return out


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _slope(x, y):
    return float(np.polyfit(np.log(np.asarray(x)), np.log(np.abs(np.asarray(y))), 1)[0])


def _halves_floor(samples):
    """W1 between the two halves of a sample set (self-distance noise floor)."""
    h = samples.shape[0] // 2
    return stats.w1_distance_1d(samples[:h], samples[h:2 * h])


def _out(out_dir, name):
    return None if out_dir is None else os.path.join(out_dir, name)


def _write_hist(out_dir, name, samples, bins, lo, hi):
    if out_dir is not None:
        stats.make_histogram(samples, bins, (lo, hi)).to_csv(_out(out_dir, name))


def _write_rows(path, header, rows):
    if path is None:
        return
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def _ergodic_block(prefix, obj, cfg, seed, out_dir, noise_sigma2):
    """Ensemble vs Gibbs, orbit vs ensemble and orbit-halves checks."""
    spec = MapSpec("gd", obj, cfg["eta"])
    init = Ensemble.uniform(cfg["ensemble_n"], cfg["low"], cfg["high"], 1, seed)
    ens = evolve_ensemble(spec, init, cfg["ensemble_steps"], workers=cfg["workers"]).x
    orb = iterate(spec, cfg["x0"], cfg["orbit_n"], cfg["burn_in"], cfg["thin"], seed).x
    floor = _halves_floor(ens)
    m = {}
    if noise_sigma2 is not None:
        g = stats.gibbs_density(obj.macro, cfg["eta"], noise_sigma2)
        m[f"{prefix}ks_ensemble_gibbs"] = stats.ks_distance(ens, g)
        m[f"{prefix}ks_orbit_gibbs"] = stats.ks_distance(orb, g)
        if out_dir is not None:
            g.to_csv(_out(out_dir, f"{prefix}gibbs_density.csv"))
    w_oe = stats.w1_distance_1d(orb, ens)
    h = orb.size // 2
    w_halves = stats.w1_distance_1d(orb[:h], orb[h:2 * h])
    m.update({
        f"{prefix}self_distance_floor": floor,
        f"{prefix}orbit_vs_ensemble_w1": w_oe,
        f"{prefix}orbit_vs_ensemble_floor_ratio": w_oe / floor,
        f"{prefix}orbit_halves_w1": w_halves,
        f"{prefix}orbit_halves_floor_ratio": w_halves / floor,
        f"{prefix}ensemble_variance": float(np.var(ens)),
        f"{prefix}orbit_variance": float(np.var(orb)),
        f"{prefix}orbit_samples": int(orb.size),
    })
    lo, hi = float(np.min(ens)), float(np.max(ens))
    _write_hist(out_dir, f"{prefix}ensemble_hist.csv", ens, cfg["bins"], lo, hi)
    _write_hist(out_dir, f"{prefix}orbit_hist.csv", orb, cfg["bins"], lo, hi)
    if out_dir is not None:
        trace = iterate(spec, cfg["x0"], cfg["trace_n"], 0, 1, seed)
        trace.to_csv(_out(out_dir, f"{prefix}orbit_trace.csv"))
    return m


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def run_ergodicity_1d(cfg, out_dir=None):
    """Ensemble and orbit statistics of GD versus the rescaled Gibbs law."""
    obj = make_objective(cfg["macro"], cfg["micro"], cfg["epsilon"])
    return _ergodic_block("", obj, cfg, cfg["seed"], out_dir, obj.micro.noise.sigma2)


def run_aperiodic(cfg, out_dir=None):
    """The ergodicity checks for a quasiperiodic and a modulated micro-scale."""
    m = {}
    quasi = make_objective(cfg["macro"], "quasi", cfg["quasi_epsilon"])
    m.update(_ergodic_block("quasi_", quasi, cfg, cfg["seed"], out_dir,
                            quasi.micro.noise.sigma2))
    mod = make_objective(cfg["macro"], "modulated", cfg["modulated_epsilon"])
    m.update(_ergodic_block("modulated_", mod, cfg, cfg["seed"], out_dir, None))
    return m


def run_matyas_2d(cfg, out_dir=None):
    """Deterministic versus stochastic map on the Matyas landscape."""
    seed, eta = cfg["seed"], cfg["eta"]
    obj = make_objective("matyas", cfg["micro"], cfg["epsilon"])
    gd = MapSpec("gd", obj, eta)
    sgd = MapSpec("stochastic-gd", obj, eta)
    n, steps, w = cfg["ensemble_n"], cfg["ensemble_steps"], cfg["workers"]
    init = Ensemble.uniform(n, cfg["low"], cfg["high"], 2, seed)
    phi = evolve_ensemble(gd, init, steps, workers=w).members
    hat_a = evolve_ensemble(sgd, init, steps, seed=seed + 1, workers=w).members
    hat_b = evolve_ensemble(sgd, init, steps, seed=seed + 2, workers=w).members
    sw = stats.sliced_w1(phi, hat_a, cfg["slices"], stream(seed, 11))
    floor = stats.sliced_w1(hat_b, hat_a, cfg["slices"], stream(seed, 11))
    m = {"phi_vs_phihat_sliced_w1": sw, "self_distance_floor": floor,
         "phi_vs_phihat_floor_ratio": sw / floor,
         "phi_covariance": np.cov(phi.T).ravel().tolist(),
         "phihat_covariance": np.cov(hat_a.T).ravel().tolist(),
         "gaussian_covariance": (eta * 0.5 * 0.5 * np.linalg.inv(MATYAS_HESSIAN)).ravel().tolist()}
    single = evolve_ensemble(gd, Ensemble(init.members[:1], 0, seed), 500).members[0]
    m["singleton_consistent"] = bool(np.array_equal(
        single, iterate(gd, init.members[0], 500, seed=seed).states[-1]))
    # rescaled comparison with the Gibbs law at several learning rates
    mu = catalog_macro("matyas").strong_convexity
    rows = []
    for e in cfg["gibbs_etas"]:
        spec = MapSpec("gd", obj, e)
        k = int(math.ceil(cfg["gibbs_mixing"] / (e * mu)))
        ens = evolve_ensemble(spec, Ensemble.uniform(cfg["gibbs_n"], -1.0, 1.0, 2, seed), k,
                              workers=w).members
        g = stats.gibbs_density(obj.macro, e, obj.micro.noise.sigma2)
        gs = g.sample(cfg["gibbs_n"], stream(seed, 12))
        d = stats.sliced_w1(ens / math.sqrt(e), gs / math.sqrt(e), cfg["slices"],
                            stream(seed, 11))
        fl = stats.sliced_w1(g.sample(cfg["gibbs_n"], stream(seed, 13)) / math.sqrt(e),
                             gs / math.sqrt(e), cfg["slices"], stream(seed, 11))
        m[f"rescaled_gibbs_sliced_w1[{e:g}]"] = d
        m[f"rescaled_gibbs_floor[{e:g}]"] = fl
        rows.append((float(e), d, fl))
    _write_rows(_out(out_dir, "rescaled_gibbs.csv"), ["eta", "sliced_w1", "floor"], rows)
    if out_dir is not None:
        lim = float(np.max(np.abs(phi)))
        stats.make_histogram(phi, cfg["bins"], (-lim, lim)).to_csv(_out(out_dir, "phi_hist.csv"))
        stats.make_histogram(hat_a, cfg["bins"], (-lim, lim)).to_csv(
            _out(out_dir, "phihat_hist.csv"))
        orb = iterate(gd, init.members[0], cfg["orbit_n"], 10_000, cfg["thin"], seed).states
        stats.make_histogram(orb, cfg["bins"], (-lim, lim)).to_csv(_out(out_dir, "orbit_hist.csv"))
    return m


def run_lyapunov_sweep(cfg, out_dir=None):
    """Lyapunov residuals ``lambda - ln(eta/eps)`` against the m constant."""
    m = {}
    rows = []
    n, burn = cfg["orbit_n"], cfg["burn_in"]
    for micro in ("sin", "quasi"):
        obj = make_objective("double-well", micro, cfg["epsilon"], k=cfg["k"])
        res = []
        for eta in cfg["etas"]:
            est = chaos.lyapunov(obj, eta, cfg["x0"], n, burn)
            res.append(est.residual)
            rows.append((micro, float(eta), cfg["epsilon"], est.lam, est.residual,
                         est.m_reference))
        label = "periodic" if micro == "sin" else "quasi"
        m[f"{label}_residuals"] = res
        m[f"{label}_mean_residual"] = float(np.mean(res))
        m[f"{label}_max_abs_deviation"] = float(np.max(np.abs(np.array(res) - est.m_reference)))
        m[f"{label}_m_quadrature"] = est.m_reference
    eps_res = []
    for eps in cfg["epsilon_sweep"]:
        o = make_objective("double-well", "sin", eps, k=cfg["k"])
        est = chaos.lyapunov(o, cfg["epsilon_sweep_eta"], cfg["x0"], n, burn)
        eps_res.append(est.residual)
        rows.append(("sin", cfg["epsilon_sweep_eta"], float(eps), est.lam, est.residual,
                     est.m_reference))
    m["epsilon_sweep_residuals"] = eps_res
    obj = make_objective("matyas", "sincos2d", cfg["epsilon_2d"])
    est = chaos.lyapunov(obj, cfg["eta_2d"], cfg["x0_2d"], n, burn)
    rows.append(("sincos2d", cfg["eta_2d"], cfg["epsilon_2d"], est.lam, est.residual,
                 est.m_reference))
    m["sincos2d_residual"] = est.residual
    m["sincos2d_m_quadrature"] = est.m_reference
    m["sincos2d_singular_steps"] = est.singular_steps
    _write_rows(_out(out_dir, "lyapunov.csv"),
                ["micro", "eta", "epsilon", "lambda", "residual", "m_reference"], rows)
    return m


def run_bifurcation(cfg, out_dir=None):
    """Period-doubling scan of GD with learning rates on a multiple-of-eps grid."""
    eps = cfg["epsilon"]
    obj = make_objective(cfg["macro"], cfg["micro"], eps)
    ratios = cfg["ratio_start"] + cfg["ratio_step"] * np.arange(cfg["ratio_count"])
    diag = chaos.bifurcation_scan(obj, ratios * eps, cfg["x0_ratio"] * eps, cfg["burn_in"],
                                  cfg["record"], workers=cfg["workers"])
    first = diag.first(chaos.APERIODIC)
    wins = diag.windows(2)
    contains = any(lo <= 2.5 * eps <= hi for lo, hi in wins)
    periods = [p for p in diag.periods if isinstance(p, int)]
    pre = []
    for r in diag.rows:
        if not isinstance(r.period, int):
            break
        pre.append(r.period)
    m = {
        "first_aperiodic_ratio": None if first is None else first / eps,
        "period2_windows_ratio": [[lo / eps, hi / eps] for lo, hi in wins],
        "period2_window_contains_2.5": bool(contains),
        "pre_chaos_periods_nondecreasing": bool(all(a <= b for a, b in zip(pre, pre[1:]))),
        "pre_chaos_periods": sorted(set(pre)),
        "chaos_threshold_ratio": chaos.chaos_threshold(m_constant(obj.micro), eps) / eps,
        "diverged_rows": sum(1 for p in diag.periods if p == chaos.DIVERGED),
        "max_period_found": max(periods) if periods else None,
    }
    if out_dir is not None:
        diag.to_csv(_out(out_dir, "bifurcation_points.csv"),
                    _out(out_dir, "bifurcation_periods.csv"))
    return m


def run_momentum(cfg, out_dir=None):
    """Heavy ball and NAG-SC orbits: variance and stationarity of histograms."""
    seed, eps = cfg["seed"], cfg["epsilon"]
    obj = make_objective(cfg["macro"], cfg["micro"], eps)
    specs = {"heavy_ball": MapSpec("heavy-ball", obj, cfg["eta"], gamma=cfg["gamma"]),
             "nag_sc": MapSpec("nag-sc", obj, cfg["eta"], mu_hint=cfg["mu_hint"])}
    m = {}
    for name, spec in specs.items():
        orb = iterate(spec, cfg["x0"], cfg["orbit_n"], cfg["burn_in"], cfg["thin"], seed).x
        h = orb.size // 2
        w = stats.w1_distance_1d(orb[:h], orb[h:2 * h])
        init = Ensemble.uniform(2 * h, cfg["low"], cfg["high"], 1, seed)
        ens = evolve_ensemble(spec, init, cfg["floor_steps"], workers=cfg["workers"]).x
        floor = _halves_floor(ens)
        var = float(np.var(orb))
        m.update({f"{name}_variance": var, f"{name}_variance_over_eps2": var / eps ** 2,
                  f"{name}_halves_w1": w, f"{name}_self_distance_floor": floor,
                  f"{name}_halves_floor_ratio": w / floor,
                  f"{name}_orbit_vs_ensemble_w1": stats.w1_distance_1d(orb, ens)})
        lo, hi = float(np.min(orb)), float(np.max(orb))
        _write_hist(out_dir, f"{name}_first_half_hist.csv", orb[:h], cfg["bins"], lo, hi)
        _write_hist(out_dir, f"{name}_second_half_hist.csv", orb[h:], cfg["bins"], lo, hi)
    hb0 = iterate(MapSpec("heavy-ball", obj, cfg["eta"], gamma=0.0), cfg["x0"], 10_000).states
    gd = iterate(MapSpec("gd", obj, cfg["eta"]), cfg["x0"], 10_000).states
    m["gamma0_matches_gd"] = bool(np.array_equal(hb0, gd))
    return m


def run_escape_dichotomy(cfg, out_dir=None):
    """Barrier crossing versus trapping, and the in-well Gaussian limit."""
    seed = cfg["seed"]
    m = {}
    low = chaos.escape_scan(cfg["k_escape"], cfg["eta"], cfg["epsilon"], cfg["x0"],
                            cfg["orbit_n"])
    high = chaos.escape_scan(cfg["k_trap"], cfg["eta"], cfg["epsilon"], cfg["x0"],
                             cfg["orbit_n"])
    m.update({"low_k_crossings": low.crossings, "low_k_escaped": low.escaped,
              "low_k_s_connected": low.s_connected, "high_k_crossings": high.crossings,
              "high_k_trapped": not high.escaped, "high_k_s_connected": high.s_connected})
    below, _, _ = chaos.s_connectivity(K_CRITICAL * (1 - 1e-9))
    above, _, _ = chaos.s_connectivity(K_CRITICAL * (1 + 1e-9))
    at, flagged, _ = chaos.s_connectivity(K_CRITICAL)
    m["connectivity_below_k_critical"] = below
    m["connectivity_above_k_critical"] = above
    m["boundary_flagged_at_k_critical"] = flagged
    m["connectivity_flips_at_k_critical"] = bool(below and not above and flagged)
    # brute-force cross-check of the root analysis
    grid = np.linspace(-3.0, 3.0, cfg["brute_grid"])
    agree = True
    for k in (cfg["k_escape"], cfg["k_trap"], 0.5, 0.7):
        inside = np.abs(4 * k * grid * (grid * grid - 1)) <= 1.0
        runs = int(np.count_nonzero(np.diff(inside.astype(np.int8)) == 1) + inside[0])
        agree &= (runs == 1) == chaos.s_connectivity(k)[0]
    m["connectivity_matches_brute_force"] = bool(agree)
    # in-well Gaussian approximation
    k = cfg["gauss_k"]
    obj = make_objective("double-well", "sin", cfg["gauss_epsilon"], k=k)
    ks = []
    rows = []
    for eta in cfg["gauss_etas"]:
        steps = int(max(cfg["gauss_min_steps"], math.ceil(cfg["gauss_step_factor"] / eta)))
        init = Ensemble.uniform(cfg["gauss_members"], cfg["gauss_low"], cfg["gauss_high"], 1,
                                seed)
        x = evolve_ensemble(MapSpec("gd", obj, eta), init, steps, workers=cfg["workers"]).x
        x = x[x > 0]
        approx = stats.gaussian_approx(obj.macro, eta, obj.micro.noise.sigma2, 1.0)
        d = stats.ks_distance(x, approx)
        ks.append(d)
        rows.append((float(eta), steps, int(x.size), d))
        _write_hist(out_dir, f"gaussian_rescaled_hist_eta{eta:g}.csv",
                    1.0 + (x - 1.0) / math.sqrt(eta), 100,
                    1.0 - 6 * math.sqrt(1 / (32 * k)), 1.0 + 6 * math.sqrt(1 / (32 * k)))
    order = np.argsort(cfg["gauss_etas"])[::-1]
    ks_sorted = [ks[i] for i in order]
    m["gaussian_ks"] = ks
    m["gaussian_ks_monotone"] = bool(all(a > b for a, b in zip(ks_sorted, ks_sorted[1:])))
    m["gaussian_ks_smallest_eta"] = ks_sorted[-1]
    _write_rows(_out(out_dir, "gaussian_ks.csv"), ["eta", "steps", "members_in_well", "ks"],
                rows)
    return m


def run_residual_orders(cfg, out_dir=None):
    """Invariance residual order, gradient moments, coupling and modified equation."""
    seed = cfg["seed"]
    m = {}
    f0 = catalog_macro("quadratic")
    noise = catalog_micro("sin", 1.0).noise
    etas = np.asarray(cfg["etas"])
    bump = stats.bump_for_gibbs(float(etas.max()), noise.sigma2, 1.0, cfg["bump_widths"])
    res, ses, rows = [], [], []
    for i, eta in enumerate(etas):
        g = stats.gibbs_density(f0, eta, noise.sigma2, resolution=cfg["gibbs_resolution"])
        r = stats.invariance_residual(f0, noise, eta, bump, cfg["n_mc"], seed + i, gibbs=g)
        res.append(r.estimate)
        ses.append(r.stderr)
        rows.append((float(eta), r.estimate, r.stderr, r.inconclusive))
    m["bump_radius"] = bump.radius
    m["residuals"] = res
    m["residual_stderrs"] = ses
    m["residual_inconclusive"] = any(r[3] for r in rows)
    m["residual_slope"] = _slope(etas, res)
    _write_rows(_out(out_dir, "invariance_residual.csv"),
                ["eta", "residual", "stderr", "inconclusive"], rows)
    for name in ("quadratic", "quartic"):
        f = catalog_macro(name)
        vals = [stats.grad_second_moment(f, e, noise.sigma2, cfg["moment_n"], seed + 100 + j
                                         ).estimate for j, e in enumerate(etas)]
        m[f"{name}_moments"] = vals
        m[f"{name}_moment_slope"] = _slope(etas, vals)
        m[f"{name}_moment_monotone"] = bool(all(a > b for a, b in zip(vals, vals[1:])))
        m[f"{name}_bound_exponent"] = stats.growth_exponent(f)
    eta_c = cfg["coupling_eta"]
    m["coupling_rate_quadratic"] = chaos.coupling_rate(
        f0, noise, eta_c, cfg["coupling_n"], cfg["coupling_pairs"], seed)
    mat = catalog_macro("matyas")
    rate = chaos.coupling_rate(mat, catalog_micro("sincos2d", 1.0).noise, eta_c,
                               cfg["coupling_n"], cfg["coupling_pairs"], seed)
    bound = chaos.coupling_bound(mat, eta_c)
    m["coupling_rate_matyas"] = rate
    m["coupling_bound_matyas"] = bound
    m["coupling_matyas_excess"] = rate - bound
    eps = cfg["modeq_epsilon"]
    obj = make_objective("quadratic", "sin", eps)
    x = cfg["modeq_low"] + (cfg["modeq_high"] - cfg["modeq_low"]) * \
        stream(seed, 21).random(cfg["modeq_points"])
    terms = chaos.modified_eq_terms(obj, x, cfg["modeq_ratio"] * eps)
    r2, r3 = terms.ratios
    m["modified_eq_fraction_ratio_ge_1"] = float(np.mean(r2 >= 1.0))
    m["modified_eq_median_ratio_g2"] = float(np.median(r2))
    m["modified_eq_median_ratio_g3"] = float(np.nanmedian(r3))
    return m


RUNNERS: dict = {
    "ergodicity-1d": run_ergodicity_1d,
    "aperiodic": run_aperiodic,
    "matyas-2d": run_matyas_2d,
    "lyapunov-sweep": run_lyapunov_sweep,
    "bifurcation": run_bifurcation,
    "momentum": run_momentum,
    "escape-dichotomy": run_escape_dichotomy,
    "residual-orders": run_residual_orders,
}
EXPERIMENT_IDS = tuple(RUNNERS)


def run(cfg, out_dir=None):
    """Run the experiment named by ``cfg`` and return its :class:`Verdict`.

    Divergence is caught and recorded in ``errors`` (all criteria then fail
    for missing metrics); it is never silent.
    """
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    t0 = time.perf_counter()
    errors = []
    try:
        metrics = RUNNERS[cfg.experiment](cfg, out_dir)
    except DivergenceError as exc:
        metrics = {}
        errors.append(f"divergence: {exc}")
    runtime = time.perf_counter() - t0
    params = {"profile": cfg.profile, **cfg.params}
    params.pop("workers", None)
    return Verdict(cfg.experiment, metrics, cfg["seed"], params, dict(cfg.tolerances),
                   errors, runtime)


def default_config(experiment, profile="full", **overrides):
    return ExperimentConfig(experiment, profile, overrides)


def write_verdict(verdict, out_dir):
    """``<id>.verdict.json`` plus ``<id>.timing.json`` in ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{verdict.experiment}.verdict.json")
    with open(path, "w") as fh:
        fh.write(verdict.to_json())
    with open(os.path.join(out_dir, f"{verdict.experiment}.timing.json"), "w") as fh:
        json.dump({"experiment": verdict.experiment, "runtime_seconds": verdict.runtime}, fh)
        fh.write("\n")
    return path
