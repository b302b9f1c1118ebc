"""Chaos diagnostics for gradient maps on multiscale objectives.

Lyapunov exponents, period detection along learning-rate scans, period-3
certificates, barrier-escape analysis for the double well, coupling rates of
the stochastic map and the growth of modified-equation terms.
"""
from __future__ import annotations

import csv
import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numba as nb
import numpy as np

from .dynamics import DIVERGENCE_BOUND, Ensemble, MapSpec, iterate
from .errors import DivergenceError, DomainError, UnsupportedError
from .objective import (K_CRITICAL, MacroFunction, MultiscaleObjective, _zero_hess,
                        catalog_macro, catalog_micro, m_constant)
from .rng import check_seed, stream

log = logging.getLogger(__name__)

MIN_LYAPUNOV_STEPS = 100_000


# ---------------------------------------------------------------------------
# Lyapunov exponent
# ---------------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _spectral_norm(J, d):
    if d == 1:
        return abs(J[0, 0])
    a = J[0, 0]
    b = J[0, 1]
    c = J[1, 0]
    e = J[1, 1]
    fro = a * a + b * b + c * c + e * e
    det = a * e - b * c
    disc = fro * fro - 4.0 * det * det
    if disc < 0.0:
        disc = 0.0
    return math.sqrt(0.5 * (fro + math.sqrt(disc)))


@nb.njit(cache=True, nogil=True)
def _lyapunov_kernel(x, burn_in, n, eta, g0, p0, g1, p1, h0, h1):
    """Returns ``(sum of logs, singular count, failing step or -1)``."""
    d = x.shape[1]
    G = np.empty((1, d))
    G1 = np.empty((1, d))
    H = np.empty((1, d, d))
    H1 = np.empty((1, d, d))
    J = np.empty((d, d))
    total = 0.0
    singular = 0
    for s in range(burn_in + n):
        if s >= burn_in:
            h0(x, p0, H)
            h1(x, p1, H1)
            for i in range(d):
                for k in range(d):
                    J[i, k] = -eta * (H[0, i, k] + H1[0, i, k])
                J[i, i] += 1.0
            nrm = _spectral_norm(J, d)
            if nrm == 0.0:
                singular += 1
            else:
                total += math.log(nrm)
        g0(x, p0, G)
        g1(x, p1, G1)
        for i in range(d):
            x[0, i] = x[0, i] - eta * (G[0, i] + G1[0, i])
            if not (abs(x[0, i]) <= 1e12):
                return total, singular, s
    return total, singular, -1


@functools.lru_cache(maxsize=None)
def _m_reference(name):
    return m_constant(catalog_micro(name, 1.0))


@dataclass
class LyapunovEstimate:
    """Orbit average of ``ln ||D phi(x_i)||_2``.

    ``singular_steps`` counts steps with an exactly singular Jacobian; they
    are excluded from the average.
    """

    lam: float
    n: int
    burn_in: int
    x0: np.ndarray
    eta: float
    epsilon: Optional[float]
    m_reference: Optional[float] = None
    singular_steps: int = 0

    @property
    def residual(self):
        """``lam - ln(eta / epsilon)``; ``None`` without a micro-scale."""
        if self.epsilon is None:
            return None
        return self.lam - math.log(self.eta / self.epsilon)

    def to_dict(self):
        return {"lambda": self.lam, "residual": self.residual, "n": self.n,
                "burn_in": self.burn_in, "x0": [float(v) for v in self.x0],
                "eta": self.eta, "epsilon": self.epsilon,
                "m_reference": self.m_reference, "singular_steps": self.singular_steps}


def lyapunov(obj, eta, x0, n, burn_in=0, m_reference="auto"):
    """Lyapunov exponent of the GD map along the orbit of ``x0``.

    Parameters
    ----------
    obj : MultiscaleObjective
        Both scales need Hessian kernels.
    n : int
        Averaging length, at least ``MIN_LYAPUNOV_STEPS``.
    m_reference : float, None or "auto"
        Comparison constant stored on the estimate; ``"auto"`` evaluates the
        micro-scale m-oracle when one exists.
    """
    if isinstance(obj, MacroFunction):
        obj = MultiscaleObjective(obj)
    spec = MapSpec("gd", obj, eta)
    n, burn_in = int(n), int(burn_in)
    if n < MIN_LYAPUNOV_STEPS:
        raise DomainError(f"need n >= {MIN_LYAPUNOV_STEPS} for a Lyapunov estimate")
    if burn_in < 0:
        raise DomainError("burn_in must be nonnegative")
    h0 = obj.macro.hess_kernel
    if h0 is None or (obj.micro is not None and obj.micro.hess_kernel is None):
        raise UnsupportedError("Lyapunov estimation needs Hessians of both scales")
    g0, p0, g1, p1 = spec._kernels()
    h1 = _zero_hess if obj.micro is None else obj.micro.hess_kernel
    start = np.array(x0, dtype=np.float64, ndmin=1).reshape(obj.dim)
    x = start.reshape(1, -1).copy()
    total, singular, bad = _lyapunov_kernel(x, burn_in, n, spec.eta, g0, p0, g1, p1, h0, h1)
    if bad >= 0:
        raise DivergenceError(f"orbit diverged at step {bad}", state=x[0].copy(), step=bad)
    used = n - singular
    lam = total / used if used else float("-inf")
    if m_reference == "auto":
        micro = obj.micro
        m_reference = (_m_reference(micro.name)
                       if micro is not None and micro.m_oracle is not None else None)
    return LyapunovEstimate(lam, n, burn_in, start, spec.eta, obj.epsilon,
                            m_reference, singular)


def chaos_threshold(m, epsilon):
    """Learning rate ``exp(-m) epsilon`` above which the map is chaotic."""
    m = float(m)
    if not math.isfinite(m):
        raise DomainError("m must be finite")
    return math.exp(-m) * float(epsilon)


# ---------------------------------------------------------------------------
# bifurcation scan
# ---------------------------------------------------------------------------

APERIODIC = "aperiodic"
DIVERGED = "diverged"


@dataclass
class BifurcationRow:
    eta: float
    points: np.ndarray
    period: object
    burn_in: int
    tolerance: float


@dataclass
class BifurcationDiagram:
    rows: list

    @property
    def etas(self):
        return np.array([r.eta for r in self.rows])

    @property
    def periods(self):
        return [r.period for r in self.rows]

    def first(self, label):
        """Smallest eta whose row carries ``label`` (a period or a status)."""
        for r in self.rows:
            if r.period == label:
                return r.eta
        return None

    def windows(self, period):
        """Maximal runs of consecutive rows with the given period, as (lo, hi)."""
        out = []
        run = None
        for r in self.rows:
            if r.period == period:
                run = (run[0], r.eta) if run else (r.eta, r.eta)
            elif run:
                out.append(run)
                run = None
        if run:
            out.append(run)
        return out

    def to_csv(self, points_path, summary_path):
        """Long format ``eta, point`` plus a per-row ``eta, period`` summary."""
        with open(points_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "point"])
            for r in self.rows:
                for p in r.points:
                    w.writerow([repr(r.eta), repr(float(p))])
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "period"])
            for r in self.rows:
                w.writerow([repr(r.eta), r.period])


def detect_period(points, tol, max_period):
    """Smallest ``p <= max_period`` with ``max |x_{i+p} - x_i| <= tol``, else None."""
    pts = np.asarray(points, dtype=np.float64)
    pts = pts.reshape(pts.shape[0], -1)
    for p in range(1, max_period + 1):
        if np.max(np.abs(pts[p:] - pts[:-p])) <= tol:
            return p
    return None


def _scan_one(obj, eta, x0, burn_in, record, period_tol, max_burn_in):
    spec = MapSpec("gd", obj, eta)
    # without a micro-scale the unit length sets the floor, so orbits that
    # contract onto a fixed point still register as period one
    eps = obj.epsilon or 1.0
    burned = 0
    state = np.array(x0, dtype=np.float64, ndmin=1)
    chunk = burn_in
    try:
        while True:
            orb = iterate(spec, state, record - 1, burn_in=chunk)
            burned += chunk
            pts = orb.states
            tol = period_tol if period_tol is not None else \
                1e-9 * (float(np.max(np.ptp(pts, axis=0))) + eps)
            p = detect_period(pts, tol, record // 4)
            # critical slowing down near a bifurcation: keep burning before
            # declaring the row aperiodic
            if p is not None or burned >= max_burn_in:
                return BifurcationRow(eta, pts[:, 0] if pts.shape[1] == 1 else pts,
                                      p if p is not None else APERIODIC, burned, tol)
            state = pts[-1]
            chunk = min(burned, max_burn_in - burned)
    except DivergenceError:
        return BifurcationRow(eta, np.empty(0), DIVERGED, burned, float("nan"))


def bifurcation_scan(obj, eta_grid, x0, burn_in=100_000, record=1024, period_tol=None,
                     max_burn_in=None, workers=1):
    """Attractor samples and minimal periods of the GD map along ``eta_grid``.

    Each row burns in ``burn_in`` steps, records ``record`` iterates and
    looks for a period ``p <= record // 4``.  A row that looks aperiodic is
    burned in further (doubling) up to ``max_burn_in`` steps in total
    (default ``16 * burn_in``).  The default tolerance is
    ``1e-9 * (attractor diameter + epsilon)``, with ``epsilon = 1`` for a
    landscape without micro-scale.
    """
    grid = np.asarray(eta_grid, dtype=np.float64)
    if grid.ndim != 1 or np.any(np.diff(grid) < 0):
        raise DomainError("eta_grid must be a sorted 1-D sequence")
    if record < 8:
        raise DomainError("record at least 8 iterates")
    burn_in = max(1, int(burn_in))
    max_burn_in = 16 * burn_in if max_burn_in is None else max(int(max_burn_in), burn_in)
    if isinstance(obj, MacroFunction):
        obj = MultiscaleObjective(obj)

    def one(eta):
        return _scan_one(obj, float(eta), x0, burn_in, int(record), period_tol, max_burn_in)

    if workers > 1 and grid.size > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            rows = list(pool.map(one, grid))
    else:
        rows = [one(e) for e in grid]
    return BifurcationDiagram(rows)


# ---------------------------------------------------------------------------
# period-3 certificate
# ---------------------------------------------------------------------------

ORDER_SLACK = 1e-12


@dataclass
class Period3Certificate:
    """Points ``b = phi(a)``, ``c = phi^2(a)``, ``d = phi^3(a)`` in Li-Yorke order."""

    a: float
    b: float
    c: float
    d: float
    increasing: bool

    def holds(self, slack=ORDER_SLACK):
        a, b, c, d = self.a, self.b, self.c, self.d
        if self.increasing:
            return d <= a + slack and a + slack < b and b + slack < c
        return d >= a - slack and a - slack > b and b - slack > c


def _phi(obj, eta, x):
    return x - eta * obj.grad(x.reshape(-1, 1))[:, 0]


def _order_margins(obj, eta, a):
    with np.errstate(over="ignore", invalid="ignore"):
        b = _phi(obj, eta, a)
        c = _phi(obj, eta, b)
        d = _phi(obj, eta, c)
    up = np.minimum(np.minimum(b - a, c - b), a - d)
    down = np.minimum(np.minimum(a - b, b - c), d - a)
    up = np.where(np.isfinite(up), up, -np.inf)
    down = np.where(np.isfinite(down), down, -np.inf)
    return up, down


def find_period3(obj, eta, interval, grid_n=1_000_000, refine_rounds=40):
    """Search ``interval`` for a point ``a`` whose orbit is in Li-Yorke order.

    The ordering margin ``min(b - a, c - b, a - d)`` (and its mirror) is
    scanned on a uniform grid; if no grid point clears the slack, the best
    bracket is refined by repeated local rescans.  A returned certificate is
    always re-verified by direct iteration.
    """
    if isinstance(obj, MacroFunction):
        obj = MultiscaleObjective(obj)
    if obj.dim != 1:
        raise UnsupportedError("period-3 search is defined for 1-D maps")
    lo, hi = map(float, interval)
    if not hi > lo:
        raise DomainError("empty interval")
    grid_n = int(grid_n)
    pitch = (hi - lo) / max(grid_n - 1, 1)
    eps = obj.epsilon
    if eps is not None and pitch > eps / 20.0:
        log.warning("grid pitch %.3g does not resolve micro wells of size %.3g; "
                    "a certificate may be missed", pitch, eps)
    best = None
    for start in range(0, grid_n, 1 << 20):
        a = lo + pitch * np.arange(start, min(grid_n, start + (1 << 20)))
        up, down = _order_margins(obj, eta, a)
        for margin, inc in ((up, True), (down, False)):
            i = int(np.argmax(margin))
            if best is None or margin[i] > best[0]:
                best = (float(margin[i]), float(a[i]), inc)
        if best[0] > ORDER_SLACK:
            break
    if best is None or not np.isfinite(best[0]):
        return None
    score, a0, inc = best
    width = pitch
    for _ in range(refine_rounds):
        if score > ORDER_SLACK:
            break
        a = np.linspace(max(lo, a0 - width), min(hi, a0 + width), 2049)
        up, down = _order_margins(obj, eta, a)
        margin = up if inc else down
        i = int(np.argmax(margin))
        if margin[i] > score:
            score, a0 = float(margin[i]), float(a[i])
        width /= 16.0
    if score <= ORDER_SLACK:
        return None
    spec = MapSpec("gd", obj, eta)
    orb = iterate(spec, a0, 3).x
    cert = Period3Certificate(float(orb[0]), float(orb[1]), float(orb[2]), float(orb[3]), inc)
    return cert if cert.holds() else None


# ---------------------------------------------------------------------------
# barrier escape on the double well
# ---------------------------------------------------------------------------

@nb.njit(cache=True, nogil=True)
def _count_crossings(x, n, eta, g0, p0, g1, p1):
    G = np.empty((1, 1))
    G1 = np.empty((1, 1))
    crossings = 0
    prev = x[0, 0]
    for s in range(n):
        g0(x, p0, G)
        g1(x, p1, G1)
        cur = x[0, 0] - eta * (G[0, 0] + G1[0, 0])
        x[0, 0] = cur
        if not (abs(cur) <= 1e12):
            return crossings, s
        if cur != 0.0:
            if prev != 0.0 and (cur > 0.0) != (prev > 0.0):
                crossings += 1
            prev = cur
    return crossings, -1


def well_set_components(k, bound=1.0):
    """Components of ``{x : |4 k x (x^2 - 1)| <= bound}`` by root analysis."""
    k = float(k)
    roots = []
    for rhs in (bound, -bound):
        r = np.roots([4.0 * k, 0.0, -4.0 * k, -rhs])
        roots.extend(float(v.real) for v in r if abs(v.imag) <= 1e-9 * max(1.0, abs(v)))
    roots = np.unique(np.round(np.sort(roots), 14))
    g = lambda x: np.abs(4.0 * k * x * (x * x - 1.0))
    comps = []
    for left, right in zip(roots[:-1], roots[1:]):
        if g(0.5 * (left + right)) <= bound:
            if comps and abs(comps[-1][1] - left) <= 1e-9:
                comps[-1] = (comps[-1][0], float(right))
            else:
                comps.append((float(left), float(right)))
    return comps


@dataclass
class EscapeReport:
    k: float
    eta: float
    epsilon: float
    n: int
    crossings: int
    s_connected: bool
    boundary: bool
    components: list
    k_critical: float = K_CRITICAL

    @property
    def escaped(self):
        return self.crossings > 0

    def to_dict(self):
        return {"k": self.k, "eta": self.eta, "epsilon": self.epsilon, "n": self.n,
                "crossings": self.crossings, "escaped": self.escaped,
                "s_connected": self.s_connected, "boundary": self.boundary,
                "components": [list(c) for c in self.components],
                "k_critical": self.k_critical}


def s_connectivity(k, bound=1.0):
    """``(connected, boundary, components)`` for the set ``|f0'| <= bound``.

    The interior extremum of ``4 k x (x^2 - 1)`` is ``8 k / (3 sqrt 3)``; the
    set is connected when it does not exceed ``bound``.  Values within 1e-12
    of equality are flagged as the boundary case (the two halves touch).
    """
    peak = 8.0 * float(k) / (3.0 * math.sqrt(3.0))
    boundary = abs(peak - bound) <= 1e-12 * bound
    comps = well_set_components(k, bound)
    connected = True if boundary else len(comps) == 1
    return connected, boundary, comps


def escape_scan(k, eta, epsilon, x0=1.0, n=10_000_000, micro="sin"):
    """Count sign changes of the GD orbit on ``k (x^2 - 1)^2`` plus a micro-scale."""
    if float(x0) == 0.0:
        raise DomainError("x0 must be nonzero")
    obj = MultiscaleObjective(catalog_macro("double-well", k=k), catalog_micro(micro, epsilon))
    spec = MapSpec("gd", obj, eta)
    g0, p0, g1, p1 = spec._kernels()
    x = np.array([[float(x0)]])
    crossings, bad = _count_crossings(x, int(n), spec.eta, g0, p0, g1, p1)
    if bad >= 0:
        raise DivergenceError(f"orbit diverged at step {bad}", state=x[0].copy(), step=bad)
    bound = obj.micro.noise.bound if obj.micro.noise is not None else 1.0
    connected, boundary, comps = s_connectivity(k, bound)
    return EscapeReport(float(k), spec.eta, float(epsilon), int(n), int(crossings),
                        connected, boundary, comps)


# ---------------------------------------------------------------------------
# coupling rate
# ---------------------------------------------------------------------------

def coupling_bound(f0, eta):
    """``max(|1 - eta mu|, |1 - eta L|)`` from the catalog constants."""
    if f0.strong_convexity is None or f0.smoothness is None:
        raise UnsupportedError(f"{f0.name}: needs mu and L")
    return max(abs(1.0 - eta * f0.strong_convexity), abs(1.0 - eta * f0.smoothness))


def coupling_rate(f0, noise, eta, n=100, pairs=16, rng=0, low=-2.0, high=2.0,
                  return_pairs=False):
    """Fitted per-step contraction of two stochastic orbits sharing their noise.

    Pair ``p`` starts from two independent uniform points and both orbits read
    noise stream ``(seed, p)``.  The rate of each pair is ``exp`` of the
    least-squares slope of ``ln ||x_k - y_k||`` over ``k = 0 .. n``; the mean
    over pairs is returned.
    """
    if f0.strong_convexity is None:
        raise UnsupportedError(f"{f0.name}: coupling needs a strongly convex landscape")
    seed = check_seed(rng)
    spec = MapSpec("stochastic-gd", f0, eta, noise=noise)
    starts = low + (high - low) * stream(seed, 1 << 63).random((int(pairs), 2, f0.dim))
    steps = np.arange(int(n) + 1, dtype=np.float64)
    rates = []
    for p in range(int(pairs)):
        noise_seed = int(stream(seed, p).integers(0, 1 << 63))
        a = iterate(spec, starts[p, 0], n, seed=noise_seed).states
        b = iterate(spec, starts[p, 1], n, seed=noise_seed).states
        dist = np.linalg.norm(a - b, axis=1)
        keep = dist > 0
        slope = np.polyfit(steps[keep], np.log(dist[keep]), 1)[0]
        rates.append(math.exp(slope))
    rates = np.array(rates)
    return (float(rates.mean()), rates) if return_pairs else float(rates.mean())


# ---------------------------------------------------------------------------
# modified-equation terms
# ---------------------------------------------------------------------------

@dataclass
class ModifiedEquationTerms:
    """Magnitudes of ``g``, ``eta g2`` and ``eta^2 g3`` at the query points."""

    g: np.ndarray
    eta_g2: np.ndarray
    eta2_g3: np.ndarray

    @property
    def ratios(self):
        """``(|eta g2| / |g|, |eta^2 g3| / |eta g2|)``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.eta_g2 / self.g, self.eta2_g3 / self.eta_g2


def modified_eq_terms(obj, x, eta, max_order=3):
    """Leading terms of the modified equation of ``x' = x + eta g(x)``, ``g = -f'``.

    ``g2 = -g' g / 2`` and ``g3 = g'' g^2 / 12 + g'^2 g / 3``.
    """
    if isinstance(obj, MacroFunction):
        obj = MultiscaleObjective(obj)
    if obj.dim != 1:
        raise UnsupportedError("modified-equation terms are implemented in 1-D")
    if max_order not in (2, 3):
        raise DomainError("max_order must be 2 or 3")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    g = -obj.grad(x.reshape(-1, 1))[:, 0]
    dg = -obj.hess(x.reshape(-1, 1))[:, 0, 0]
    g2 = -0.5 * dg * g
    out_g3 = np.full_like(g, np.nan)
    if max_order >= 3:
        ddg = -obj.third(x.reshape(-1, 1))
        out_g3 = ddg * g * g / 12.0 + dg * dg * g / 3.0
    return ModifiedEquationTerms(np.abs(g), np.abs(eta * g2), np.abs(eta * eta * out_g3))
