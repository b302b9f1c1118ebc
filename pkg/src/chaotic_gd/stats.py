"""Empirical distributions, sample distances and rescaled-Gibbs estimators.

The rescaled Gibbs law of a macro landscape ``f0`` at learning rate ``eta``
and noise variance ``sigma2`` has density proportional to
``exp(-2 f0(x) / (eta sigma2))``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import erf, ndtri

from .errors import DomainError, UnsupportedError
from .objective import MacroFunction, NoiseModel, as_batch
from .rng import as_generator, chunk_generator, check_seed

# ---------------------------------------------------------------------------
# histograms
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class EmpiricalDistribution:
    """Binned distribution in one or two dimensions.

    ``counts`` holds in-range weights only; samples falling outside the
    declared range are tallied in ``overflow``.
    """

    edges: tuple
    counts: np.ndarray
    overflow: float
    samples: Optional[np.ndarray] = None

    @property
    def dim(self):
        return len(self.edges)

    @property
    def total(self):
        return float(self.counts.sum())

    @property
    def widths(self):
        return tuple(np.diff(e) for e in self.edges)

    def density(self):
        """Normalized density per bin (integrates to one over the range)."""
        if self.total == 0:
            raise DomainError("no samples inside the histogram range")
        area = self.widths[0] if self.dim == 1 else np.outer(*self.widths)
        return self.counts / (self.total * area)

    def weights(self):
        return self.counts / self.total

    def cdf(self, x):
        """1-D CDF of the binned law, linear inside each bin."""
        self._need_1d()
        cum = np.concatenate(([0.0], np.cumsum(self.weights())))
        return np.interp(x, self.edges[0], cum)

    def quantile(self, p):
        """1-D quantile function, inverse of :meth:`cdf`."""
        self._need_1d()
        p = np.asarray(p, dtype=np.float64)
        if np.any((p < 0) | (p > 1)):
            raise DomainError("quantile levels must lie in [0, 1]")
        cum = np.concatenate(([0.0], np.cumsum(self.weights())))
        keep = np.concatenate(([True], np.diff(cum) > 0))
        return np.interp(p, cum[keep], self.edges[0][keep])

    def _need_1d(self):
        if self.dim != 1:
            raise UnsupportedError("operation defined for 1-D histograms only")

    def to_csv(self, path):
        """``bin_left, bin_right, density`` rows (plus y-columns in 2-D)."""
        dens = self.density()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.dim == 1:
                w.writerow(["bin_left", "bin_right", "density"])
                e = self.edges[0]
                for i, d in enumerate(dens):
                    w.writerow([repr(e[i]), repr(e[i + 1]), repr(float(d))])
            else:
                w.writerow(["x_left", "x_right", "y_left", "y_right", "density"])
                ex, ey = self.edges
                for i in range(dens.shape[0]):
                    for j in range(dens.shape[1]):
                        w.writerow([repr(ex[i]), repr(ex[i + 1]), repr(ey[j]),
                                    repr(ey[j + 1]), repr(float(dens[i, j]))])


def make_histogram(samples, bins, range, keep_samples=False):
    """Bin 1-D or 2-D samples.

    Parameters
    ----------
    samples : array_like, shape (n,) or (n, d)
    bins : int
        Bins per axis, at least 2.
    range : (lo, hi) or sequence of (lo, hi) per axis
    keep_samples : bool
        Retain the raw samples on the result.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise DomainError("empty sample set")
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    d = x.shape[1]
    if d not in (1, 2):
        raise UnsupportedError("histograms support 1-D and 2-D samples")
    bins = int(bins)
    if bins < 2:
        raise DomainError("need at least two bins")
    rng_ = np.asarray(range, dtype=np.float64).reshape(-1, 2)
    if rng_.shape[0] == 1 and d == 2:
        rng_ = np.vstack([rng_, rng_])
    if rng_.shape[0] != d or not np.all(np.isfinite(rng_)) or np.any(rng_[:, 1] <= rng_[:, 0]):
        raise DomainError(f"invalid histogram range {range!r}")
    edges = tuple(np.linspace(lo, hi, bins + 1) for lo, hi in rng_)
    inside = np.all((x >= rng_[:, 0]) & (x <= rng_[:, 1]), axis=1)
    if d == 1:
        counts, _ = np.histogram(x[inside, 0], bins=edges[0])
    else:
        counts, _, _ = np.histogram2d(x[inside, 0], x[inside, 1], bins=edges)
    return EmpiricalDistribution(edges, counts.astype(np.float64),
                                 float(np.count_nonzero(~inside)),
                                 x.copy() if keep_samples else None)


# ---------------------------------------------------------------------------
# rescaled Gibbs
# ---------------------------------------------------------------------------

def _simpson_weights(n, h):
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


def _cumulative_table(x, p):
    """Cumulative trapezoid of ``p`` on ``x``, normalized to end at one."""
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(x))))
    return cum / cum[-1]


def _inverse(cum, x, u):
    keep = np.concatenate(([True], np.diff(cum) > 0))
    return np.interp(u, cum[keep], x[keep])


EDGE_RATIO = 1e-16


@dataclass(eq=False)
class GibbsDensity:
    """Tabulated rescaled Gibbs density on ``[-R, R]^d``.

    ``grid`` holds the per-axis Simpson nodes, ``Z`` the normalization of
    ``exp(-beta (f0 - f_ref))`` with ``beta = 2 / (eta sigma2)`` and
    ``f_ref`` the grid minimum of ``f0``.  ``edge_ratio`` bounds the density
    on the boundary of the box relative to its interior maximum.
    """

    f0: MacroFunction
    eta: float
    sigma2: float
    radius: float
    grid: tuple
    Z: float
    f_ref: float
    edge_ratio: float
    table: np.ndarray
    z_rel_change: float

    @property
    def beta(self):
        return 2.0 / (self.eta * self.sigma2)

    @property
    def dim(self):
        return self.f0.dim

    def pdf(self, x):
        X, single = as_batch(x, self.dim)
        v = np.exp(-self.beta * (self.f0.value(X) - self.f_ref)) / self.Z
        inside = np.all(np.abs(X) <= self.radius, axis=1)
        v = np.where(inside, v, 0.0)
        return float(v[0]) if single else v

    def quadrature(self):
        """Simpson integral of the normalized table (one by construction)."""
        w = [_simpson_weights(g.size, g[1] - g[0]) for g in self.grid]
        if self.dim == 1:
            return float(w[0] @ self.table)
        return float(w[0] @ self.table @ w[1])

    def marginal(self, axis=0):
        """``(nodes, density)`` of the marginal along ``axis``."""
        if self.dim == 1:
            return self.grid[0], self.table
        other = 1 - axis
        w = _simpson_weights(self.grid[other].size, self.grid[other][1] - self.grid[other][0])
        dens = self.table @ w if axis == 0 else w @ self.table
        return self.grid[axis], dens

    def cdf(self, x, axis=0):
        nodes, dens = self.marginal(axis)
        return np.interp(x, nodes, _cumulative_table(nodes, dens))

    def ppf(self, p, axis=0):
        nodes, dens = self.marginal(axis)
        return _inverse(_cumulative_table(nodes, dens), nodes, np.asarray(p, dtype=np.float64))

    def mean(self):
        return np.array([float(np.sum(n * d) / np.sum(d))
                         for n, d in (self.marginal(a) for a in range(self.dim))])

    def sample(self, n, rng=None):
        """Inverse-CDF sampling on the grid (conditional CDF per row in 2-D)."""
        gen = as_generator(rng)
        n = int(n)
        if self.dim == 1:
            nodes, dens = self.marginal(0)
            return _inverse(_cumulative_table(nodes, dens), nodes, gen.random(n))
        if self.dim != 2:
            raise UnsupportedError("sampling supports dimension <= 2")
        gx, gy = self.grid
        t = self.table
        # cell masses from corner averages, then row-conditional sampling
        cell = 0.25 * (t[:-1, :-1] + t[1:, :-1] + t[:-1, 1:] + t[1:, 1:])
        rows = cell.sum(axis=1)
        row_cum = np.concatenate(([0.0], np.cumsum(rows)))
        row_cum /= row_cum[-1]
        u = gen.random((n, 2))
        pos = _inverse(row_cum, np.arange(rows.size + 1, dtype=np.float64), u[:, 0])
        i = np.minimum(pos.astype(np.int64), rows.size - 1)
        x = gx[0] + pos * (gx[1] - gx[0])
        col_cum = np.concatenate((np.zeros((rows.size, 1)), np.cumsum(cell, axis=1)), axis=1)
        col_cum /= col_cum[:, -1:]
        y = np.empty(n)
        for r in np.unique(i):
            sel = i == r
            y[sel] = _inverse(col_cum[r], gy, u[sel, 1])
        return np.column_stack((x, y))

    def to_csv(self, path):
        """Lattice dump: ``x, density`` (1-D) or ``x, y, density`` (2-D)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.dim == 1:
                w.writerow(["x", "density"])
                for a, d in zip(self.grid[0], self.table):
                    w.writerow([repr(float(a)), repr(float(d))])
            else:
                w.writerow(["x", "y", "density"])
                for i, a in enumerate(self.grid[0]):
                    for j, b in enumerate(self.grid[1]):
                        w.writerow([repr(float(a)), repr(float(b)), repr(float(self.table[i, j]))])


def _edge_points(radius, dim, n=257):
    if dim == 1:
        return np.array([[-radius], [radius]])
    s = np.linspace(-radius, radius, n)
    r = np.full_like(s, radius)
    return np.vstack([np.column_stack(p) for p in
                      ((s, r), (s, -r), (r, s), (-r, s))])


def _box_ok(f0, radius, beta, f_min):
    edge = f0.value(_edge_points(radius, f0.dim))
    return float(np.exp(-beta * (np.min(edge) - f_min)))


def _lattice(f0, radius, n, beta):
    g = np.linspace(-radius, radius, n)
    if f0.dim == 1:
        v = f0.value(g.reshape(-1, 1))
        return (g,), v
    gx, gy = np.meshgrid(g, g, indexing="ij")
    v = f0.value(np.column_stack((gx.ravel(), gy.ravel()))).reshape(n, n)
    return (g, g), v


def gibbs_density(f0, eta, sigma2, resolution=None, rtol=1e-9, max_radius=1e6):
    """Tabulate the rescaled Gibbs density of ``f0``.

    The box radius starts at 1 and doubles until the boundary density falls
    below ``1e-16`` of the interior maximum, then halves while that still
    holds.  The Simpson node count doubles until ``Z`` changes by less than
    ``rtol`` (relative) or the lattice budget is exhausted; a fixed
    ``resolution`` (nodes per axis, odd) skips the refinement.
    """
    eta, sigma2 = float(eta), float(sigma2)
    if not (eta > 0 and sigma2 > 0):
        raise DomainError("eta and sigma2 must be positive")
    dim = f0.dim
    if dim > 2:
        raise UnsupportedError("Gibbs tabulation supports dimension <= 2")
    beta = 2.0 / (eta * sigma2)
    f_min = min(float(f0.value(np.asarray(m, dtype=float).reshape(1, dim))[0])
                for m in f0.minimizers) if f0.minimizers else 0.0
    radius = 1.0
    while _box_ok(f0, radius, beta, f_min) >= EDGE_RATIO:
        radius *= 2.0
        if radius > max_radius:
            raise UnsupportedError(f"{f0.name}: no finite truncation radius found")
    while radius > 1e-6 and _box_ok(f0, radius / 2.0, beta, f_min) < EDGE_RATIO:
        radius /= 2.0

    def build(n):
        grid, v = _lattice(f0, radius, n, beta)
        ref = float(v.min())
        u = np.exp(-beta * (v - ref))
        w = [_simpson_weights(n, grid[0][1] - grid[0][0])] * dim
        z = float(w[0] @ u) if dim == 1 else float(w[0] @ u @ w[1])
        return grid, u, z, ref

    budget = (1 << 20) + 1 if dim == 1 else 4097
    if resolution is not None:
        n = int(resolution) | 1
        grid, u, z, ref = build(n)
        change = float("nan")
    else:
        n = 1025 if dim == 1 else 129
        grid, u, z, ref = build(n)
        change = float("inf")
        while n < budget:
            n = 2 * n - 1
            grid, u, z_new, ref = build(n)
            change = abs(z_new - z) / z_new
            z = z_new
            if change < rtol:
                break
    ratio = _box_ok(f0, radius, beta, ref)
    return GibbsDensity(f0, eta, sigma2, radius, grid, z, ref, ratio, u / z, change)


def gibbs_sample(g, n, rng=None):
    """Draw ``n`` samples from a :class:`GibbsDensity`."""
    return g.sample(n, rng)


# ---------------------------------------------------------------------------
# distances
# ---------------------------------------------------------------------------

def _quantile_coupling(a, b, p):
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise DomainError("empty sample set")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b) ** p))
    t = np.union1d(np.arange(1, a.size + 1) / a.size, np.arange(1, b.size + 1) / b.size)
    dt = np.diff(np.concatenate(([0.0], t)))
    mid = t - 0.5 * dt
    ia = np.minimum((mid * a.size).astype(np.int64), a.size - 1)
    ib = np.minimum((mid * b.size).astype(np.int64), b.size - 1)
    return float(np.sum(dt * np.abs(a[ia] - b[ib]) ** p))


def _quantile_vs_law(a, law, p, sub=8):
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    n = a.size
    t = (np.arange(n)[:, None] + (np.arange(sub) + 0.5)[None, :] / sub) / n
    q = law.ppf(t.ravel()).reshape(n, sub)
    return float(np.mean(np.abs(a[:, None] - q) ** p))


def _is_law(b):
    return hasattr(b, "ppf")


def w1_distance_1d(a, b):
    """1-Wasserstein distance between 1-D samples or samples and a law.

    ``b`` may be a sample array (exact quantile coupling) or any object with
    a ``ppf`` method (quantile quadrature, eight nodes per sample quantile).
    """
    return _quantile_vs_law(a, b, 1) if _is_law(b) else _quantile_coupling(a, b, 1)


def w2_distance_1d(a, b):
    """2-Wasserstein distance under the same couplings as :func:`w1_distance_1d`."""
    v = _quantile_vs_law(a, b, 2) if _is_law(b) else _quantile_coupling(a, b, 2)
    return math.sqrt(v)


def sliced_w1(a, b, slices=64, rng=None):
    """Average 1-D W1 over random projection directions in the plane."""
    slices = int(slices)
    if slices < 16:
        raise DomainError("need at least 16 slices")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DomainError("sliced_w1 expects two (n, d) sample arrays")
    gen = as_generator(rng)
    dirs = gen.standard_normal((slices, a.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return float(np.mean([w1_distance_1d(a @ u, b @ u) for u in dirs]))


def ks_distance(samples, cdf):
    """Kolmogorov-Smirnov distance to a CDF (callable or object with ``cdf``)."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if x.size == 0:
        raise DomainError("empty sample set")
    F = cdf.cdf if hasattr(cdf, "cdf") else cdf
    c = np.asarray(F(x), dtype=np.float64)
    n = x.size
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - c), np.max(c - (i - 1) / n)))


# ---------------------------------------------------------------------------
# test functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BumpFunction:
    """Cubic B-spline bump, C^2 and supported on ``|x - center| <= radius``.

    In several dimensions it is applied to the Euclidean distance.
    """

    radius: float
    center: float = 0.0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        r = np.abs(x - self.center) if x.ndim <= 1 else np.linalg.norm(x - self.center, axis=-1)
        s = 2.0 * r / self.radius
        inner = (4.0 - 6.0 * s * s + 3.0 * s * s * s) / 6.0
        t = np.maximum(2.0 - s, 0.0)
        return np.where(s < 1.0, inner, t * t * t / 6.0)


@dataclass(frozen=True)
class ConstantFunction:
    value: float = 1.0

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        shape = x.shape if x.ndim <= 1 else x.shape[:-1]
        return np.full(shape, float(self.value))


def bump_for_gibbs(eta, sigma2, f0_curvature=1.0, widths=6.0):
    """Bump whose support radius is ``widths`` Gibbs standard deviations.

    The Gibbs standard deviation of a quadratic well with curvature ``c`` is
    ``sqrt(eta sigma2 / (2 c))``.
    """
    return BumpFunction(widths * math.sqrt(eta * sigma2 / (2.0 * f0_curvature)))


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

MC_CHUNK = 10_000_000


@dataclass
class ResidualEstimate:
    estimate: float
    stderr: float
    n: int
    inconclusive: bool


def invariance_residual(f0, noise, eta, h, n_mc, rng=0, gibbs=None, x0_sampler=None,
                        precision=0.0, antithetic=None):
    """Monte Carlo estimate of ``E h(phi_hat(X0)) - E h(X0)``, ``X0`` Gibbs.

    Both terms share the same ``X0`` draw.  For symmetric noise each ``X0``
    is pushed through ``+zeta`` and ``-zeta`` and the two outcomes averaged.
    Work is split into chunks of ``MC_CHUNK`` samples, each with its own
    stream derived from the integer seed ``rng``.

    ``inconclusive`` is set when the standard error exceeds both a third of
    the estimate's magnitude and ``precision``.
    """
    if not isinstance(noise, NoiseModel) or not noise.isotropic:
        raise UnsupportedError("invariance_residual needs an isotropic noise model")
    seed = check_seed(rng)
    eta = float(eta)
    if gibbs is None and x0_sampler is None:
        gibbs = gibbs_density(f0, eta, noise.sigma2)
    sampler = x0_sampler or (lambda n_, gen: gibbs.sample(n_, gen))
    anti = noise.symmetric if antithetic is None else bool(antithetic)
    n_mc = int(n_mc)
    total = 0.0
    total_sq = 0.0
    for c, start in enumerate(range(0, n_mc, MC_CHUNK)):
        m = min(MC_CHUNK, n_mc - start)
        gen = chunk_generator(seed, c)
        x0 = np.asarray(sampler(m, gen), dtype=np.float64).reshape(m, -1)
        z = noise.sample(gen, m)
        drift = x0 - eta * f0.grad(x0).reshape(m, -1)
        hx = h(x0[:, 0] if f0.dim == 1 else x0)
        if anti:
            up = h((drift + eta * z)[:, 0] if f0.dim == 1 else drift + eta * z)
            dn = h((drift - eta * z)[:, 0] if f0.dim == 1 else drift - eta * z)
            d = 0.5 * (up + dn) - hx
        else:
            d = h((drift + eta * z)[:, 0] if f0.dim == 1 else drift + eta * z) - hx
        total += float(np.sum(d))
        total_sq += float(np.sum(d * d))
    mean = total / n_mc
    var = max(total_sq / n_mc - mean * mean, 0.0)
    se = math.sqrt(var / n_mc) if n_mc > 1 else float("inf")
    inconclusive = se > abs(mean) / 3.0 and se > precision
    return ResidualEstimate(mean, se, n_mc, inconclusive)


@dataclass
class MomentEstimate:
    estimate: float
    stderr: float
    n: int


def grad_second_moment(f0, eta, sigma2, n, rng=0, gibbs=None):
    """``E ||grad f0(X0)||^2`` for ``X0`` drawn from the rescaled Gibbs law."""
    if f0.growth is None:
        raise UnsupportedError(f"{f0.name}: growth exponents unknown")
    g = gibbs if gibbs is not None else gibbs_density(f0, eta, sigma2)
    seed = check_seed(rng)
    n = int(n)
    total = total_sq = 0.0
    for c, start in enumerate(range(0, n, MC_CHUNK)):
        m = min(MC_CHUNK, n - start)
        x = g.sample(m, chunk_generator(seed, c)).reshape(m, -1)
        v = np.sum(f0.grad(x).reshape(m, -1) ** 2, axis=1)
        total += float(v.sum())
        total_sq += float((v * v).sum())
    mean = total / n
    se = math.sqrt(max(total_sq / n - mean * mean, 0.0) / n)
    return MomentEstimate(mean, se, n)


def growth_exponent(f0):
    """Predicted moment exponent ``(2 k2 - 1) / k1`` from the growth data."""
    if f0.growth is None:
        raise UnsupportedError(f"{f0.name}: growth exponents unknown")
    k1, k2 = f0.growth
    return (2.0 * k2 - 1.0) / k1


@dataclass(eq=False)
class GaussianApprox:
    """Second-order Gaussian approximation around a nondegenerate minimizer."""

    center: np.ndarray
    precision: np.ndarray
    order: int = 2

    @property
    def covariance(self):
        return np.linalg.inv(self.precision)

    @property
    def dim(self):
        return self.center.size

    def pdf(self, x):
        X, _ = as_batch(x, self.dim)
        d = X - self.center
        q = np.einsum("ij,jk,ik->i", d, self.precision, d)
        norm = math.sqrt(np.linalg.det(self.precision) / (2 * math.pi) ** self.dim)
        return norm * np.exp(-0.5 * q)

    def cdf(self, x):
        if self.dim != 1:
            raise UnsupportedError("cdf defined for 1-D approximations only")
        sd = math.sqrt(self.covariance[0, 0])
        z = (np.asarray(x, dtype=np.float64) - self.center[0]) / (sd * math.sqrt(2.0))
        return 0.5 * (1.0 + erf(z))

    def ppf(self, p):
        return self.center[0] + math.sqrt(self.covariance[0, 0]) * ndtri(p)


def gaussian_approx(f0, eta, sigma2, minimizer):
    """Gaussian with covariance ``eta sigma2 (2 H)^-1``, ``H`` the Hessian at ``minimizer``."""
    x = np.asarray(minimizer, dtype=np.float64).reshape(f0.dim)
    H = np.atleast_2d(f0.hess(x.reshape(1, -1))[0])
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise UnsupportedError(
            f"{f0.name}: Hessian at {x} is not positive definite") from None
    if np.linalg.cond(H) > 1e12:
        raise UnsupportedError(f"{f0.name}: Hessian at {x} is numerically singular")
    return GaussianApprox(x, 2.0 * H / (float(eta) * float(sigma2)))
