"""Multiscale objectives ``f = f0 + f1_eps`` and their noise models.

Every catalog entry carries batched numba kernels with the signature
``kernel(X, params, out)`` where ``X`` has shape ``(m, d)``.  Value kernels
fill ``out[m]``, gradient kernels ``out[m, d]``, Hessian kernels
``out[m, d, d]`` and third-derivative kernels (1-D entries only) ``out[m]``.
The same kernels drive the numpy-facing methods and the compiled iteration
loops in :mod:`chaotic_gd.dynamics`, so there is a single source of truth for
each formula.

Micro-scale kernels receive ``params[0] == epsilon``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np

from .errors import CatalogError, DomainError, UnsupportedError

SQRT2 = math.sqrt(2.0)
TWO_PI = 2.0 * math.pi
MODULATION = math.sqrt(3.0) / 5.0


# ---------------------------------------------------------------------------
# macro kernels
# ---------------------------------------------------------------------------

@nb.njit(cache=True)
def _quadratic_value(X, p, out):
    for j in range(X.shape[0]):
        out[j] = 0.5 * X[j, 0] * X[j, 0]


@nb.njit(cache=True)
def _quadratic_grad(X, p, out):
    for j in range(X.shape[0]):
        out[j, 0] = X[j, 0]


@nb.njit(cache=True)
def _quadratic_hess(X, p, out):
    for j in range(X.shape[0]):
        out[j, 0, 0] = 1.0


@nb.njit(cache=True)
def _quadratic_d3(X, p, out):
    for j in range(X.shape[0]):
        out[j] = 0.0


@nb.njit(cache=True)
def _quartic_value(X, p, out):
    for j in range(X.shape[0]):
        x2 = X[j, 0] * X[j, 0]
        out[j] = 0.25 * x2 * x2


@nb.njit(cache=True)
def _quartic_grad(X, p, out):
    for j in range(X.shape[0]):
        x = X[j, 0]
        out[j, 0] = x * x * x


@nb.njit(cache=True)
def _quartic_hess(X, p, out):
    for j in range(X.shape[0]):
        out[j, 0, 0] = 3.0 * X[j, 0] * X[j, 0]


@nb.njit(cache=True)
def _quartic_d3(X, p, out):
    for j in range(X.shape[0]):
        out[j] = 6.0 * X[j, 0]


@nb.njit(cache=True)
def _double_well_value(X, p, out):
    k = p[0]
    for j in range(X.shape[0]):
        s = X[j, 0] * X[j, 0] - 1.0
        out[j] = k * s * s


@nb.njit(cache=True)
def _double_well_grad(X, p, out):
    k = p[0]
    for j in range(X.shape[0]):
        x = X[j, 0]
        out[j, 0] = 4.0 * k * x * (x * x - 1.0)


@nb.njit(cache=True)
def _double_well_hess(X, p, out):
    k = p[0]
    for j in range(X.shape[0]):
        x = X[j, 0]
        out[j, 0, 0] = k * (12.0 * x * x - 4.0)


@nb.njit(cache=True)
def _double_well_d3(X, p, out):
    k = p[0]
    for j in range(X.shape[0]):
        out[j] = 24.0 * k * X[j, 0]


@nb.njit(cache=True)
def _matyas_value(X, p, out):
    for j in range(X.shape[0]):
        x = X[j, 0]
        y = X[j, 1]
        out[j] = 0.26 * (x * x + y * y) + 0.48 * x * y


@nb.njit(cache=True)
def _matyas_grad(X, p, out):
    for j in range(X.shape[0]):
        x = X[j, 0]
        y = X[j, 1]
        out[j, 0] = 0.52 * x + 0.48 * y
        out[j, 1] = 0.48 * x + 0.52 * y


@nb.njit(cache=True)
def _matyas_hess(X, p, out):
    for j in range(X.shape[0]):
        out[j, 0, 0] = 0.52
        out[j, 0, 1] = 0.48
        out[j, 1, 0] = 0.48
        out[j, 1, 1] = 0.52


# ---------------------------------------------------------------------------
# micro kernels (p[0] is epsilon)
# ---------------------------------------------------------------------------

@nb.njit(cache=True)
def _zero_value(X, p, out):
    for j in range(X.shape[0]):
        out[j] = 0.0


@nb.njit(cache=True)
def _zero_grad(X, p, out):
    for j in range(X.shape[0]):
        for i in range(X.shape[1]):
            out[j, i] = 0.0


@nb.njit(cache=True)
def _zero_hess(X, p, out):
    for j in range(X.shape[0]):
        for i in range(X.shape[1]):
            for k in range(X.shape[1]):
                out[j, i, k] = 0.0


@nb.njit(cache=True)
def _sin_value(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j] = eps * math.sin(X[j, 0] / eps)


@nb.njit(cache=True)
def _sin_grad(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j, 0] = math.cos(X[j, 0] / eps)


@nb.njit(cache=True)
def _sin_hess(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j, 0, 0] = -math.sin(X[j, 0] / eps) / eps


@nb.njit(cache=True)
def _sin_d3(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j] = -math.cos(X[j, 0] / eps) / (eps * eps)


@nb.njit(cache=True)
def _cosneg_value(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j] = -eps * math.cos(X[j, 0] / eps)


@nb.njit(cache=True)
def _cosneg_grad(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j, 0] = math.sin(X[j, 0] / eps)


@nb.njit(cache=True)
def _cosneg_hess(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j, 0, 0] = math.cos(X[j, 0] / eps) / eps


@nb.njit(cache=True)
def _cosneg_d3(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j] = -math.sin(X[j, 0] / eps) / (eps * eps)


@nb.njit(cache=True)
def _quasi_value(X, p, out):
    eps = p[0]
    r2 = math.sqrt(2.0)
    for j in range(X.shape[0]):
        y = X[j, 0] / eps
        out[j] = eps * (math.sin(y) + math.sin(r2 * y))


@nb.njit(cache=True)
def _quasi_grad(X, p, out):
    eps = p[0]
    r2 = math.sqrt(2.0)
    for j in range(X.shape[0]):
        y = X[j, 0] / eps
        out[j, 0] = math.cos(y) + r2 * math.cos(r2 * y)


@nb.njit(cache=True)
def _quasi_hess(X, p, out):
    eps = p[0]
    r2 = math.sqrt(2.0)
    for j in range(X.shape[0]):
        y = X[j, 0] / eps
        out[j, 0, 0] = -(math.sin(y) + 2.0 * math.sin(r2 * y)) / eps


@nb.njit(cache=True)
def _quasi_d3(X, p, out):
    eps = p[0]
    r2 = math.sqrt(2.0)
    for j in range(X.shape[0]):
        y = X[j, 0] / eps
        out[j] = -(math.cos(y) + 2.0 * r2 * math.cos(r2 * y)) / (eps * eps)


@nb.njit(cache=True)
def _sincos2d_value(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j] = eps * (math.sin(X[j, 0] / eps) + math.cos(X[j, 1] / eps))


@nb.njit(cache=True)
def _sincos2d_grad(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j, 0] = math.cos(X[j, 0] / eps)
        out[j, 1] = -math.sin(X[j, 1] / eps)


@nb.njit(cache=True)
def _sincos2d_hess(X, p, out):
    eps = p[0]
    for j in range(X.shape[0]):
        out[j, 0, 0] = -math.sin(X[j, 0] / eps) / eps
        out[j, 0, 1] = 0.0
        out[j, 1, 0] = 0.0
        out[j, 1, 1] = -math.cos(X[j, 1] / eps) / eps


@nb.njit(cache=True)
def _modulated_value(X, p, out):
    eps = p[0]
    a = math.sqrt(3.0) / 5.0
    for j in range(X.shape[0]):
        x = X[j, 0]
        out[j] = eps * math.cos(1.0 + math.cos(a * x) * x / eps)


@nb.njit(cache=True)
def _modulated_grad(X, p, out):
    eps = p[0]
    a = math.sqrt(3.0) / 5.0
    for j in range(X.shape[0]):
        x = X[j, 0]
        c = math.cos(a * x)
        theta = 1.0 + c * x / eps
        out[j, 0] = -math.sin(theta) * (c - a * x * math.sin(a * x))


@nb.njit(cache=True)
def _modulated_hess(X, p, out):
    eps = p[0]
    a = math.sqrt(3.0) / 5.0
    for j in range(X.shape[0]):
        x = X[j, 0]
        c = math.cos(a * x)
        s = math.sin(a * x)
        theta = 1.0 + c * x / eps
        u = c - a * x * s
        out[j, 0, 0] = (-math.cos(theta) * u * u / eps
                        + math.sin(theta) * (2.0 * a * s + a * a * x * c))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

def as_batch(x, dim):
    """Return ``(X, single)`` with ``X`` a C-contiguous ``(m, dim)`` float array."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 0 or (arr.ndim == 1 and dim > 1)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if dim > 1 else arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DomainError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return np.ascontiguousarray(arr), single


class _KernelMixin:
    """numpy-facing wrappers over the batched kernels."""

    dim: int
    params: np.ndarray

    def _call(self, kernel, x, shape_tail):
        if kernel is None:
            raise UnsupportedError(f"{self.name}: derivative not available")
        X, single = as_batch(x, self.dim)
        out = np.empty((X.shape[0],) + shape_tail)
        kernel(X, self.params, out)
        return out[0] if single else out

    def value(self, x):
        return self._call(self.value_kernel, x, ())

    def grad(self, x):
        return self._call(self.grad_kernel, x, (self.dim,))

    def hess(self, x):
        return self._call(self.hess_kernel, x, (self.dim, self.dim))

    def third(self, x):
        """Third derivative; 1-D entries only."""
        return self._call(self.d3_kernel, x, ())

    __call__ = value


@dataclass(frozen=True, eq=False)
class MacroFunction(_KernelMixin):
    """Macroscopic part ``f0`` of the landscape.

    ``smoothness`` is the global Lipschitz constant of the gradient (``None``
    when ``f0`` is not globally L-smooth), ``strong_convexity`` the modulus
    ``mu``.  ``growth`` holds ``(k1, k2)`` with
    ``f0(x) - f0(x*) >= C1 |x - x*|**k1`` and ``|f0'(x)| <= C2 |x - x*|**k2``.
    """

    name: str
    dim: int
    value_kernel: Callable
    grad_kernel: Callable
    hess_kernel: Optional[Callable] = None
    d3_kernel: Optional[Callable] = None
    params: np.ndarray = field(default_factory=lambda: np.zeros(1))
    smoothness: Optional[float] = None
    strong_convexity: Optional[float] = None
    growth: Optional[tuple] = None
    minimizers: tuple = ()


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Bounded zero-mean noise ``zeta`` built from ``n_uniforms`` uniforms.

    ``transform`` maps an ``(m, n_uniforms)`` array of U[0, 1) variates to
    ``(m, dim)`` noise vectors.  Routing every draw through uniforms keeps the
    noise streams counter-addressable (see :mod:`chaotic_gd.rng`).
    """

    dim: int
    n_uniforms: int
    transform: Callable[[np.ndarray], np.ndarray]
    bound: float
    covariance: np.ndarray
    symmetric: bool = True
    name: str = ""

    @property
    def isotropic(self):
        c = self.covariance
        return bool(np.allclose(c, c[0, 0] * np.eye(self.dim), rtol=0, atol=1e-15))

    @property
    def sigma2(self):
        if not self.isotropic:
            raise UnsupportedError(f"noise model {self.name!r} is not isotropic")
        return float(self.covariance[0, 0])

    def sample(self, rng, n):
        u = rng.random((int(n), self.n_uniforms))
        return self.transform(u)


def zero_noise(dim=1):
    """Degenerate noise ``zeta == 0``; useful for fixed-point checks."""
    return NoiseModel(dim, 1, lambda u: np.zeros((u.shape[0], dim)), 0.0,
                      np.zeros((dim, dim)), True, "zero")


@dataclass(frozen=True)
class MOracle:
    """Quadrature description for the log-Hessian-norm constant ``m``.

    ``cell`` lists the integration box in scaled coordinates ``y = x / eps``;
    ``log_norm(*axes)`` returns ``ln ||eps * hess f1(eps * y)||_2`` on the
    broadcast grid of the per-axis node arrays.
    """

    cell: tuple
    log_norm: Callable
    initial_nodes: int = 1 << 14


@dataclass(frozen=True, eq=False)
class MicroScale(_KernelMixin):
    """Micro-scale term ``f1_eps``.

    ``bounds`` records the catalog constants ``(C, R, A)`` with
    ``|f1| <= C eps``, ``|grad f1| <= R`` and ``eps ||hess f1||_2 <= A`` on
    ``bounds_domain``.
    """

    kind: str
    epsilon: float
    dim: int
    value_kernel: Callable
    grad_kernel: Callable
    hess_kernel: Optional[Callable] = None
    d3_kernel: Optional[Callable] = None
    noise: Optional[NoiseModel] = None
    m_oracle: Optional[MOracle] = None
    bounds: Optional[tuple] = None
    bounds_domain: tuple = (-10.0, 10.0)
    period: Optional[float] = None
    name: str = ""

    @property
    def params(self):
        return np.array([self.epsilon])


@dataclass(frozen=True, eq=False)
class MultiscaleObjective:
    """``f = macro + micro``; ``micro`` may be ``None`` for a pure macro landscape."""

    macro: MacroFunction
    micro: Optional[MicroScale] = None

    def __post_init__(self):
        if self.micro is not None and self.micro.dim != self.macro.dim:
            raise DomainError(
                f"dimension mismatch: macro {self.macro.dim}, micro {self.micro.dim}")

    @property
    def dim(self):
        return self.macro.dim

    @property
    def epsilon(self):
        return None if self.micro is None else self.micro.epsilon

    @property
    def micro_kernels(self):
        """``(grad, hess, params)`` for the compiled loops; zeros when no micro."""
        if self.micro is None:
            return _zero_grad, _zero_hess, np.zeros(1)
        return self.micro.grad_kernel, self.micro.hess_kernel, self.micro.params

    def value(self, x):
        v = self.macro.value(x)
        return v if self.micro is None else v + self.micro.value(x)

    def grad(self, x):
        g = self.macro.grad(x)
        return g if self.micro is None else g + self.micro.grad(x)

    def hess(self, x):
        h = self.macro.hess(x)
        return h if self.micro is None else h + self.micro.hess(x)

    def third(self, x):
        t = self.macro.third(x)
        return t if self.micro is None else t + self.micro.third(x)

    __call__ = value

    def describe(self):
        micro = None if self.micro is None else {"kind": self.micro.kind,
                                                 "epsilon": self.micro.epsilon}
        return {"macro": self.macro.name, "micro": micro}


# ---------------------------------------------------------------------------
# catalogs
# ---------------------------------------------------------------------------

MACRO_IDS = ("quadratic", "quartic", "matyas", "double-well")
MICRO_IDS = ("sin", "cos-neg", "quasi", "sincos2d", "modulated")

MATYAS_HESSIAN = np.array([[0.52, 0.48], [0.48, 0.52]])
K_CRITICAL = 3.0 * math.sqrt(3.0) / 8.0


def catalog_macro(id, k=None):
    """Return a catalog macro landscape.

    Parameters
    ----------
    id : {"quadratic", "quartic", "matyas", "double-well"}
        Catalog id.  ``"double-well:k=5"`` is accepted as shorthand.
    k : float, optional
        Barrier parameter of ``k (x^2 - 1)^2``; defaults to 1.
    """
    name, kw = parse_catalog_id(id)
    if "k" in kw:
        if k is not None and float(k) != kw["k"]:
            raise CatalogError(f"conflicting k for {id!r}")
        k = kw.pop("k")
    if kw:
        raise CatalogError(f"unexpected parameters for {name!r}: {sorted(kw)}")
    if k is not None and name != "double-well":
        raise CatalogError(f"{name!r} takes no k parameter")
    if name == "quadratic":
        return MacroFunction("quadratic", 1, _quadratic_value, _quadratic_grad,
                             _quadratic_hess, _quadratic_d3, smoothness=1.0,
                             strong_convexity=1.0, growth=(2, 1), minimizers=((0.0,),))
    if name == "quartic":
        return MacroFunction("quartic", 1, _quartic_value, _quartic_grad,
                             _quartic_hess, _quartic_d3, growth=(4, 3),
                             minimizers=((0.0,),))
    if name == "matyas":
        lo, hi = np.linalg.eigvalsh(MATYAS_HESSIAN)
        return MacroFunction("matyas", 2, _matyas_value, _matyas_grad, _matyas_hess,
                             smoothness=float(hi), strong_convexity=float(lo),
                             growth=(2, 1), minimizers=((0.0, 0.0),))
    if name == "double-well":
        k = 1.0 if k is None else float(k)
        if not k > 0:
            raise CatalogError(f"double-well needs k > 0, got {k}")
        return MacroFunction(f"double-well(k={k:g})", 1, _double_well_value,
                             _double_well_grad, _double_well_hess, _double_well_d3,
                             params=np.array([k]), minimizers=((-1.0,), (1.0,)))
    raise CatalogError(f"unknown macro id {id!r}; expected one of {MACRO_IDS}")


def parse_catalog_id(spec):
    """Split ``"name:key=val,key=val"`` into ``(name, {key: float})``."""
    if not isinstance(spec, str):
        raise CatalogError(f"catalog id must be a string, got {spec!r}")
    name, _, rest = spec.partition(":")
    kw = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, sep, val = item.partition("=")
        if not sep:
            raise CatalogError(f"malformed parameter {item!r} in {spec!r}")
        try:
            kw[key.strip()] = float(val)
        except ValueError:
            raise CatalogError(f"non-numeric parameter {item!r} in {spec!r}") from None
    return name.strip(), kw


def _cos_noise(u):
    return -np.cos(TWO_PI * u)


def _sin_noise_t(u):
    return -np.sin(TWO_PI * u)


def _quasi_noise(u):
    return -(np.cos(TWO_PI * u[:, :1]) + SQRT2 * np.cos(TWO_PI * u[:, 1:2]))


def _sincos2d_noise(u):
    return np.column_stack((-np.cos(TWO_PI * u[:, 0]), np.sin(TWO_PI * u[:, 1])))


def _log_abs_sin(y):
    return np.log(np.abs(np.sin(y)))


def _log_abs_cos(y):
    return np.log(np.abs(np.cos(y)))


def _log_quasi(y):
    return np.log(np.abs(np.sin(y) + 2.0 * np.sin(SQRT2 * y)))


def _log_sincos2d(y1, y2):
    return np.log(np.maximum(np.abs(np.sin(y1)), np.abs(np.cos(y2))))


# window over which the quasi-periodic average is taken, in units of 2*pi
QUASI_CELL_PERIODS = 10_000


def catalog_micro(id, epsilon):
    """Return a catalog micro-scale term with its noise model and m-oracle.

    ``"modulated"`` violates both regularity conditions and therefore comes
    without a noise model or m-oracle.
    """
    epsilon = float(epsilon)
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise DomainError(f"epsilon must be positive and finite, got {epsilon}")
    one = np.eye(1)
    if id == "sin":
        noise = NoiseModel(1, 1, _cos_noise, 1.0, 0.5 * one, True, "sin")
        return MicroScale("periodic-sin", epsilon, 1, _sin_value, _sin_grad, _sin_hess,
                          _sin_d3, noise, MOracle(((0.0, TWO_PI),), _log_abs_sin),
                          (1.0, 1.0, 1.0), period=TWO_PI * epsilon, name="sin")
    if id == "cos-neg":
        noise = NoiseModel(1, 1, _sin_noise_t, 1.0, 0.5 * one, True, "cos-neg")
        return MicroScale("periodic-sin", epsilon, 1, _cosneg_value, _cosneg_grad,
                          _cosneg_hess, _cosneg_d3, noise,
                          MOracle(((0.0, TWO_PI),), _log_abs_cos),
                          (1.0, 1.0, 1.0), period=TWO_PI * epsilon, name="cos-neg")
    if id == "quasi":
        noise = NoiseModel(1, 2, _quasi_noise, 1.0 + SQRT2, 1.5 * one, True, "quasi")
        oracle = MOracle(((0.0, TWO_PI * QUASI_CELL_PERIODS),), _log_quasi,
                         initial_nodes=1 << 21)
        return MicroScale("quasiperiodic-sum", epsilon, 1, _quasi_value, _quasi_grad,
                          _quasi_hess, _quasi_d3, noise, oracle,
                          (2.0, 1.0 + SQRT2, 3.0), name="quasi")
    if id == "sincos2d":
        noise = NoiseModel(2, 2, _sincos2d_noise, SQRT2, 0.5 * np.eye(2), True,
                           "sincos2d")
        oracle = MOracle(((0.0, TWO_PI), (0.0, TWO_PI)), _log_sincos2d,
                         initial_nodes=1 << 10)
        return MicroScale("periodic-sin", epsilon, 2, _sincos2d_value, _sincos2d_grad,
                          _sincos2d_hess, None, noise, oracle, (2.0, SQRT2, 1.0),
                          period=TWO_PI * epsilon, name="sincos2d")
    if id == "modulated":
        r = 1.0 + 10.0 * MODULATION
        return MicroScale("modulated-aperiodic", epsilon, 1, _modulated_value,
                          _modulated_grad, _modulated_hess, None, None, None,
                          (1.0, r, r * r + 2.0 * MODULATION * epsilon
                           + 10.0 * MODULATION ** 2 * epsilon), name="modulated")
    raise CatalogError(f"unknown micro id {id!r}; expected one of {MICRO_IDS}")


def make_objective(macro, micro=None, epsilon=None, k=None):
    """Build a :class:`MultiscaleObjective` from catalog ids."""
    f0 = macro if isinstance(macro, MacroFunction) else catalog_macro(macro, k=k)
    if micro is None or isinstance(micro, MicroScale):
        return MultiscaleObjective(f0, micro)
    if epsilon is None:
        raise DomainError("epsilon is required with a micro-scale id")
    return MultiscaleObjective(f0, catalog_micro(micro, epsilon))


# ---------------------------------------------------------------------------
# Condition-2 constant
# ---------------------------------------------------------------------------

SINGULAR_FLOOR = math.log(1e-12)
_CHUNK = 1 << 22


def _midpoint_nodes(lo, hi, n):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def _midpoint_mean(oracle, n):
    """Mean of ``log_norm`` over the midpoint grid with ``n`` nodes per axis.

    Nodes closer than ~1e-12 to a zero of the Hessian norm are excluded.
    """
    axes = [_midpoint_nodes(lo, hi, n) for lo, hi in oracle.cell]
    total = 0.0
    count = 0
    if len(axes) == 1:
        for start in range(0, n, _CHUNK):
            v = oracle.log_norm(axes[0][start:start + _CHUNK])
            keep = v > SINGULAR_FLOOR
            total += float(np.sum(v[keep]))
            count += int(np.count_nonzero(keep))
    elif len(axes) == 2:
        rows = max(1, _CHUNK // n)
        y2 = axes[1][None, :]
        for start in range(0, n, rows):
            v = oracle.log_norm(axes[0][start:start + rows, None], y2)
            keep = v > SINGULAR_FLOOR
            total += float(np.sum(v[keep]))
            count += int(np.count_nonzero(keep))
    else:
        raise UnsupportedError("m-oracle quadrature supports 1-D and 2-D cells")
    return total / count


def m_constant(micro, tol=1e-4, max_nodes=1 << 25):
    """Cell average of ``ln ||eps * hess f1||_2`` by refined midpoint quadrature.

    The node count per axis doubles until successive estimates differ by less
    than ``tol`` (or the total node budget ``max_nodes`` is reached).
    """
    oracle = micro.m_oracle if isinstance(micro, MicroScale) else micro
    if oracle is None:
        raise UnsupportedError(
            f"micro-scale {getattr(micro, 'name', micro)!r} carries no m-oracle")
    d = len(oracle.cell)
    n = oracle.initial_nodes
    prev = _midpoint_mean(oracle, n)
    while (2 * n) ** d <= max_nodes:
        n *= 2
        cur = _midpoint_mean(oracle, n)
        if abs(cur - prev) < tol:
            return cur
        prev = cur
    return prev


# ---------------------------------------------------------------------------
# gradient check
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_point: np.ndarray
    n_points: int
    step: float
    tolerance: float

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def grad_check(obj, points, step=None, tolerance=1e-5):
    """Compare analytic gradients with central differences of the value.

    The error at each point is ``||g_fd - g|| / max(||g||, 1)``.  ``step``
    defaults to ``eps / 1000`` (1e-6 without a micro-scale) and must resolve
    the micro-scale, i.e. ``step <= eps / 100``.
    """
    eps = getattr(obj, "epsilon", None)
    if step is None:
        step = 1e-6 if eps is None else eps / 1000.0
    if eps is not None and step > eps / 100.0:
        raise DomainError(f"step {step:g} does not resolve epsilon {eps:g}")
    X, _ = as_batch(points, obj.dim)
    g = np.atleast_2d(obj.grad(X))
    fd = np.empty_like(g)
    for i in range(obj.dim):
        e = np.zeros(obj.dim)
        e[i] = step
        fd[:, i] = (np.atleast_1d(obj.value(X + e)) - np.atleast_1d(obj.value(X - e))) / (2 * step)
    err = np.linalg.norm(fd - g, axis=1) / np.maximum(np.linalg.norm(g, axis=1), 1.0)
    worst = int(np.argmax(err))
    return GradCheckReport(float(err[worst]), X[worst].copy(), X.shape[0], step, tolerance)
