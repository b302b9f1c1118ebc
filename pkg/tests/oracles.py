"""Independent reference computations used by the tests.

Each oracle takes a different route from the package code: closed forms,
symbolic differentiation, Gauss quadrature on analytic densities or scipy.
"""
import math

import numpy as np
import sympy as sp
from scipy import integrate

LN2 = math.log(2.0)

# frozen values, regenerated by the functions below
M_SINCOS2D = -0.26686878174244
GD_STEP_QUARTIC_SIN = 0.58590610061203382494
RESIDUAL_ETAS = (0.2, 0.1, 0.05, 0.025)
RESIDUALS = (-3.6045936887035834e-03, -4.8009952011962564e-04,
             -6.26599893133184e-05, -8.074905497590379e-06)


def m_sincos2d():
    """E ln max(|sin U1|, |cos U2|): |sin U| has CDF (2/pi) arcsin t on [0, 1]."""
    F = lambda t: 2.0 / math.pi * math.asin(t)
    dens = lambda t: 2.0 * F(t) * 2.0 / (math.pi * math.sqrt(1.0 - t * t))
    return integrate.quad(lambda t: math.log(t) * dens(t), 0.0, 1.0, limit=200)[0]


def m_quasi_torus():
    """Torus average of ln|sin a + 2 sin b| in closed form over a.

    For fixed ``b`` with ``c = 2 sin b``, the average of ``ln|sin a + c|``
    over ``a`` is ``-ln 2`` when ``|c| <= 1`` and
    ``ln((|c| + sqrt(c^2 - 1)) / 2)`` otherwise.
    """
    def inner(b):
        c = abs(2.0 * math.sin(b))
        return -LN2 if c <= 1.0 else math.log((c + math.sqrt(c * c - 1.0)) / 2.0)
    pts = [math.pi / 6, 5 * math.pi / 6, 7 * math.pi / 6, 11 * math.pi / 6]
    return integrate.quad(inner, 0.0, 2 * math.pi, points=pts, limit=200)[0] / (2 * math.pi)


def bump(x, radius):
    s = 2.0 * np.abs(x) / radius
    return np.where(s < 1.0, (4 - 6 * s * s + 3 * s ** 3) / 6, np.maximum(2 - s, 0.0) ** 3 / 6)


def invariance_residual_quadratic(eta, radius, nu=2000, nodes=200):
    """E h(phi_hat(X)) - E h(X) for f0 = x^2/2, zeta = -cos(2 pi U), X ~ N(0, eta/4).

    ``phi_hat(X) = (1 - eta) X + eta zeta`` has density ``E_U phi_s(y - eta zeta)``;
    both expectations are integrals of the piecewise-cubic bump against a
    smooth density, done with Gauss-Legendre on each polynomial piece.
    """
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    u = (np.arange(nu) + 0.5) / nu
    z = -np.cos(2 * np.pi * u)
    sd = math.sqrt(eta / 4.0)
    s = (1.0 - eta) * sd
    gauss = lambda y, w: np.exp(-y * y / (2 * w * w)) / (w * math.sqrt(2 * math.pi))
    r = radius
    total = 0.0
    for a, b in ((-r, -r / 2), (-r / 2, 0.0), (0.0, r / 2), (r / 2, r)):
        y = 0.5 * (a + b) + 0.5 * (b - a) * gx
        w = 0.5 * (b - a) * gw
        h = bump(y, r)
        total += np.sum(w * h * gauss(y[:, None] - eta * z[None, :], s).mean(axis=1))
        total -= np.sum(w * h * gauss(y, sd))
    return float(total)


def modified_equation_terms():
    """Symbolic g2, g3 for f = x^2/2 + eps sin(x/eps) by matching the flow.

    The time-eta flow of ``x' = F`` with ``F = g + eta g2 + eta^2 g3`` is
    expanded to third order in ``eta`` and matched with one GD step
    ``x + eta g``.
    """
    x, eps, eta = sp.symbols("x epsilon eta", positive=True)
    f = x ** 2 / 2 + eps * sp.sin(x / eps)
    g = -sp.diff(f, x)
    a2, a3 = sp.Function("a2")(x), sp.Function("a3")(x)
    F = g + eta * a2 + eta ** 2 * a3
    # Taylor coefficients of the flow: x(t) = x + t F + t^2/2 F'F + t^3/6 (F''F^2 + F'^2 F)
    Fp = sp.diff(F, x)
    Fpp = sp.diff(F, x, 2)
    flow = x + eta * F + eta ** 2 / 2 * Fp * F + eta ** 3 / 6 * (Fpp * F ** 2 + Fp ** 2 * F)
    series = sp.expand(flow - (x + eta * g))
    c2 = series.coeff(eta, 2)
    sol2 = sp.solve(c2, a2)[0]
    c3 = series.coeff(eta, 3).subs(sp.diff(a2, x), sp.diff(sol2, x)).subs(a2, sol2)
    sol3 = sp.solve(c3, a3)[0]
    fn = lambda e: sp.lambdify((x, eps), e, "numpy")
    return fn(g), fn(sp.simplify(sol2)), fn(sp.simplify(sol3))


def quartic_moment_exponent():
    """d ln E[x^6] / d ln eta for density exp(-x^4 / (2 eta sigma2)), by quadrature."""
    def moment(eta):
        w = lambda x: math.exp(-x ** 4 / (eta))
        num = integrate.quad(lambda x: x ** 6 * w(x), -np.inf, np.inf)[0]
        den = integrate.quad(w, -np.inf, np.inf)[0]
        return num / den
    return math.log(moment(0.1) / moment(0.05)) / math.log(2.0)
