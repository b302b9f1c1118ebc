import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from chaotic_gd.chaos import (APERIODIC, DIVERGED, K_CRITICAL, MIN_LYAPUNOV_STEPS,
                              Period3Certificate, bifurcation_scan, chaos_threshold,
                              coupling_bound, coupling_rate, detect_period, escape_scan,
                              find_period3, lyapunov, modified_eq_terms, s_connectivity,
                              well_set_components)
from chaotic_gd.dynamics import MapSpec, iterate
from chaotic_gd.errors import DomainError, UnsupportedError
from chaotic_gd.objective import catalog_macro, catalog_micro, make_objective

# -- Lyapunov ------------------------------------------------------------------

def test_lyapunov_linear_map_is_exact():
    est = lyapunov(make_objective("quadratic"), 0.1, 1.0, MIN_LYAPUNOV_STEPS)
    assert est.lam == pytest.approx(math.log(0.9), abs=1e-12)
    assert est.residual is None


def test_lyapunov_matyas_linear_map():
    est = lyapunov(make_objective("matyas"), 0.1, [0.3, 0.1], MIN_LYAPUNOV_STEPS)
    assert est.lam == pytest.approx(math.log(1 - 0.1 * 0.04), abs=1e-12)


def test_lyapunov_sin_residual_near_minus_ln2():
    est = lyapunov(make_objective("quadratic", "sin", 1e-5), 0.1, 0.3, 200_000)
    assert est.residual == pytest.approx(-oracles.LN2, abs=0.05)
    assert est.m_reference == pytest.approx(-oracles.LN2, abs=1e-3)
    d = est.to_dict()
    assert d["residual"] == est.residual and d["n"] == 200_000


def test_lyapunov_requires_enough_steps():
    with pytest.raises(DomainError):
        lyapunov(make_objective("quadratic", "sin", 1e-5), 0.1, 0.3, 1000)


def test_chaos_threshold_examples():
    assert chaos_threshold(-math.log(2), 1e-3) == pytest.approx(2e-3)
    assert chaos_threshold(oracles.M_SINCOS2D, 1e-5) == pytest.approx(1.30587e-5, rel=1e-5)
    assert chaos_threshold(0.0, 1e-4) == 1e-4
    with pytest.raises(DomainError):
        chaos_threshold(float("nan"), 1e-3)


# -- bifurcation ----------------------------------------------------------------

def test_detect_period():
    pts = np.tile([0.1, 0.5, 0.9], 20)
    assert detect_period(pts, 1e-12, 10) == 3
    assert detect_period(np.ones(10), 0.0, 4) == 1
    assert detect_period(np.random.default_rng(0).random(50), 1e-9, 10) is None


def test_bifurcation_quadratic_is_period_one_then_diverges():
    d = bifurcation_scan(make_objective("quadratic"), [0.5, 1.5, 2.5], 1.0,
                         burn_in=1000, record=64)
    assert d.periods == [1, 1, DIVERGED]


def test_bifurcation_period_doubling_on_sin():
    eps = 1e-3
    obj = make_objective("quadratic", "sin", eps)
    grid = eps * np.array([1.0, 2.5, 3.48, 4.5])
    d = bifurcation_scan(obj, grid, 0.0, burn_in=20_000, record=512)
    assert d.periods[:3] == [1, 2, 4]
    assert d.periods[3] == APERIODIC
    assert d.first(2) == pytest.approx(2.5e-3)
    assert d.windows(1) == [(1e-3, 1e-3)]


def test_bifurcation_csv(tmp_path):
    d = bifurcation_scan(make_objective("quadratic"), [0.5], 1.0, burn_in=10, record=8)
    d.to_csv(tmp_path / "p.csv", tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines() == ["eta,period", "0.5,1"]
    assert len((tmp_path / "p.csv").read_text().splitlines()) == 9


def test_bifurcation_rejects_unsorted_grid():
    with pytest.raises(DomainError):
        bifurcation_scan(make_objective("quadratic"), [0.5, 0.1], 1.0)


# -- period 3 ----------------------------------------------------------------

def test_period3_found_in_chaotic_regime():
    eps = 1e-3
    obj = make_objective("quadratic", "sin", eps)
    cert = find_period3(obj, 20 * eps, (-0.05, 0.05))
    assert cert is not None and cert.holds()
    # independent re-check by stepping
    orb = iterate(MapSpec("gd", obj, 20 * eps), cert.a, 3).x
    assert np.array_equal(orb, [cert.a, cert.b, cert.c, cert.d])


def test_period3_absent_for_contraction():
    assert find_period3(make_objective("quadratic"), 0.5, (-1, 1), grid_n=10_001) is None


def test_period3_certificate_ordering():
    assert Period3Certificate(0.0, 1.0, 2.0, -1.0, True).holds()
    assert not Period3Certificate(0.0, 1.0, 2.0, 0.5, True).holds()
    assert Period3Certificate(0.0, -1.0, -2.0, 1.0, False).holds()


def test_period3_needs_1d():
    with pytest.raises(UnsupportedError):
        find_period3(make_objective("matyas"), 0.1, (0, 1))


# -- escape dichotomy ------------------------------------------------------------

def test_s_connectivity_flip_at_critical_k():
    assert K_CRITICAL == pytest.approx(0.6495190528383290)
    assert s_connectivity(0.9 * K_CRITICAL)[0]
    assert not s_connectivity(1.1 * K_CRITICAL)[0]
    conn, boundary, _ = s_connectivity(K_CRITICAL)
    assert conn and boundary


def test_well_set_components_match_dense_grid():
    for k in (0.02, 0.5, 1.0, 5.0):
        comps = well_set_components(k)
        x = np.linspace(-3, 3, 600_001)
        inside = np.abs(4 * k * x * (x * x - 1)) <= 1.0
        runs = np.count_nonzero(np.diff(inside.astype(int)) == 1) + int(inside[0])
        assert len(comps) == runs
        for lo, hi in comps:
            assert np.all(np.abs(4 * k * np.linspace(lo, hi, 101) *
                                 (np.linspace(lo, hi, 101) ** 2 - 1)) <= 1.0 + 1e-9)


def test_escape_scan_matches_brute_force():
    k, eta, eps, n = 0.02, 0.05, 1e-3, 20_000
    rep = escape_scan(k, eta, eps, x0=1.0, n=n)
    x, prev, count = 1.0, 1.0, 0
    for _ in range(n):
        x = x - eta * (4 * k * x * (x * x - 1) + math.cos(x / eps))
        if x != 0.0:
            count += (x > 0) != (prev > 0)
            prev = x
    assert rep.crossings == count
    assert rep.escaped == (count > 0)
    assert rep.to_dict()["crossings"] == count


def test_escape_dichotomy_examples():
    assert escape_scan(0.02, 0.05, 1e-4, n=200_000).escaped
    rep = escape_scan(5.0, 0.05, 1e-4, n=200_000)
    assert not rep.escaped and not rep.s_connected and len(rep.components) == 3


def test_escape_rejects_zero_start():
    with pytest.raises(DomainError):
        escape_scan(1.0, 0.1, 1e-3, x0=0.0, n=10)


# -- coupling ---------------------------------------------------------------------

def test_coupling_rate_quadratic_is_exact():
    noise = catalog_micro("sin", 1e-3).noise
    rate = coupling_rate(catalog_macro("quadratic"), noise, 0.1)
    assert rate == pytest.approx(0.9, abs=1e-9)
    assert coupling_bound(catalog_macro("quadratic"), 0.1) == pytest.approx(0.9)


def test_coupling_rate_matyas_below_bound():
    noise = catalog_micro("sincos2d", 1e-3).noise
    f0 = catalog_macro("matyas")
    bound = coupling_bound(f0, 0.1)
    assert bound == pytest.approx(0.996)
    assert coupling_rate(f0, noise, 0.1, n=2000) <= bound + 0.01


def test_coupling_needs_strong_convexity():
    with pytest.raises(UnsupportedError):
        coupling_rate(catalog_macro("quartic"), catalog_micro("sin", 1e-3).noise, 0.1)


# -- modified equation ---------------------------------------------------------------

def test_modified_equation_matches_symbolic_oracle():
    g, g2, g3 = oracles.modified_equation_terms()
    eps, eta = 1e-3, 1e-2
    x = np.linspace(-1, 1, 57)
    t = modified_eq_terms(make_objective("quadratic", "sin", eps), x, eta)
    assert np.allclose(t.g, np.abs(g(x, eps)), rtol=1e-10)
    assert np.allclose(t.eta_g2, np.abs(eta * g2(x, eps)), rtol=1e-9, atol=1e-12)
    assert np.allclose(t.eta2_g3, np.abs(eta ** 2 * g3(x, eps)), rtol=1e-9, atol=1e-12)


def test_modified_equation_ratios_scale_with_eta_over_eps():
    x = np.linspace(-1, 1, 1001)
    small = modified_eq_terms(make_objective("quadratic", "sin", 1e-3), x, 1e-5)
    big = modified_eq_terms(make_objective("quadratic", "sin", 1e-3), x, 1e-2)
    assert np.median(small.ratios[0]) < 0.1 < np.median(big.ratios[0])


def test_modified_equation_order_argument():
    with pytest.raises(DomainError):
        modified_eq_terms(make_objective("quadratic"), 0.1, 0.1, max_order=4)
    t = modified_eq_terms(make_objective("quadratic"), 0.1, 0.1, max_order=2)
    assert np.isnan(t.eta2_g3).all()


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 10.0))
def test_connectivity_agrees_with_component_count(k):
    conn, boundary, comps = s_connectivity(k)
    if not boundary:
        assert conn == (len(comps) == 1)
        assert conn == (k <= K_CRITICAL)
