import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from chaotic_gd.dynamics import (Ensemble, MapSpec, evolve_ensemble, gd_step, heavy_ball_step,
                                 iterate, nag_sc_step, read_binary, read_csv, stochastic_step,
                                 write_binary, write_csv)
from chaotic_gd.errors import DivergenceError, DomainError
from chaotic_gd.objective import catalog_macro, catalog_micro, make_objective
from chaotic_gd.rng import uniforms


def quad():
    return make_objective("quadratic")


def test_gd_step_examples():
    assert gd_step(quad(), 0.1, 1.0)[0] == pytest.approx(0.9, abs=1e-15)
    x = gd_step(make_objective("matyas"), 0.5, [1.0, 1.0])
    assert np.allclose(x, [0.5, 0.5], rtol=0, atol=1e-15)


def test_gd_step_multiscale_matches_high_precision_oracle():
    obj = make_objective("quartic", "sin", 1e-6)
    assert gd_step(obj, 0.1, 0.5)[0] == pytest.approx(oracles.GD_STEP_QUARTIC_SIN, abs=1e-15)


def test_orbit_geometric_on_quadratic():
    o = iterate(MapSpec("gd", quad(), 0.1), 1.0, 3)
    assert np.allclose(o.x, [1.0, 0.9, 0.81, 0.729], rtol=0, atol=1e-15)


def test_orbit_burn_in_and_thin():
    spec = MapSpec("gd", make_objective("quadratic", "sin", 1e-3), 0.01)
    full = iterate(spec, 0.7, 100)
    part = iterate(spec, 0.7, 80, burn_in=20, thin=10)
    assert len(part) == 9
    assert np.array_equal(part.x, full.x[20::10])


def test_orbit_is_bit_exact_replay_of_single_steps():
    obj = make_objective("quartic", "quasi", 1e-3)
    spec = MapSpec("gd", obj, 0.02)
    o = iterate(spec, 0.8, 50)
    x = np.array([0.8])
    for i in range(50):
        x = gd_step(obj, 0.02, x)
        assert np.array_equal(x, o.states[i + 1])


def test_stochastic_orbit_replay_from_stream():
    f0 = catalog_macro("quadratic")
    noise = catalog_micro("sin", 1e-3).noise
    spec = MapSpec("stochastic-gd", f0, 0.1, noise=noise)
    o = iterate(spec, 0.3, 20, seed=9)
    q = noise.n_uniforms
    x = np.array([0.3])
    for t in range(20):
        zeta = noise.transform(uniforms(9, 0, t * q, q).reshape(1, q))[0]
        x = stochastic_step(f0, noise, 0.1, x, zeta=zeta)
        assert np.array_equal(x, o.states[t + 1])


def test_stochastic_spec_accepts_multiscale():
    spec = MapSpec("stochastic-gd", make_objective("quadratic", "sin", 1e-3), 0.1)
    assert spec.noise is not None and spec.objective.name == "quadratic"


def test_stationary_variance_on_quadratic():
    # AR(1): x' = (1 - eta) x + eta z, Var z = 1/2
    eta = 0.1
    spec = MapSpec("stochastic-gd", make_objective("quadratic", "sin", 1e-3), eta)
    ens = evolve_ensemble(spec, Ensemble(np.zeros(200_000), seed=1), 200)
    target = 0.5 * eta ** 2 / (1 - (1 - eta) ** 2)
    assert target == pytest.approx(0.0263158, rel=1e-6)
    assert ens.x.var() == pytest.approx(target, rel=0.02)


def test_ensemble_determinism_and_worker_invariance():
    spec = MapSpec("stochastic-gd", make_objective("quartic", "quasi", 1e-3), 0.05)
    init = Ensemble.uniform(1001, -1, 1, seed=4)
    a = evolve_ensemble(spec, init, 300)
    b = evolve_ensemble(spec, init, 300)
    c = evolve_ensemble(spec, init, 300, workers=4)
    assert np.array_equal(a.members, b.members)
    assert np.array_equal(a.members, c.members)
    assert a.generation == 300


def test_ensemble_split_in_time_is_invariant():
    spec = MapSpec("stochastic-gd", make_objective("matyas", "sincos2d", 1e-3), 0.2)
    init = Ensemble.uniform(100, -1, 1, dim=2, seed=5)
    once = evolve_ensemble(spec, init, 100)
    twice = evolve_ensemble(spec, evolve_ensemble(spec, init, 37), 63)
    assert np.array_equal(once.members, twice.members)


def test_singleton_ensemble_matches_orbit():
    spec = MapSpec("stochastic-gd", make_objective("quartic", "sin", 1e-3), 0.05)
    o = iterate(spec, 0.4, 64, seed=12)
    e = evolve_ensemble(spec, Ensemble([0.4], seed=12), 64)
    assert np.array_equal(o.states[-1], e.members[0])


def test_heavy_ball_and_nag_examples():
    x, v = heavy_ball_step(quad(), 0.01, 0.5, (1.0, 0.0))
    assert x[0] == pytest.approx(0.99) and v[0] == pytest.approx(-0.01)
    x, y = nag_sc_step(quad(), 0.01, 1.0, (1.0, 1.0))
    c = (1 - 0.1) / (1 + 0.1)
    assert y[0] == pytest.approx(0.99)
    assert x[0] == pytest.approx(0.99 + c * (0.99 - 1.0))
    assert x[0] == pytest.approx(0.981818, abs=1e-6)


def test_momentum_orbits_converge_on_quadratic():
    for spec in (MapSpec("heavy-ball", quad(), 0.1, gamma=0.5),
                 MapSpec("nag-sc", quad(), 0.1, mu_hint=1.0)):
        o = iterate(spec, 1.0, 500)
        assert abs(o.x[-1]) < 1e-10
        assert o.aux is not None


def test_heavy_ball_zero_gamma_is_gd():
    obj = make_objective("quartic", "sin", 1e-3)
    a = iterate(MapSpec("heavy-ball", obj, 0.01, gamma=0.0), 0.5, 100)
    b = iterate(MapSpec("gd", obj, 0.01), 0.5, 100)
    assert np.allclose(a.x, b.x, rtol=0, atol=1e-14)


@pytest.mark.parametrize("kw", [dict(kind="newton"), dict(eta=0.0), dict(eta=float("nan")),
                                dict(kind="heavy-ball", gamma=1.0),
                                dict(kind="nag-sc"), dict(kind="nag-sc", mu_hint=20.0)])
def test_mapspec_validation(kw):
    args = dict(kind="gd", objective=quad(), eta=0.1)
    args.update(kw)
    with pytest.raises(DomainError):
        MapSpec(**args)


def test_divergence_reports_step():
    with pytest.raises(DivergenceError) as info:
        iterate(MapSpec("gd", quad(), 3.0), 1.0, 100)
    # |x_s| = 2^s first exceeds 1e12 at s = 40, the step index counts from 0
    assert info.value.step == 39


def test_ensemble_divergence_reports_first_member():
    spec = MapSpec("gd", make_objective("double-well"), 0.5)
    init = Ensemble(np.array([0.5, 100.0, 0.9, 200.0]))
    with pytest.raises(DivergenceError) as info:
        evolve_ensemble(spec, init, 50, workers=2)
    assert info.value.member in (1, 3)
    assert info.value.step >= 0


def test_serialization_round_trip(tmp_path):
    o = iterate(MapSpec("gd", make_objective("matyas", "sincos2d", 1e-3), 0.1), [0.5, -0.2], 40)
    write_binary(tmp_path / "a.bin", o.states)
    write_csv(tmp_path / "a.csv", o.states)
    assert np.array_equal(read_binary(tmp_path / "a.bin"), o.states)
    assert np.array_equal(read_csv(tmp_path / "a.csv"), o.states)
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "index,x1,x2"


def test_binary_rejects_corrupt_files(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(DomainError):
        read_binary(p)
    write_binary(p, np.zeros((3, 1)))
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(DomainError):
        read_binary(p)


def test_state_dimension_checked():
    with pytest.raises(DomainError):
        gd_step(make_objective("matyas"), 0.1, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.001, 1.9))
def test_quadratic_gd_contracts_by_factor_property(x, eta):
    y = gd_step(quad(), eta, x)[0]
    assert y == pytest.approx((1 - eta) * x, rel=1e-12, abs=1e-300)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(1, 40), st.integers(1, 6))
def test_ensemble_chunking_invariance_property(seed, n, workers):
    spec = MapSpec("stochastic-gd", make_objective("quadratic", "quasi", 1e-3), 0.1)
    init = Ensemble.uniform(13, seed=seed % 1000)
    a = evolve_ensemble(spec, init, n, seed=seed)
    b = evolve_ensemble(spec, init, n, seed=seed, workers=workers)
    assert np.array_equal(a.members, b.members)
