import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambient_inertia import kernel, systems
from ambient_inertia.devices import OuParams
from ambient_inertia.errors import ConfigError
from ambient_inertia.model import assemble_model
from ambient_inertia.sde import (Scenario, ScenarioEvent, SimTrace, duck_lambda, lambda_events, ou_coefficients,
                                 ou_step, simulate, simulate_ou)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.0, 1.0), st.floats(1e-3, 1.0), st.floats(-1, 1), st.floats(-3, 3))
def test_ou_step_matches_vector_coefficients(ups, sig, dt, eta, n):
    p = OuParams(upsilon=ups, sigma=sig)
    a, s = ou_coefficients([p], dt)
    assert ou_step(eta, p, dt, n) == pytest.approx(a[0] * eta + s[0] * n, rel=1e-12, abs=1e-15)


def test_ou_step_small_dt_limit():
    p = OuParams(upsilon=0.5, sigma=0.2)
    dt = 1e-6
    # Euler-Maruyama to first order
    assert ou_step(1.0, p, dt, 1.0) == pytest.approx(1.0 - 0.5 * dt + 0.2 * math.sqrt(dt), rel=1e-6)


def test_ou_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        OuParams(upsilon=0.0)
    with pytest.raises(ConfigError):
        OuParams(sigma=-1.0)
    with pytest.raises(ValueError):
        ou_step(0.0, OuParams(), 0.0, 0.0)


def test_ou_path_statistics():
    p = OuParams.from_std(0.05, upsilon=0.5)
    dt = 0.025
    x = simulate_ou(p, dt, 2_000_000, seed=3).values
    assert x.var() == pytest.approx(p.stationary_variance, rel=0.03)
    rho = np.corrcoef(x[:-1], x[1:])[0, 1]
    assert rho == pytest.approx(math.exp(-0.5 * dt), abs=0.01)


def test_ou_path_is_deterministic_per_seed_and_trial():
    p = OuParams()
    a = simulate_ou(p, 0.01, 1000, seed=5).values
    np.testing.assert_array_equal(a, simulate_ou(p, 0.01, 1000, seed=5).values)
    assert not np.array_equal(a, simulate_ou(p, 0.01, 1000, seed=5, trial=1).values)


def test_ou_zero_diffusion_decays():
    x = simulate_ou(OuParams(upsilon=2.0, sigma=0.0), 0.1, 10, eta0=1.0).values
    np.testing.assert_allclose(x, np.exp(-2.0 * 0.1 * np.arange(11)), rtol=1e-12)


def short_scenario(**kw):
    kw.setdefault("duration_s", 5.0)
    kw.setdefault("warmup_s", 1.0)
    return Scenario(**kw)


@pytest.fixture(scope="module")
def smib():
    cfg = systems.load_bundled("smib")
    return assemble_model(cfg.network, cfg.devices)


def test_zero_noise_stays_at_equilibrium(smib):
    quiet = dataclasses.replace(smib.devices, loads=tuple(
        dataclasses.replace(ld, ou=OuParams(upsilon=ld.ou.upsilon, sigma=0.0)) for ld in smib.devices.loads))
    model = assemble_model(smib.net, quiet)
    tr = simulate(model, short_scenario(), seed=1, names=["i_G1", "v_B3"])
    for n in ("i_G1", "v_B3"):
        np.testing.assert_allclose(tr[n], model.zeta0[model.alg_index[n]], atol=1e-12)


def test_simulation_is_deterministic(smib):
    a = simulate(smib, short_scenario(), seed=7, names=["i_G1"])
    b = simulate(smib, short_scenario(), seed=7, names=["i_G1"])
    c = simulate(smib, short_scenario(), seed=7, trial=1, names=["i_G1"])
    np.testing.assert_array_equal(a["i_G1"], b["i_G1"])
    assert not np.array_equal(a["i_G1"], c["i_G1"])
    assert a.t.size == 200 and a.t[0] == pytest.approx(0.025)


def test_unit_lambda_event_leaves_trace_unchanged(smib):
    plain = simulate(smib, short_scenario(), seed=2, names=["i_G1"])
    ev = simulate(smib, short_scenario(events=(ScenarioEvent(2.0, lam=1.0),)), seed=2, names=["i_G1"])
    np.testing.assert_allclose(ev["i_G1"], plain["i_G1"], atol=1e-10)
    assert ev.events == [(2.0, "lambda=1")]


@pytest.mark.skipif("compiled" not in kernel.BACKENDS, reason="extension not built")
def test_backends_agree():
    cfg = systems.load_bundled("three-machine")
    model = assemble_model(cfg.network, cfg.devices)
    sc = short_scenario(duration_s=10.0)
    names = ["i_G1", "i_L45", "v_B5"]
    c = simulate(model, sc, seed=4, names=names, backend="compiled")
    p = simulate(model, sc, seed=4, names=names, backend="python")
    for n in names:
        np.testing.assert_allclose(c[n], p[n], atol=1e-10)


def test_unknown_backend():
    with pytest.raises(ValueError, match="unavailable"):
        kernel.step_kernel_class("fortran")


def test_scenario_validation():
    with pytest.raises(ConfigError, match="integer multiple"):
        Scenario(duration_s=10.0, step_s=0.01, sample_dt_s=0.025)
    with pytest.raises(ConfigError, match="must not exceed"):
        Scenario(duration_s=10.0, step_s=0.05, sample_dt_s=0.025)


def test_lambda_events():
    evs = lambda_events([(0, 1.0), (1800, 0.8)], 3600.0, update_s=900.0)
    assert [(e.time_s, e.lam) for e in evs] == [(0.0, 1.0), (1800.0, 0.8)]
    assert lambda_events(None, 3600.0) == []
    assert duck_lambda(17.0) == pytest.approx(1.0)
    assert duck_lambda(41.0) == duck_lambda(17.0)
    assert duck_lambda(0.5) == pytest.approx(0.76)


def test_trace_csv_round_trip(tmp_path, smib):
    tr = simulate(smib, short_scenario(), seed=1, names=["i_G1", "v_B3"])
    path = tmp_path / "trace.csv"
    tr.write(path)
    back = SimTrace.read_csv(path)
    assert back.names == tr.names and back.seed == 1
    np.testing.assert_allclose(back["i_G1"], tr["i_G1"], rtol=1e-11)
    assert back.sample_dt == tr.sample_dt
