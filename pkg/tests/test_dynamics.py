import dataclasses

import numpy as np
import pytest

from ambient_inertia import systems
from ambient_inertia.devices import (GflConverter, StochasticLoad, SyncMachine, VsmConverter, eval_gfl,
                                     eval_load, eval_swing, eval_vsm)
from ambient_inertia.errors import ConfigError
from ambient_inertia.linearization import linearize
from ambient_inertia.model import assemble_model

OMEGA_BASE = 2 * np.pi * 50


def test_swing_at_synchronous_speed_is_zero():
    m = SyncMachine("G", "B", H=5.0, D=2.0)
    assert eval_swing(m, 1.0, 0.7, 0.7, OMEGA_BASE) == (0.0, 0.0)


def test_swing_damping_term():
    m = SyncMachine("G", "B", H=5.0, D=2.0)
    _, r = eval_swing(m, 1.01, 0.5, 0.5, OMEGA_BASE)
    assert r == pytest.approx(-0.02, abs=1e-15)
    d, _ = eval_swing(m, 1.01, 0.5, 0.5, OMEGA_BASE)
    assert d == pytest.approx(0.01 * OMEGA_BASE)


def test_swing_acceleration():
    m = SyncMachine("G", "B", H=5.0, D=0.0)
    _, r = eval_swing(m, 1.0, 0.8, 0.7, OMEGA_BASE)
    assert r / (2 * m.H) == pytest.approx(0.01, rel=1e-12)


@pytest.mark.parametrize("gamma,v,want", [(0.0, 0.95, 1.0), (1.0, 1.05, 1.05), (2.0, 0.95, 0.9025)])
def test_load_voltage_dependence(gamma, v, want):
    ld = StochasticLoad("L", "B", p_l0=1.0, gamma=gamma)
    assert eval_load(ld, 0.0, v) == pytest.approx(want, rel=1e-12)


def test_load_noise_scales_power():
    ld = StochasticLoad("L", "B", p_l0=0.8)
    assert eval_load(ld, 0.05, 1.0) == pytest.approx(0.84)


def test_load_rejects_nonpositive_voltage():
    with pytest.raises(ValueError):
        eval_load(StochasticLoad("L", "B", p_l0=1.0), 0.0, 0.0)


def test_vsm_residuals_equal_machine_residuals():
    m = SyncMachine("G", "B", H=4.0, D=3.0)
    v = VsmConverter("G", "B", H_eq=4.0, D_eq=3.0, p_set=0.5)
    for w, pm, pe in [(1.0, 0.5, 0.5), (1.003, 0.6, 0.4), (0.99, 0.1, 0.9)]:
        assert eval_vsm(v, w, pm, pe, OMEGA_BASE) == eval_swing(m, w, pm, pe, OMEGA_BASE)


def test_gfl_steady_state_and_droop_response():
    c = GflConverter("C", "B", droop=10.0, t_f=0.1, p_set=0.6)
    assert eval_gfl(c, 0.6, 1.0) == 0.0
    # at 1 % overspeed the output settles 0.1 pu below p_set
    assert eval_gfl(c, 0.5, 1.01) == pytest.approx(0.0, abs=1e-12)
    assert eval_gfl(c, 0.6, 1.01) == pytest.approx(-0.1 / 0.1)


def test_device_validation():
    with pytest.raises(ConfigError, match="H must be > 0"):
        SyncMachine("G", "B", H=0.0)
    with pytest.raises(ConfigError, match="D_eq"):
        VsmConverter("V", "B", H_eq=0.0, D_eq=0.0, p_set=0.1)
    with pytest.raises(ConfigError, match="droop"):
        GflConverter("C", "B", droop=0.0, t_f=0.1, p_set=0.1)


@pytest.mark.parametrize("system_id", systems.BUNDLED + systems.SCENARIOS)
def test_bundled_equilibrium_residuals(system_id):
    cfg = systems.load_bundled(system_id)
    model = assemble_model(cfg.network, cfg.devices)
    res_f, res_g = model.residual_at_equilibrium()
    assert res_f <= 1e-8 and res_g <= 1e-8


def test_three_machine_state_layout():
    cfg = systems.load_bundled("three-machine")
    model = assemble_model(cfg.network, cfg.devices)
    # the reference machine carries no angle state
    assert model.n_states == 11
    assert "delta_G1" not in model.state_names
    assert model.n_noise == len(cfg.devices.loads)


def test_governor_reference_perturbation_enters_only_its_row():
    cfg = systems.load_bundled("three-machine")
    model = assemble_model(cfg.network, cfg.devices)
    arr = model.arrays.copy()
    arr.sw_pref[1] += 0.1
    pert = dataclasses.replace(model, arrays=arr)
    diff = pert.f_tilde(model.xi0, model.zeta0) - model.f_tilde(model.xi0, model.zeta0)
    want = np.zeros(model.n_states)
    want[model.state_index["pm_G2"]] = 0.1
    np.testing.assert_allclose(diff, want, atol=1e-14)


def test_vsm_model_matches_machine_model():
    cfg = systems.load_bundled("smib")
    devs = cfg.devices
    m = devs.machines[0]
    machine_model = assemble_model(cfg.network, devs)
    # same operating point: the machine bus becomes a PQ bus carrying the converter's set-points
    buses = tuple(dataclasses.replace(b, kind="pq", v_set=None, p_inj=0.0) if b.id == m.bus else b
                  for b in cfg.network.buses)
    q = float(machine_model.pf.q[[b.id for b in buses].index(m.bus)])
    vsm = VsmConverter(m.id, m.bus, H_eq=m.H, D_eq=m.D, p_set=1.0, q_set=q, x_c=m.x_d_prime,
                       p_rat=m.p_rat)
    vsm_model = assemble_model(dataclasses.replace(cfg.network, buses=buses),
                               dataclasses.replace(devs, machines=(), vsms=(vsm,)))
    assert vsm_model.state_names == machine_model.state_names
    np.testing.assert_allclose(vsm_model.xi0, machine_model.xi0, atol=1e-12)
    np.testing.assert_allclose(linearize(vsm_model).a, linearize(machine_model).a, atol=1e-9)


def test_gfl_model_equilibrium_tracks_set_point():
    cfg = systems.load_bundled("gfl-droop")
    model = assemble_model(cfg.network, cfg.devices)
    c = cfg.devices.gfls[0]
    assert f"s_{c.id}" in model.state_names
    p = model.zeta0[model.alg_index[f"p_{c.id}"]]
    assert p == pytest.approx(c.p_set, abs=1e-10)


def test_with_parameters_changes_only_the_device():
    cfg = systems.load_bundled("three-machine")
    model = assemble_model(cfg.network, cfg.devices)
    new = model.with_parameters({"H_G2": 6.0, "D_G3": 1.5})
    assert new.devices.get("G2").H == 6.0
    assert new.devices.get("G3").D == 1.5
    assert new.devices.get("G1") == model.devices.get("G1")
    np.testing.assert_allclose(new.xi0, model.xi0, atol=1e-12)
