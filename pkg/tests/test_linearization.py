import dataclasses
import math

import numpy as np
import pytest

from ambient_inertia import systems
from ambient_inertia.devices import DeviceSet, StochasticLoad, SyncMachine
from ambient_inertia.errors import StabilityError
from ambient_inertia.grid import Branch, Bus, Network
from ambient_inertia.linearization import check_stable, dump_matrices, linearize, load_matrices, update_lambda
from ambient_inertia.model import assemble_model


def machine_infinite_bus(H=4.0, D=1.0, x_line=0.2, x_d=0.3, p_rat=200.0, p=0.5):
    net = Network(buses=(Bus("A", "slack", v_set=1.0), Bus("B", "pv", v_set=1.0, p_inj=p)),
                  branches=(Branch("L", "A", "B", x=x_line),))
    # the load sits on the infinite bus, so its noise does not reach the machine
    devs = DeviceSet(machines=(SyncMachine("G", "B", H=H, D=D, x_d_prime=x_d, p_rat=p_rat),),
                     loads=(StochasticLoad("LD", "A", p_l0=0.1),))
    return assemble_model(net, devs)


def test_two_bus_closed_form():
    H, D, x_line, x_d, p_rat = 4.0, 1.0, 0.2, 0.3, 200.0
    model = machine_infinite_bus(H, D, x_line, x_d, p_rat)
    sys = linearize(model)
    ratio = p_rat / 100.0
    E = float(model.arrays.sw_e_const[0])
    delta = model.xi0[model.state_index["delta_G"]]
    # synchronizing coefficient on the system base, reactances in series
    ks = E * math.cos(delta) / (x_d / ratio + x_line)
    i_w, i_d = model.state_index["omega_G"], model.state_index["delta_G"]
    assert sys.a[i_w, i_d] == pytest.approx(-ks / ratio / (2 * H), rel=1e-6)
    assert sys.a[i_w, i_w] == pytest.approx(-D / (2 * H), rel=1e-8)
    assert sys.a[i_d, i_w] == pytest.approx(2 * math.pi * 50, rel=1e-9)
    assert sys.a[i_d, i_d] == pytest.approx(0.0, abs=1e-8)
    np.testing.assert_allclose(sys.a[:2, 2], 0.0, atol=1e-10)


def test_noise_block_is_ou():
    sys = linearize(machine_infinite_bus())
    assert sys.a[2, 2] == pytest.approx(-0.5)
    assert sys.b[2, 0] == pytest.approx(0.05 * math.sqrt(2 * 0.5))


@pytest.fixture(scope="module")
def three_machine():
    cfg = systems.load_bundled("three-machine")
    return assemble_model(cfg.network, cfg.devices)


def test_doubling_inertia_halves_the_omega_row(three_machine):
    base = linearize(three_machine)
    doubled = linearize(three_machine.with_parameters({"H_G2": 8.0}))
    r = three_machine.state_index["omega_G2"]
    np.testing.assert_allclose(doubled.a[r], 0.5 * base.a[r], atol=1e-9)
    others = np.arange(base.n) != r
    np.testing.assert_allclose(doubled.a[others], base.a[others], atol=1e-9)


def test_damping_shift(three_machine):
    base = linearize(three_machine)
    H = three_machine.devices.get("G3").H
    D = three_machine.devices.get("G3").D
    shifted = linearize(three_machine.with_parameters({"D_G3": D + 1.0}))
    r = three_machine.state_index["omega_G3"]
    assert shifted.a[r, r] - base.a[r, r] == pytest.approx(-1.0 / (2 * H), rel=1e-6)


@pytest.mark.parametrize("params", [{"H_G1": 7.0}, {"D_G2": 3.5}, {"H_G3": 2.0, "D_G1": 0.0}])
def test_fast_update_equals_relinearization(three_machine, params):
    fast = update_lambda(linearize(three_machine), params)
    full = linearize(three_machine.with_parameters(params))
    np.testing.assert_allclose(fast.a, full.a, atol=1e-8)
    np.testing.assert_allclose(fast.b, full.b, atol=1e-14)
    assert fast.param_values == {**full.param_values}


def test_bundled_systems_are_stable():
    for sid in systems.BUNDLED + systems.SCENARIOS:
        cfg = systems.load_bundled(sid)
        sys = linearize(assemble_model(cfg.network, cfg.devices))
        assert sys.max_real_eig < 0, sid


def test_unstable_matrix_is_reported(three_machine):
    sys = linearize(three_machine)
    bad = dataclasses.replace(sys, a=sys.a + 2.0 * np.eye(sys.n))
    with pytest.raises(StabilityError, match="eigenvalues"):
        check_stable(bad)


def test_observation_rows(three_machine):
    sys = linearize(three_machine)
    row = sys.observation_row("omega_G1")
    assert row[three_machine.state_index["omega_G1"]] == 1.0 and row.sum() == 1.0
    k = sys.alg_names.index("i_G2")
    np.testing.assert_array_equal(sys.observation_row("i_G2")[: sys.e.shape[1]], sys.e[k])


def test_matrix_dump_round_trip(tmp_path, three_machine):
    sys = linearize(three_machine)
    path = tmp_path / "abe.txt"
    dump_matrices(sys, path)
    back = load_matrices(path)
    for key in ("a", "b", "e"):
        np.testing.assert_array_equal(back[key], getattr(sys, key))
    assert back["states"] == sys.state_names
