import math

import numpy as np
import pytest
import scipy.optimize
from hypothesis import given, settings
from hypothesis import strategies as st

from ambient_inertia import systems
from ambient_inertia.errors import ConfigError, PowerFlowError
from ambient_inertia.grid import Branch, Bus, Network, build_admittance, solve_power_flow
from ambient_inertia.model import scheduled_injections


def two_bus(p_load=0.0, q_load=0.0, x=0.1):
    return Network(buses=(Bus("A", "slack", v_set=1.0), Bus("B", "pq", p_inj=-p_load, q_inj=-q_load)),
                   branches=(Branch("L", "A", "B", r=0.0, x=x),))


def test_admittance_pure_reactance():
    Y = build_admittance(two_bus())
    np.testing.assert_allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-14)


def test_admittance_single_bus():
    net = Network(buses=(Bus("A", "slack", v_set=1.0),))
    np.testing.assert_array_equal(build_admittance(net), np.zeros((1, 1)))


def test_admittance_ring_hand_assembly():
    net = Network(buses=(Bus("1", "slack", v_set=1.0), Bus("2"), Bus("3")),
                  branches=(Branch("a", "1", "2", r=0.01, x=0.1), Branch("b", "2", "3", r=0.01, x=0.1),
                            Branch("c", "3", "1", r=0.01, x=0.1)))
    y = 1.0 / complex(0.01, 0.1)
    want = np.array([[2 * y, -y, -y], [-y, 2 * y, -y], [-y, -y, 2 * y]])
    np.testing.assert_allclose(build_admittance(net), want, rtol=1e-14)


def test_admittance_shunt_and_tap():
    br = Branch("t", "1", "2", r=0.0, x=0.2, b_sh=0.1, tap=1.05)
    net = Network(buses=(Bus("1", "slack", v_set=1.0), Bus("2")), branches=(br,))
    ys = 1.0 / 0.2j
    want = np.array([[(ys + 0.05j) / 1.05**2, -ys / 1.05], [-ys / 1.05, ys + 0.05j]])
    np.testing.assert_allclose(build_admittance(net), want, rtol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.0, 0.05), st.floats(0.02, 0.5), st.floats(0.0, 0.3)),
                min_size=1, max_size=6))
def test_admittance_untapped_is_symmetric_with_shunt_row_sums(params):
    n = len(params) + 1
    buses = (Bus("0", "slack", v_set=1.0),) + tuple(Bus(str(i)) for i in range(1, n))
    branches = tuple(Branch(f"L{i}", str(i), str(i + 1), r=r, x=x, b_sh=b)
                     for i, (r, x, b) in enumerate(params))
    Y = build_admittance(Network(buses=buses, branches=branches))
    np.testing.assert_allclose(Y, Y.T, atol=1e-12)
    shunt = np.zeros(n, dtype=complex)
    for i, (_, _, b) in enumerate(params):
        shunt[i] += 0.5j * b
        shunt[i + 1] += 0.5j * b
    np.testing.assert_allclose(Y.sum(axis=1), shunt, atol=1e-9)


def test_power_flow_no_load_is_flat():
    pf = solve_power_flow(two_bus())
    np.testing.assert_allclose(pf.v, [1.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(pf.theta, [0.0, 0.0], atol=1e-12)


def test_power_flow_two_bus_closed_form():
    # P: 10 v sin(th) = -1, Q: 10 v^2 - 10 v cos(th) = 0  =>  v = cos(th), sin(2 th) = -0.2
    pf = solve_power_flow(two_bus(p_load=1.0), tol=1e-13)
    th = -0.5 * math.asin(0.2)
    assert pf.theta[1] == pytest.approx(th, abs=1e-10)
    assert pf.v[1] == pytest.approx(math.cos(th), abs=1e-10)
    assert pf.p[0] == pytest.approx(1.0, abs=1e-9)


def test_power_flow_infeasible_load_raises():
    with pytest.raises(PowerFlowError):
        solve_power_flow(two_bus(p_load=6.0))


def test_power_flow_three_machine_matches_least_squares_oracle():
    cfg = systems.load_bundled("three-machine")
    net, dev = cfg.network, cfg.devices
    p, q = scheduled_injections(net, dev)
    net = net.with_injections(p, q)
    pf = solve_power_flow(net)
    Y = build_admittance(net)
    kinds = [b.kind for b in net.buses]
    n = len(kinds)
    pq_idx = [i for i, k in enumerate(kinds) if k == "pq"]
    other = [i for i in range(n) if kinds[i] != "slack"]

    def unpack(x):
        th = np.zeros(n)
        v = np.array([b.v_set if b.v_set is not None else 1.0 for b in net.buses])
        th[other] = x[: len(other)]
        v[pq_idx] = x[len(other):]
        return v, th

    def mismatch(x):
        v, th = unpack(x)
        # explicit double sum, independent of the solver's vectorized form
        P = np.zeros(n)
        Q = np.zeros(n)
        for i in range(n):
            for k in range(n):
                g, b = Y[i, k].real, Y[i, k].imag
                d = th[i] - th[k]
                P[i] += v[i] * v[k] * (g * math.cos(d) + b * math.sin(d))
                Q[i] += v[i] * v[k] * (g * math.sin(d) - b * math.cos(d))
        return np.concatenate([P[other] - p[other], Q[pq_idx] - q[pq_idx]])

    x0 = np.concatenate([np.zeros(len(other)), np.ones(len(pq_idx))])
    sol = scipy.optimize.least_squares(mismatch, x0, xtol=1e-14, ftol=1e-14, gtol=1e-14)
    v, th = unpack(sol.x)
    np.testing.assert_allclose(pf.v, v, atol=1e-4)
    np.testing.assert_allclose(pf.theta, th, atol=1e-4)


def test_network_validation_messages():
    with pytest.raises(ConfigError, match="slack"):
        Network(buses=(Bus("A"), Bus("B")), branches=(Branch("L", "A", "B"),)).validate()
    with pytest.raises(ConfigError, match="not connected"):
        Network(buses=(Bus("A", "slack", v_set=1.0), Bus("B"))).validate()
    with pytest.raises(ConfigError, match="zero series reactance"):
        Network(buses=(Bus("A", "slack", v_set=1.0), Bus("B")),
                branches=(Branch("L", "A", "B", x=0.0),)).validate()
