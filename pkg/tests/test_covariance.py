import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ambient_inertia import systems
from ambient_inertia.covariance import (covariance, lyapunov_residual, measurement_variances, solve_lyapunov,
                                        solve_lyapunov_kron, variance_sensitivity)
from ambient_inertia.errors import StabilityError
from ambient_inertia.linearization import linearize
from ambient_inertia.model import assemble_model


def random_stable(rng, n, m):
    a = rng.standard_normal((n, n))
    a -= (np.max(np.linalg.eigvals(a).real) + rng.uniform(0.1, 2.0)) * np.eye(n)
    return a, rng.standard_normal((n, m))


def test_scalar_ou():
    k = solve_lyapunov(np.array([[-0.5]]), np.array([[0.2]]))
    assert k[0, 0] == pytest.approx(0.04 / 1.0, rel=1e-14)


def test_diagonal():
    ups = np.array([0.5, 1.0, 3.0])
    sig = np.array([0.1, 0.2, 0.3])
    k = solve_lyapunov(np.diag(-ups), np.diag(sig))
    np.testing.assert_allclose(k, np.diag(sig**2 / (2 * ups)), rtol=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_matches_kronecker_oracle(n, m, seed):
    a, b = random_stable(np.random.default_rng(seed), n, m)
    k = solve_lyapunov(a, b)
    kk = solve_lyapunov_kron(a, b)
    np.testing.assert_allclose(k, kk, atol=1e-9 * np.max(np.abs(kk)))
    np.testing.assert_allclose(k, k.T, atol=0)
    assert np.min(np.linalg.eigvalsh(k)) > -1e-10 * np.max(np.abs(k))
    assert lyapunov_residual(a, k, b) <= 1e-10 * max(np.max(np.abs(b @ b.T)), 1.0)


def test_rejects_non_hurwitz():
    with pytest.raises(StabilityError):
        solve_lyapunov(np.array([[0.1]]), np.array([[1.0]]))


def test_empty_system():
    assert solve_lyapunov(np.zeros((0, 0)), np.zeros((0, 0))).shape == (0, 0)


@pytest.fixture(scope="module")
def smib_sys():
    cfg = systems.load_bundled("smib")
    return linearize(assemble_model(cfg.network, cfg.devices))


def test_zero_row_gives_zero_variance(smib_sys):
    k = solve_lyapunov(smib_sys.a, smib_sys.b)
    sys = smib_sys
    sys.observables["zero"] = np.zeros(sys.n)
    sys.observables["noise"] = np.eye(sys.n)[-1]
    try:
        var = measurement_variances(sys, k, ["zero", "noise"])
    finally:
        del sys.observables["zero"], sys.observables["noise"]
    assert var["zero"] == 0.0
    # the OU state alone: sigma^2 / (2 upsilon)
    ups, sig = -sys.a[-1, -1], sys.b[-1, -1]
    assert var["noise"] == pytest.approx(sig**2 / (2 * ups), rel=1e-10)


def test_variances_scale_with_noise_power(smib_sys):
    base = covariance(smib_sys, ["i_G1", "v_B2"]).k_zeta
    doubled = covariance(dataclasses.replace(smib_sys, b=2 * smib_sys.b), ["i_G1", "v_B2"]).k_zeta
    for n in base:
        assert doubled[n] == pytest.approx(4 * base[n], rel=1e-10)


def test_sensitivity_matches_relinearization_and_converges():
    cfg = systems.load_bundled("smib")
    model = assemble_model(cfg.network, cfg.devices)
    sys = linearize(model)
    sel = ["i_G1"]
    k = solve_lyapunov(sys.a, sys.b)
    d = variance_sensitivity(sys, k, sel, "H_G1")["i_G1"]

    def var(H):
        s = linearize(model.with_parameters({"H_G1": H}))
        return covariance(s, sel).k_zeta["i_G1"]

    H = model.devices.get("G1").H
    h1, h2 = 0.01, 0.005
    d1 = (var(H + h1) - var(H - h1)) / (2 * h1)
    d2 = (var(H + h2) - var(H - h2)) / (2 * h2)
    rich = (4 * d2 - d1) / 3
    assert d == pytest.approx(rich, rel=1e-4)
