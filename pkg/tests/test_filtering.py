import numpy as np
import pytest
import scipy.integrate
import scipy.signal
from hypothesis import given, settings
from hypothesis import strategies as st

from ambient_inertia.covariance import covariance
from ambient_inertia.errors import ConfigError
from ambient_inertia.filtering import (BandpassSpec, append_filter_states, filter_series, filter_trace,
                                       moving_variance, windowed_variance)
from ambient_inertia.linearization import LinearizedSystem
from ambient_inertia.sde import SimTrace

SPEC = BandpassSpec(0.1, 1.5, 4)
DT = 0.025


def db(x):
    return 20 * np.log10(np.abs(x))


def test_stopband_attenuation():
    assert db(SPEC.frequency_response(0.01)[0]) <= -40.0
    assert db(SPEC.frequency_response(15.0)[0]) <= -40.0


def test_passband_and_edges():
    assert abs(db(SPEC.frequency_response(0.4)[0])) <= 1.0
    np.testing.assert_allclose(np.abs(SPEC.frequency_response([0.1, 1.5])), 2 ** -0.5, atol=1e-9)
    assert abs(SPEC.frequency_response(SPEC.center_hz)[0]) == pytest.approx(1.0, abs=1e-12)


def test_realization_matches_scipy_transfer_function():
    b, a = scipy.signal.butter(4, [2 * np.pi * 0.1, 2 * np.pi * 1.5], btype="bandpass", analog=True)
    f = np.array([0.05, 0.3, 0.9, 2.0])
    _, h = scipy.signal.freqs(b, a, worN=2 * np.pi * f)
    np.testing.assert_allclose(SPEC.frequency_response(f), h, rtol=1e-8)


def test_zero_input_gives_zero_output():
    np.testing.assert_array_equal(filter_series(np.zeros(500), SPEC, DT), 0.0)
    # a constant is referred to its first sample
    np.testing.assert_allclose(filter_series(np.full(500, 3.0), SPEC, DT), 0.0, atol=0)


def test_digital_filter_passes_centre_tone():
    t = np.arange(40000) * DT
    f = SPEC.center_hz
    y = filter_series(np.sin(2 * np.pi * f * t), SPEC, DT)[20000:]
    # bilinear warping at this sample rate costs well under 1 %
    assert np.max(np.abs(y)) == pytest.approx(1.0, abs=0.01)


def test_invalid_specs():
    with pytest.raises(ConfigError):
        BandpassSpec(1.5, 0.1)
    with pytest.raises(ConfigError, match="Nyquist"):
        BandpassSpec(0.1, 25.0).check_rate(DT)


def test_moving_variance_of_constant_is_zero():
    tr = SimTrace(t=np.arange(1, 401) * DT, samples={"x": np.full(400, 2.5)}, sample_dt=DT)
    wv = moving_variance(tr, window_s=2.5)
    np.testing.assert_array_equal(wv.variances["x"], 0.0)
    np.testing.assert_allclose(wv.starts, [0.0, 2.5, 5.0, 7.5])


def test_moving_variance_of_white_noise():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(36000 * 4)
    tr = SimTrace(t=np.arange(1, x.size + 1) * DT, samples={"x": x}, sample_dt=DT)
    wv = moving_variance(tr, window_s=900.0)
    assert wv.variances["x"].size == 4
    np.testing.assert_allclose(wv.variances["x"], 1.0, atol=0.03)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_windowed_variance_matches_numpy(n, stride, seed):
    x = np.random.default_rng(seed).standard_normal(200) * 3 + 10
    got = windowed_variance(x, n, stride)
    want = [x[s:s + n].var(ddof=1) for s in range(0, x.size - n + 1, stride)]
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_window_must_be_whole_samples():
    tr = SimTrace(t=np.arange(1, 101) * DT, samples={"x": np.zeros(100)}, sample_dt=DT)
    with pytest.raises(ConfigError, match="integer number"):
        moving_variance(tr, window_s=1.01)


def test_filter_trace_discards_head():
    x = np.random.default_rng(1).standard_normal(2000)
    tr = SimTrace(t=np.arange(1, 2001) * DT, samples={"x": x}, sample_dt=DT)
    out = filter_trace(tr, SPEC, discard_s=10.0)
    assert out.t.size == 1600 and out.t[0] == pytest.approx(401 * DT)
    assert "filter" in out.meta


def ou_system(ups, sig):
    return LinearizedSystem(a=np.array([[-ups]]), b=np.array([[sig]]), e=np.zeros((0, 1)),
                            j=np.zeros((0, 0)), state_names=["x"], alg_names=[],
                            equilibrium=(np.zeros(0), np.zeros(0)), lambda_diag=np.zeros(0),
                            param_values={}, param_rows={}, n_base=1)


def test_filtered_variance_matches_spectral_integral():
    ups, sig = 0.5, 0.1
    aug = append_filter_states(ou_system(ups, sig), SPEC, ["x"])
    var = covariance(aug, ["x:bp"]).k_zeta["x:bp"]

    def integrand(f):
        w = 2 * np.pi * f
        return 2 * abs(SPEC.frequency_response(f)[0]) ** 2 * sig**2 / (ups**2 + w**2)

    want = sum(scipy.integrate.quad(integrand, lo, hi, limit=200)[0]
               for lo, hi in [(0, 0.1), (0.1, 1.5), (1.5, 20), (20, np.inf)])
    assert var == pytest.approx(want, rel=1e-6)


def test_filter_name_collision():
    sys = append_filter_states(ou_system(0.5, 0.1), SPEC, ["x"])
    with pytest.raises(ConfigError, match="collides"):
        append_filter_states(sys, SPEC, ["x"])
