import numpy as np
import pytest

from ambient_inertia import pipeline, systems
from ambient_inertia.errors import ConfigError
from ambient_inertia.estimator import (EstimationProblem, cost, estimate, estimate_series, is_identifiable,
                                       trial_statistics, violin_stats)


@pytest.fixture(scope="module")
def setup():
    cfg = systems.load_bundled("three-machine")
    s = pipeline.build_setup(cfg, filtered=False, param_set="H")
    return s, pipeline.analytic_variances(cfg, s)


def test_cost_is_zero_at_truth(setup):
    s, meas = setup
    c, r = cost(s.problem.with_measured(meas), s.truth)
    assert c == pytest.approx(0.0, abs=1e-20)
    assert np.all(np.abs(r) < 1e-10)


def test_cost_grid_minimum_at_truth(setup):
    s, meas = setup
    prob = s.problem.with_measured(meas)
    grid = np.linspace(2.0, 6.0, 9)
    costs = [cost(prob, dict(s.truth, H_G2=h))[0] for h in grid]
    assert grid[int(np.argmin(costs))] == pytest.approx(s.truth["H_G2"])
    assert np.all(np.diff(costs[:4]) < 0) and np.all(np.diff(costs[4:]) > 0)


def test_inverse_crime_from_doubled_guess(setup):
    s, meas = setup
    prob = s.problem.with_measured(meas)
    w = estimate(prob, initial={n: 2 * v for n, v in s.truth.items()})
    assert w.converged, w.message
    for n, v in s.truth.items():
        assert w.estimates[n] == pytest.approx(v, rel=1e-6)


def test_normalization_does_not_move_an_exact_fit(setup):
    s, meas = setup
    base = s.problem
    other = EstimationProblem(base.sys_ref, base.selection, meas, dict(base.params),
                              reference={n: 2.0 for n in base.params})
    a = estimate(base.with_measured(meas))
    b = estimate(other)
    for n in s.truth:
        assert a.estimates[n] == pytest.approx(b.estimates[n], rel=1e-6)


def test_single_window_series_equals_estimate(setup):
    s, meas = setup
    rep = estimate_series(s.problem, [meas], starts=[100.0])
    w = estimate(s.problem.with_measured(meas), start_s=100.0)
    assert rep.windows[0].estimates == w.estimates
    assert rep.windows[0].start_s == 100.0


def test_identifiability(setup):
    s, _ = setup
    assert is_identifiable(s.problem, s.truth)
    with pytest.raises(ConfigError, match="cannot be identified"):
        EstimationProblem(s.problem.sys_ref, s.problem.selection[:2], {}, dict(s.problem.params))


def test_missing_measurement_is_reported(setup):
    s, meas = setup
    partial = dict(meas)
    partial.pop(s.observed[0])
    with pytest.raises(ConfigError, match="missing measured variance"):
        cost(s.problem.with_measured(partial), s.truth)


def test_violin_hand_example():
    st = violin_stats(list(range(1, 10)) + [100], truth=5.0)
    assert (st.n, st.median, st.q1, st.q3, st.iqr) == (10, 5.5, 3.25, 7.75, 4.5)
    assert st.lower_adjacent == 1.0 and st.upper_adjacent == 9.0
    assert st.eps_pct == pytest.approx(10.0)


def test_violin_identical_values():
    st = violin_stats([2.0] * 6)
    assert st.iqr == 0.0 and st.lower_adjacent == st.upper_adjacent == st.median == 2.0


def test_violin_needs_four_values():
    with pytest.raises(ConfigError):
        violin_stats([1.0, 2.0, np.nan, 3.0])


def test_trial_statistics_pool_reports(setup):
    s, meas = setup
    rep = estimate_series(s.problem, [meas] * 4)
    stats = trial_statistics([rep, rep], truth=s.truth)
    assert stats["H_G1"].n == 8
    assert stats["H_G1"].eps_pct == pytest.approx(0.0, abs=1e-4)
