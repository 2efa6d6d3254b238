"""Run orchestration: configuration to model, traces, windows and estimates."""
from __future__ import annotations

import dataclasses
import platform
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .devices import GflConverter, SyncMachine, VsmConverter
from .errors import ConfigError
from .estimator import EstimateReport, EstimationProblem, estimate_series
from .filtering import BandpassSpec, append_filter_states, filter_trace, filtered_name, moving_variance
from .linearization import LinearizedSystem, linearize
from .model import DynamicModel, assemble_model, replace_devices
from .sde import Scenario, ScenarioEvent, SimTrace, apply_scenario_event, simulate

DEFAULT_H_MACHINE = 5.0
DEFAULT_H_CONVERTER = 1.0


def truth_model(cfg: RunConfig) -> DynamicModel:
    return assemble_model(cfg.network, cfg.devices)


def measurement_names(cfg: RunConfig, model: DynamicModel | None = None, preset: str | None = None):
    """Measured quantities: explicit names, or the configured preset."""
    meas = cfg.measurement
    if meas.names and preset is None:
        return list(meas.names)
    preset = preset or meas.preset
    devs = cfg.devices
    if preset == "terminals":
        return [f"i_{d.id}" for d in devs.machines + devs.vsms + devs.gfls]
    if preset == "boundaries":
        if not meas.boundaries:
            raise ConfigError("measurement.boundaries is empty; the boundaries preset needs branch ids")
        return [f"i_{b}" for b in meas.boundaries]
    if preset == "voltages":
        slack = cfg.network.buses[cfg.network.slack].id
        infinite = not any(m.bus == slack for m in devs.machines)
        return [f"v_{b.id}" for b in cfg.network.buses if not (infinite and b.id == slack)]
    raise ConfigError(f"unknown measurement preset {preset!r}")


def parameter_names(cfg: RunConfig, param_set: str | None = None) -> list[str]:
    est = cfg.estimation
    ps = (param_set or est.param_set).upper()
    if ps not in ("H", "D"):
        raise ConfigError(f"param_set must be H or D, got {ps!r}")
    if est.params and param_set is None:
        return list(est.params)
    devs = cfg.devices
    ids = [d.id for d in devs.machines + devs.vsms] + [c.id for c in devs.gfls]
    return [f"{ps}_{i}" for i in ids]


def truth_values(cfg: RunConfig, names) -> dict[str, float]:
    """Configured values of the estimated parameters (GFL: droop equivalents)."""
    out = {}
    for n in names:
        kind, dev_id = n.split("_", 1)
        dev = cfg.devices.get(dev_id)
        if isinstance(dev, GflConverter):
            if kind == "D":
                out[n] = dev.droop
            continue
        if isinstance(dev, VsmConverter):
            out[n] = dev.H_eq if kind == "H" else dev.D_eq
        else:
            out[n] = dev.H if kind == "H" else dev.D
    return out


def initial_values(cfg: RunConfig, names) -> dict[str, float]:
    est = cfg.estimation
    out = {}
    for n in names:
        if n in est.initial:
            out[n] = float(est.initial[n])
            continue
        kind, dev_id = n.split("_", 1)
        dev = cfg.devices.get(dev_id)
        if kind == "H":
            out[n] = DEFAULT_H_MACHINE if isinstance(dev, SyncMachine) else DEFAULT_H_CONVERTER
        else:
            out[n] = truth_values(cfg, [n]).get(n, 1.0) if isinstance(dev, GflConverter) else dev.D
    return out


def gfl_equivalent_devices(cfg: RunConfig, devices=None):
    """Replace grid-following converters by swing-equation equivalents for estimation."""
    devices = cfg.devices if devices is None else devices
    est = cfg.estimation
    vsms = list(devices.vsms)
    h_eq = float(est.gfl_equivalent.get("H_eq", DEFAULT_H_CONVERTER))
    for c in devices.gfls:
        d_eq = float(est.gfl_equivalent.get("D_eq", c.droop))
        vsms.append(VsmConverter(id=c.id, bus=c.bus, H_eq=h_eq, D_eq=d_eq, p_set=c.p_set,
                                 q_set=c.q_set, x_c=est.gfl_equivalent_x, p_rat=c.p_rat,
                                 omega0=c.omega0))
    return dataclasses.replace(devices, vsms=tuple(vsms), gfls=())


def estimation_devices(cfg: RunConfig, params: dict[str, float], devices=None):
    devices = gfl_equivalent_devices(cfg, devices)
    new = {}
    for n, v in params.items():
        kind, dev_id = n.split("_", 1)
        dev = new.get(dev_id, devices.get(dev_id))
        if isinstance(dev, VsmConverter):
            dev = dataclasses.replace(dev, **{("H_eq" if kind == "H" else "D_eq"): float(v)})
        else:
            dev = dataclasses.replace(dev, **{kind: float(v)})
        new[dev_id] = dev
    return replace_devices(devices, new)


def observed_system(model: DynamicModel, cfg: RunConfig, names, filtered: bool):
    """Linearization (with filter states when ``filtered``) and the observable names."""
    sys = linearize(model)
    if not filtered:
        return sys, list(names)
    spec = BandpassSpec.from_config(cfg.measurement.filter)
    spec.check_rate(cfg.measurement.sample_dt_s)
    return append_filter_states(sys, spec, names), [filtered_name(n) for n in names]


@dataclass
class Setup:
    cfg: RunConfig
    names: list[str]
    observed: list[str]
    params: dict[str, float]
    truth: dict[str, float]
    filtered: bool
    problem: EstimationProblem


def build_setup(cfg: RunConfig, filtered: bool | None = None, param_set: str | None = None,
                preset: str | None = None, model: DynamicModel | None = None) -> Setup:
    """Estimation problem for the configured operating point (no measured data yet)."""
    filtered = cfg.measurement.filter.enabled if filtered is None else filtered
    names = measurement_names(cfg, preset=preset)
    pnames = parameter_names(cfg, param_set)
    init = initial_values(cfg, pnames)
    est_model = assemble_model(cfg.network, estimation_devices(cfg, init)) if model is None else model
    sys, observed = observed_system(est_model, cfg, names, filtered)
    reference = {n: float(cfg.estimation.reference.get(n, init[n])) for n in pnames}
    problem = EstimationProblem(sys, observed, {}, init, reference, upper=cfg.estimation.upper_bound,
                                max_iter=cfg.estimation.max_iter, cost_tol=cfg.estimation.cost_tol,
                                step_tol=cfg.estimation.step_tol)
    return Setup(cfg, names, observed, init, truth_values(cfg, pnames), filtered, problem)


def analytic_variances(cfg: RunConfig, setup: Setup) -> dict[str, float]:
    """Stationary variances of the true model (inverse-crime data)."""
    from .covariance import covariance

    sys, observed = observed_system(truth_model(cfg), cfg, setup.names, setup.filtered)
    return covariance(sys, observed).k_zeta


def simulate_config(cfg: RunConfig, seed: int | None = None, trial: int = 0, names=None,
                    duration_s: float | None = None, backend=None) -> SimTrace:
    seed = cfg.estimation.seed if seed is None else seed
    scenario = Scenario.from_config(cfg, duration_s)
    names = measurement_names(cfg) if names is None else names
    return simulate(truth_model(cfg), scenario, seed=seed, names=names, trial=trial, backend=backend,
                    meta=provenance(cfg))


def provenance(cfg: RunConfig) -> dict:
    import numpy
    import scipy

    from . import kernel

    return {"config_sha256": cfg.digest(), "config_name": cfg.name,
            "versions": {"python": platform.python_version(), "numpy": numpy.__version__,
                         "scipy": scipy.__version__, "package": _package_version()},
            "kernel_backend": kernel.BACKEND}


def _package_version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:
        return "unknown"


def window_variances(trace: SimTrace, setup: Setup, window_s: float | None = None,
                     stride_s: float | None = None):
    """Per-window measured variances keyed by observable name, with window starts."""
    cfg = setup.cfg
    window_s = cfg.measurement.window_s if window_s is None else window_s
    stride_s = cfg.measurement.stride_s if stride_s is None else stride_s
    missing = [n for n in setup.names if n not in trace.samples]
    if missing:
        raise ConfigError(f"trace lacks measurements: {missing}")
    if setup.filtered:
        spec = BandpassSpec.from_config(cfg.measurement.filter)
        trace = filter_trace(trace, spec, setup.names, discard_s=window_s / 3.0)
    wv = moving_variance(trace, setup.names, window_s, stride_s, filtered=setup.filtered)
    windows = [{o: float(wv.variances[n][k]) for n, o in zip(setup.names, setup.observed)}
               for k in range(len(wv.starts))]
    return windows, wv.starts, wv


def epoch_systems(cfg: RunConfig, setup: Setup, trace: SimTrace, starts, window_s: float):
    """Per-window linearization for the operating point in force, and a mask of
    windows that straddle a scenario event (excluded from the estimates)."""
    events = Scenario.from_config(cfg, float(trace.t[-1])).events
    lam_events = [ev for ev in events if ev.lam is not None]
    later = [ev.time_s for ev in events if ev.time_s > 0]
    overlap = np.array([any(t0 < te < t0 + window_s for te in later) for t0 in starts], dtype=bool)
    if not lam_events:
        return None, overlap
    base_devices = estimation_devices(cfg, setup.params)
    model0 = assemble_model(cfg.network, base_devices)
    base = (cfg.network, base_devices)
    cache: dict[float, LinearizedSystem] = {}
    systems = []
    for t0 in starts:
        active = [ev.lam for ev in lam_events if ev.time_s <= t0 + 1e-9]
        lam = active[-1] if active else 1.0
        if lam not in cache:
            m = apply_scenario_event(model0, ScenarioEvent(0.0, lam=lam), base)[0]
            cache[lam] = observed_system(m, cfg, setup.names, setup.filtered)[0]
        systems.append(cache[lam])
    return systems, overlap


def estimate_trace(trace: SimTrace, setup: Setup, window_s: float | None = None) -> EstimateReport:
    window_s = setup.cfg.measurement.window_s if window_s is None else window_s
    windows, starts, _ = window_variances(trace, setup, window_s)
    systems, overlap = epoch_systems(setup.cfg, setup, trace, starts, window_s)
    report = estimate_series(setup.problem, windows, starts, systems)
    report.truth = setup.truth
    report.param_set = setup.problem.names[0].split("_", 1)[0] if setup.problem.names else ""
    if overlap.any():
        report.windows = [w for w, o in zip(report.windows, overlap) if not o]
    report.meta = {"seed": trace.seed, "trial": trace.trial, "filtered": setup.filtered,
                   "window_s": window_s, "discarded_windows": int(overlap.sum())}
    return report
