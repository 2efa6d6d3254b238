"""Stochastic time-domain simulation of the DAE driven by OU load noise.

The inner loop lives in :mod:`ambient_inertia.kernel` (compiled when
available). This module builds the per-segment integrator data, handles
step rejection (Jacobian refresh, then step halving), scenario events and
trace export.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.signal

from . import kernel as _kernel
from .devices import OuParams, VsmConverter
from .errors import ConfigError, NumericalError, PowerFlowError, SimulationError
from .model import DynamicModel, assemble_model, core_residual, replace_devices, solve_operating_point

H_MIN = 1e-4
NEWTON_TOL = 1e-10
CHUNK = 1 << 15

# hourly net-load multipliers (clock hours 0..24) with a midday solar dip
DUCK_PROFILE = (0.78, 0.74, 0.72, 0.71, 0.72, 0.76, 0.84, 0.90, 0.86, 0.78, 0.70, 0.65,
                0.63, 0.64, 0.68, 0.76, 0.88, 1.00, 1.08, 1.10, 1.06, 0.98, 0.90, 0.82, 0.78)


# --------------------------------------------------------------------------- OU noise

def ou_coefficients(params: Sequence[OuParams], dt: float):
    """``(a, s)`` of the exact transition ``eta' = a eta + s n``."""
    ups = np.array([p.upsilon for p in params], dtype=float)
    sig = np.array([p.sigma for p in params], dtype=float)
    a = np.exp(-ups * dt)
    s = sig * np.sqrt(-np.expm1(-2.0 * ups * dt) / (2.0 * ups))
    return a, s


def ou_step(eta, params: OuParams, dt: float, noise_draw):
    """Exact one-step OU transition (Gillespie's update)."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    a = math.exp(-params.upsilon * dt)
    s = params.sigma * math.sqrt(-math.expm1(-2.0 * params.upsilon * dt) / (2.0 * params.upsilon))
    return a * eta + s * noise_draw


@dataclass(frozen=True)
class OuPath:
    values: np.ndarray
    dt: float
    seed: int
    params: OuParams | None = None


def rng_for(seed: int, trial: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, trial)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


def simulate_ou(params: OuParams, dt: float, n_steps: int, seed: int = 0,
                eta0: float | None = None, trial: int = 0) -> OuPath:
    """OU path of ``n_steps + 1`` points; ``eta0=None`` draws a stationary start."""
    rng = rng_for(seed, trial)
    a, s = ou_coefficients([params], dt)
    x = np.empty(n_steps + 1)
    x[0] = rng.standard_normal() * math.sqrt(params.stationary_variance) if eta0 is None else eta0
    draws = rng.standard_normal(n_steps)
    # the recursion is a first-order IIR filter
    x[1:] = scipy.signal.lfilter([s[0]], [1.0, -a[0]], draws, zi=[a[0] * x[0]])[0]
    return OuPath(values=x, dt=dt, seed=seed, params=params)


# --------------------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class ScenarioEvent:
    time_s: float
    lam: float | None = None
    device: str | None = None
    values: tuple[tuple[str, float], ...] = ()

    @property
    def label(self) -> str:
        if self.device is not None:
            vals = ",".join(f"{k}={v:g}" for k, v in self.values)
            return f"{self.device}:{vals}"
        return f"lambda={self.lam:g}"


@dataclass(frozen=True)
class Scenario:
    duration_s: float
    step_s: float = 0.005
    sample_dt_s: float = 0.025
    warmup_s: float = 300.0
    events: tuple[ScenarioEvent, ...] = ()
    tag: str = ""

    def __post_init__(self):
        if not self.step_s > 0 or not self.sample_dt_s > 0 or not self.duration_s > 0:
            raise ConfigError("duration_s, step_s and sample_dt_s must be > 0")
        if self.step_s > self.sample_dt_s + 1e-12:
            raise ConfigError("integrator step must not exceed the sample interval")
        ratio = self.sample_dt_s / self.step_s
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("sample_dt_s must be an integer multiple of step_s")
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.time_s)))

    @property
    def sample_every(self) -> int:
        return int(round(self.sample_dt_s / self.step_s))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s / self.sample_dt_s))

    @classmethod
    def from_config(cls, cfg, duration_s: float | None = None) -> "Scenario":
        sc = cfg.scenario
        dur = sc.duration_s if duration_s is None else duration_s
        events = list(lambda_events(sc.lambda_profile, dur, sc.setpoint_update_s, sc.clock_start_h))
        for ev in sc.device_schedules:
            vals = tuple((k, float(ev[k])) for k in ("H_eq", "D_eq") if k in ev)
            events.append(ScenarioEvent(float(ev["time_s"]), device=ev["device"], values=vals))
        for c in cfg.devices.vsms:
            for t, h in c.schedule:
                events.append(ScenarioEvent(t, device=c.id, values=(("H_eq", h),)))
        tag = cfg.name or "scenario"
        if sc.lambda_profile is not None:
            tag += "+" + (sc.lambda_profile if isinstance(sc.lambda_profile, str) else "profile")
        return cls(duration_s=dur, step_s=sc.step_s, sample_dt_s=cfg.measurement.sample_dt_s,
                   warmup_s=cfg.warmup_s, events=tuple(events), tag=tag)


def duck_lambda(clock_h: float) -> float:
    h = clock_h % 24.0
    return float(np.interp(h, np.arange(25.0), DUCK_PROFILE))


def lambda_events(profile, duration_s: float, update_s: float = 900.0, clock_start_h: float = 0.0):
    """Piecewise-constant multiplier events sampled every ``update_s`` (changes only)."""
    if profile is None:
        return []
    knots = None if profile == "duck" else sorted((float(t), float(v)) for t, v in profile)
    out, last = [], None
    t = 0.0
    while t < duration_s - 1e-9:
        if knots is None:
            lam = duck_lambda(clock_start_h + t / 3600.0)
        else:
            prior = [v for tk, v in knots if tk <= t + 1e-9]
            lam = prior[-1] if prior else 1.0
        if last is None or lam != last:
            out.append(ScenarioEvent(t, lam=lam))
            last = lam
        t += update_s
    return out


def scale_operating_point(net, devices, lam: float):
    """Loads, scheduled injections and converter set-points multiplied by ``lam``."""
    if not lam > 0:
        raise ConfigError("lambda must be > 0")
    buses = tuple(dataclasses.replace(b, p_inj=b.p_inj * lam, q_inj=b.q_inj * lam) for b in net.buses)
    net = dataclasses.replace(net, buses=buses)
    devices = dataclasses.replace(
        devices,
        loads=tuple(dataclasses.replace(d, p_l0=d.p_l0 * lam, q_l0=d.q_l0 * lam) for d in devices.loads),
        vsms=tuple(dataclasses.replace(d, p_set=d.p_set * lam) for d in devices.vsms),
        gfls=tuple(dataclasses.replace(d, p_set=d.p_set * lam) for d in devices.gfls),
    )
    return net, devices


def apply_scenario_event(model: DynamicModel, event: ScenarioEvent, base=None) -> tuple[DynamicModel, bool]:
    """Model after ``event``; the flag tells callers to re-linearize (always raised).

    ``base`` is the ``(network, devices)`` pair that ``lam`` multiplies; it
    defaults to the model itself. Device parameters already changed by
    earlier events are kept.
    """
    net, devices = model.net, model.devices
    if event.lam is not None:
        bnet, bdev = base if base is not None else (model.net, model.devices)
        net, scaled = scale_operating_point(bnet, bdev, event.lam)
        keep = {d.id: d for d in devices.vsms}
        scaled = dataclasses.replace(scaled, vsms=tuple(
            dataclasses.replace(d, H_eq=keep[d.id].H_eq, D_eq=keep[d.id].D_eq) if d.id in keep else d
            for d in scaled.vsms))
        devices = scaled
    if event.device is not None:
        dev = devices.get(event.device)
        if not isinstance(dev, VsmConverter):
            raise ConfigError(f"device schedule for {event.device}: only grid-forming converters "
                              "support scheduled parameter changes")
        dev = dataclasses.replace(dev, **dict(event.values))
        devices = replace_devices(devices, {dev.id: dev})
    try:
        pf = solve_operating_point(net, devices, warm_start=model.pf)
    except (PowerFlowError, NumericalError) as exc:
        raise SimulationError(f"event at t={event.time_s:g} s ({event.label}): {exc}") from exc
    return assemble_model(net, devices, pf=pf), True


# --------------------------------------------------------------------------- traces

@dataclass
class SimTrace:
    t: np.ndarray
    samples: dict[str, np.ndarray]
    sample_dt: float
    scenario_tag: str = ""
    seed: int = 0
    trial: int = 0
    events: list[tuple[float, str]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return list(self.samples)

    def __getitem__(self, name) -> np.ndarray:
        return self.samples[name]

    def to_csv(self, path) -> None:
        data = np.column_stack([self.t] + [self.samples[n] for n in self.names])
        np.savetxt(path, data, fmt="%.12g", delimiter=",", header=",".join(["t"] + self.names),
                   comments="")

    def metadata(self) -> dict:
        md = {"seed": self.seed, "trial": self.trial, "scenario": self.scenario_tag,
              "sample_dt_s": self.sample_dt, "n_samples": int(self.t.size),
              "events": [{"time_s": t, "event": e} for t, e in self.events]}
        md.update(self.meta)
        return md

    def write(self, path) -> None:
        """CSV trace plus a ``.json`` sidecar with seed, scenario and provenance."""
        self.to_csv(path)
        with open(str(path) + ".json", "w") as fh:
            json.dump(self.metadata(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path) -> "SimTrace":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise ConfigError(f"{path}: first column must be 't'")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        dt = float(np.median(np.diff(t))) if t.size > 1 else 0.0
        meta = {}
        try:
            with open(str(path) + ".json") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            pass
        return cls(t=t, samples={n: data[:, k + 1] for k, n in enumerate(header[1:])},
                   sample_dt=meta.get("sample_dt_s", dt), scenario_tag=meta.get("scenario", ""),
                   seed=meta.get("seed", 0), trial=meta.get("trial", 0))


# --------------------------------------------------------------------------- integrator

def core_jacobian(model: DynamicModel, z: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of the packed core residual."""
    arr = model.arrays
    n = z.size
    jac = np.zeros((n, n))
    hz = 1e-6 * np.maximum(1.0, np.abs(z))
    for k in range(n):
        zp, zm = z.copy(), z.copy()
        zp[k] += hz[k]
        zm[k] -= hz[k]
        jac[:, k] = (core_residual(arr, zp, eta) - core_residual(arr, zm, eta)) / (2 * hz[k])
    return jac


def step_matrix(model: DynamicModel, z, eta, h: float):
    """LU factors of the chord matrix ``[[Lambda - h/2 F_z], [G_z]]``."""
    jac = core_jacobian(model, z, eta)
    nx = model.n_states
    m = jac.copy()
    m[:nx] *= -0.5 * h
    m[:nx, :nx] += np.diag(model.lambda_diag)
    try:
        return scipy.linalg.lu_factor(m, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SimulationError(f"integrator matrix could not be factored: {exc}") from exc


def packed_names(model: DynamicModel) -> list[str]:
    return list(model.state_names) + list(model.alg_names)


def solve_algebraic(model: DynamicModel, z: np.ndarray, eta: np.ndarray, tol: float = 1e-11,
                    max_iter: int = 30) -> np.ndarray:
    """Newton solve of the algebraic rows with the differential states held fixed."""
    nx = model.n_states
    z = z.copy()
    for _ in range(max_iter):
        r = core_residual(model.arrays, z, eta)[nx:]
        if np.max(np.abs(r), initial=0.0) <= tol:
            return z
        jac = core_jacobian(model, z, eta)[nx:, nx:]
        z[nx:] -= np.linalg.solve(jac, r)
    raise SimulationError("algebraic re-initialization did not converge "
                          f"(residual {np.max(np.abs(r)):.3e})")


def transfer_state(old: DynamicModel, z_old: np.ndarray, new: DynamicModel, eta) -> np.ndarray:
    """Carry a packed state across a model change by variable name, then
    re-solve the algebraic variables of the new model."""
    prev = dict(zip(packed_names(old), z_old))
    names = packed_names(new)[: new.n_states + new.arrays.n_core]
    z = np.concatenate([new.xi0, new.zeta0[: new.arrays.n_core]])
    for k, n in enumerate(names):
        if n in prev:
            z[k] = prev[n]
    return solve_algebraic(new, z, eta)


class Integrator:
    """Trapezoidal integrator for one model (one scenario segment)."""

    def __init__(self, model: DynamicModel, h: float, backend: str | None = None,
                 tol: float = NEWTON_TOL, max_iter: int = 8):
        self.model = model
        self.h = float(h)
        self.tol = tol
        self.max_iter = max_iter
        self.cls = _kernel.step_kernel_class(backend)
        z0 = np.concatenate([model.xi0, model.zeta0[: model.arrays.n_core]])
        self.a, self.s = ou_coefficients(model.ou, self.h)
        self.kernel = self._make(step_matrix(model, z0, np.zeros(model.n_noise), self.h),
                                 self.h, self.a, self.s)
        names = packed_names(model)
        self.index = {n: i for i, n in enumerate(names)}
        self.n_core_total = model.n_states + model.arrays.n_core
        self.refreshes = 0
        self.halvings = 0

    def _make(self, lu, h, a, s):
        return self.cls(self.model.arrays, self.model.lambda_diag, lu[0], lu[1], h, a, s,
                        self.tol, self.max_iter)

    def selection(self, names):
        try:
            sel = np.array([self.index[n] for n in names], dtype=np.int_)
        except KeyError as exc:
            raise ConfigError(f"unknown measurement {exc.args[0]!r}") from None
        return sel, bool(np.any(sel >= self.n_core_total))

    def run(self, z, eta, normals, step0, sample_every, sel, out, out_pos, need_outputs):
        """Advance ``len(normals)`` steps, recovering from Newton failures."""
        done = 0
        n = normals.shape[0]
        while done < n:
            k, out_pos, status = self.kernel.run(z, eta, normals[done:], step0 + done, sample_every,
                                                 sel, out, out_pos, need_outputs)
            done += k
            if status == 0:
                continue
            # failing step: refresh the chord matrix at the current point and retry once
            eta1 = self.a * eta + self.s * normals[done]
            self.refreshes += 1
            self.kernel = self._make(step_matrix(self.model, z, eta1, self.h), self.h, self.a, self.s)
            k, out_pos, status = self.kernel.run(z, eta, normals[done:done + 1], step0 + done,
                                                 sample_every, sel, out, out_pos, need_outputs)
            if status:
                self._halve(z, eta, eta1, self.h / 2)
                eta[:] = eta1
                if (step0 + done + 1) % sample_every == 0:
                    y = self.kernel.eval_outputs(z) if need_outputs else z
                    out[out_pos] = y[sel]
                    out_pos += 1
            done += 1
        return out_pos

    def _halve(self, z, eta0, eta1, h):
        """Two substeps of size ``h`` with the noise interpolated linearly."""
        if h < H_MIN:
            raise SimulationError(f"Newton iteration failed with step below {H_MIN:g} s")
        self.halvings += 1
        ones = np.ones_like(self.a)
        kern = self._make(step_matrix(self.model, z, eta1, h), h, ones, ones)
        mid = 0.5 * (eta0 + eta1)
        for e_from, e_to in ((eta0, mid), (mid, eta1)):
            e = e_from.copy()
            dn = np.ascontiguousarray((e_to - e_from)[None, :])
            dummy = np.zeros((1, 0))
            _, _, status = kern.run(z, e, dn, 0, 1 << 62, np.zeros(0, dtype=np.int_), dummy, 0, False)
            if status:
                self._halve(z, e_from, e_to, h / 2)


def _initial_eta(model: DynamicModel, rng) -> np.ndarray:
    std = np.sqrt([p.stationary_variance for p in model.ou])
    return rng.standard_normal(model.n_noise) * std


def simulate(model: DynamicModel, scenario: Scenario, seed: int = 0, names=None, trial: int = 0,
             backend: str | None = None, base=None, meta: dict | None = None) -> SimTrace:
    """Simulate ``scenario`` and return the sampled trace of ``names``.

    The OU processes start from a stationary draw and the system from its
    equilibrium; the first ``scenario.warmup_s`` seconds are discarded.
    Noise is drawn from a generator keyed by ``(seed, trial)``.
    """
    names = list(model.measurement_names if names is None else names)
    h = scenario.step_s
    every = scenario.sample_every
    rng = rng_for(seed, trial)
    base = (model.net, model.devices) if base is None else base

    events = list(scenario.events)
    applied: list[tuple[float, str]] = []
    while events and events[0].time_s <= 0.0:
        ev = events.pop(0)
        model, _ = apply_scenario_event(model, ev, base)
        applied.append((ev.time_s, ev.label))

    eta = _initial_eta(model, rng)
    z = np.concatenate([model.xi0, model.zeta0[: model.arrays.n_core]])
    integ = Integrator(model, h, backend)
    n_noise = model.n_noise

    def advance(n_steps, step0, sel, out, out_pos, need, sample_every):
        done = 0
        while done < n_steps:
            m = min(CHUNK, n_steps - done)
            normals = np.ascontiguousarray(rng.standard_normal((m, n_noise)))
            out_pos = integ.run(z, eta, normals, step0 + done, sample_every, sel, out, out_pos, need)
            done += m
        return out_pos

    # warm-up (not sampled)
    n_warm = int(round(scenario.warmup_s / h))
    empty_sel = np.zeros(0, dtype=np.int_)
    advance(n_warm, 0, empty_sel, np.zeros((0, 0)), 0, False, 1 << 62)

    n_steps_total = scenario.n_samples * every
    out = np.empty((scenario.n_samples, len(names)))
    out_pos = 0
    step = 0
    bounds = [int(round(ev.time_s / h)) for ev in events]
    for k in range(len(events) + 1):
        stop = min(bounds[k], n_steps_total) if k < len(events) else n_steps_total
        if stop > step:
            sel, need = integ.selection(names)
            out_pos = advance(stop - step, step, sel, out, out_pos, need, every)
            step = stop
        if k < len(events) and bounds[k] < n_steps_total:
            ev = events[k]
            new, _ = apply_scenario_event(model, ev, base)
            z = transfer_state(model, z, new, eta)
            model = new
            integ = Integrator(model, h, backend)
            applied.append((ev.time_s, ev.label))
    t = (np.arange(out_pos) + 1) * scenario.sample_dt_s
    md = {"backend": integ.cls.__module__.rsplit(".", 1)[-1], "step_s": h,
          "warmup_s": scenario.warmup_s}
    md.update(meta or {})
    return SimTrace(t=t, samples={n: out[:out_pos, i].copy() for i, n in enumerate(names)},
                    sample_dt=scenario.sample_dt_s, scenario_tag=scenario.tag, seed=seed,
                    trial=trial, events=applied, meta=md)
