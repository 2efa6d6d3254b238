"""Versioned YAML run configuration.

Every physical quantity is per unit on ``network.s_base`` unless the key
name carries a unit suffix (``_s`` seconds, ``_hz`` hertz, ``_mw`` megawatt)
or the field is documented otherwise (``H`` in seconds on the device rating,
``D``/``droop`` per unit on the device rating). See ``docs/config.md``.
"""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .devices import (Avr, DeviceSet, GflConverter, Governor, OuParams, StochasticLoad,
                      SyncMachine, VsmConverter)
from .errors import ConfigError
from .grid import Branch, Bus, Network

FORMAT_VERSION = 1
PRESETS = ("terminals", "boundaries", "voltages")


@dataclass
class FilterSection:
    enabled: bool = True
    f_lo_hz: float = 0.1
    f_hi_hz: float = 1.5
    order: int = 4


@dataclass
class MeasurementSection:
    preset: str = "terminals"
    names: list[str] | None = None
    boundaries: list[str] = field(default_factory=list)
    sample_dt_s: float = 0.025
    window_s: float = 900.0
    stride_s: float | None = None
    filter: FilterSection = field(default_factory=FilterSection)


@dataclass
class NoiseSection:
    upsilon: float = 0.5
    std_fraction: float = 0.05
    reactive: bool = False
    per_load: dict[str, dict[str, float]] = field(default_factory=dict)


@dataclass
class ScenarioSection:
    duration_s: float = 900.0
    warmup_s: float | None = None
    step_s: float = 0.005
    lambda_profile: Any = None
    setpoint_update_s: float = 900.0
    device_schedules: list[dict[str, Any]] = field(default_factory=list)
    clock_start_h: float = 0.0


@dataclass
class EstimationSection:
    param_set: str = "H"
    params: list[str] | None = None
    initial: dict[str, float] = field(default_factory=dict)
    reference: dict[str, float] = field(default_factory=dict)
    upper_bound: float = 100.0
    trials: int = 1
    seed: int = 1
    max_iter: int = 200
    cost_tol: float = 1e-12
    step_tol: float = 1e-10
    gfl_equivalent_x: float = 0.05
    gfl_equivalent: dict[str, float] = field(default_factory=dict)


@dataclass
class RunConfig:
    version: int
    network: Network
    devices: DeviceSet
    noise: NoiseSection = field(default_factory=NoiseSection)
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    measurement: MeasurementSection = field(default_factory=MeasurementSection)
    estimation: EstimationSection = field(default_factory=EstimationSection)
    name: str = ""
    source: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return dump_dict(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    @property
    def warmup_s(self) -> float:
        w = self.scenario.warmup_s
        return self.measurement.window_s / 3.0 if w is None else w


# --------------------------------------------------------------------------- parsing

class _Ctx:
    """Resolve a key path to a line in the YAML source for error messages."""

    def __init__(self, text: str | None, origin: str):
        self.origin = origin
        self.root = yaml.compose(text) if text else None

    def line(self, path) -> int | None:
        node = self.root
        best = None
        for key in path:
            if node is None:
                break
            best = node.start_mark.line + 1
            if isinstance(node, yaml.MappingNode):
                nxt = None
                for k, v in node.value:
                    if k.value == key:
                        best = k.start_mark.line + 1
                        nxt = v
                        break
                node = nxt
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
                node = node.value[key]
                best = node.start_mark.line + 1
            else:
                node = None
        if node is not None:
            best = node.start_mark.line + 1
        return best

    def fail(self, path, message):
        line = self.line(path)
        where = ".".join(str(p) for p in path)
        loc = f"{self.origin}:{line}" if line else self.origin
        raise ConfigError(f"{loc}: {where}: {message}")


def _take(ctx, path, d, spec, required=()):
    """Check keys of mapping ``d`` against ``spec`` (name -> type)."""
    if not isinstance(d, dict):
        ctx.fail(path, "expected a mapping")
    for k in d:
        if k not in spec:
            ctx.fail(path + [k], f"unknown key (allowed: {', '.join(spec)})")
    for k in required:
        if k not in d:
            ctx.fail(path, f"missing required key {k!r}")
    out = {}
    for k, typ in spec.items():
        if k not in d:
            continue
        val = d[k]
        if typ is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                ctx.fail(path + [k], f"expected a number, got {val!r}")
            val = float(val)
        elif typ is int:
            if isinstance(val, bool) or not isinstance(val, int):
                ctx.fail(path + [k], f"expected an integer, got {val!r}")
        elif typ is str:
            if not isinstance(val, str):
                ctx.fail(path + [k], f"expected a string, got {val!r}")
        elif typ is bool:
            if not isinstance(val, bool):
                ctx.fail(path + [k], f"expected true/false, got {val!r}")
        out[k] = val
    return out


def _build(ctx, path, cls, kwargs):
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        ctx.fail(path, str(exc))
    except TypeError as exc:
        ctx.fail(path, str(exc))


def parse_config(data: dict, text: str | None = None, origin: str = "<config>") -> RunConfig:
    ctx = _Ctx(text, origin)
    top = _take(ctx, [], data, {
        "version": int, "name": str, "network": dict, "devices": dict, "noise": dict,
        "scenario": dict, "measurement": dict, "estimation": dict,
    }, required=("version", "network", "devices"))
    if top["version"] != FORMAT_VERSION:
        ctx.fail(["version"], f"unsupported format version {top['version']} "
                 f"(this build reads version {FORMAT_VERSION})")

    # network
    nd = _take(ctx, ["network"], top["network"], {
        "s_base_mva": float, "f_base_hz": float, "buses": list, "branches": list,
    }, required=("buses",))
    buses = []
    for i, b in enumerate(nd["buses"]):
        p = ["network", "buses", i]
        kw = _take(ctx, p, b, {"id": str, "kind": str, "base_kv": float, "v_set": float,
                               "p_inj": float, "q_inj": float}, required=("id",))
        buses.append(_build(ctx, p, Bus, kw))
    branches = []
    for i, br in enumerate(nd.get("branches", [])):
        p = ["network", "branches", i]
        kw = _take(ctx, p, br, {"id": str, "from": str, "to": str, "r": float, "x": float,
                                "b_sh": float, "tap": float, "status": bool},
                   required=("id", "from", "to", "x"))
        kw["from_bus"] = kw.pop("from")
        kw["to_bus"] = kw.pop("to")
        branches.append(_build(ctx, p, Branch, kw))
    net = Network(buses=tuple(buses), branches=tuple(branches),
                  s_base=nd.get("s_base_mva", 100.0), f_base=nd.get("f_base_hz", 50.0))
    try:
        net.validate()
    except ConfigError as exc:
        ctx.fail(["network"], str(exc))

    # noise (needed before loads)
    ns = _take(ctx, ["noise"], top.get("noise", {}), {
        "upsilon": float, "std_fraction": float, "reactive": bool, "per_load": dict})
    noise = NoiseSection(**ns)
    if not noise.upsilon > 0:
        ctx.fail(["noise", "upsilon"], "must be > 0")
    if noise.std_fraction < 0:
        ctx.fail(["noise", "std_fraction"], "must be >= 0")

    # devices
    dd = _take(ctx, ["devices"], top["devices"], {
        "machines": list, "vsm": list, "gfl": list, "loads": list})
    machines = []
    for i, m in enumerate(dd.get("machines", [])):
        p = ["devices", "machines", i]
        kw = _take(ctx, p, m, {"id": str, "bus": str, "H": float, "D": float,
                               "x_d_prime": float, "p_rat_mw": float, "omega0": float,
                               "governor": dict, "avr": dict}, required=("id", "bus", "H"))
        if "p_rat_mw" in kw:
            kw["p_rat"] = kw.pop("p_rat_mw")
        if "governor" in kw:
            g = _take(ctx, p + ["governor"], kw["governor"],
                      {"droop_gain": float, "t_g_s": float, "p_ref": float})
            if "t_g_s" in g:
                g["t_g"] = g.pop("t_g_s")
            kw["governor"] = _build(ctx, p + ["governor"], Governor, g)
        if "avr" in kw:
            a = _take(ctx, p + ["avr"], kw["avr"], {"k_a": float, "t_a_s": float, "v_ref": float})
            if "t_a_s" in a:
                a["t_a"] = a.pop("t_a_s")
            kw["avr"] = _build(ctx, p + ["avr"], Avr, a)
        machines.append(_build(ctx, p, SyncMachine, kw))
    vsms = []
    for i, c in enumerate(dd.get("vsm", [])):
        p = ["devices", "vsm", i]
        kw = _take(ctx, p, c, {"id": str, "bus": str, "H_eq": float, "D_eq": float,
                               "p_set": float, "q_set": float, "x_c": float,
                               "p_rat_mw": float, "omega0": float, "schedule": list},
                   required=("id", "bus", "H_eq", "D_eq", "p_set"))
        if "p_rat_mw" in kw:
            kw["p_rat"] = kw.pop("p_rat_mw")
        if "schedule" in kw:
            sched = []
            for j, ev in enumerate(kw["schedule"]):
                e = _take(ctx, p + ["schedule", j], ev, {"time_s": float, "H_eq": float},
                          required=("time_s", "H_eq"))
                sched.append((e["time_s"], e["H_eq"]))
            kw["schedule"] = tuple(sched)
        vsms.append(_build(ctx, p, VsmConverter, kw))
    gfls = []
    for i, c in enumerate(dd.get("gfl", [])):
        p = ["devices", "gfl", i]
        kw = _take(ctx, p, c, {"id": str, "bus": str, "droop": float, "t_f_s": float,
                               "p_set": float, "q_set": float, "p_rat_mw": float,
                               "omega0": float},
                   required=("id", "bus", "droop", "t_f_s", "p_set"))
        kw["t_f"] = kw.pop("t_f_s")
        if "p_rat_mw" in kw:
            kw["p_rat"] = kw.pop("p_rat_mw")
        gfls.append(_build(ctx, p, GflConverter, kw))
    loads = []
    for i, ld in enumerate(dd.get("loads", [])):
        p = ["devices", "loads", i]
        kw = _take(ctx, p, ld, {"id": str, "bus": str, "p_l0": float, "q_l0": float,
                                "v0": float, "gamma": float}, required=("id", "bus", "p_l0"))
        over = noise.per_load.get(kw["id"], {})
        over = _take(ctx, ["noise", "per_load", kw["id"]], over,
                     {"upsilon": float, "sigma": float, "std_fraction": float})
        ups = over.get("upsilon", noise.upsilon)
        try:
            if "sigma" in over:
                ou = OuParams(upsilon=ups, sigma=over["sigma"])
            else:
                ou = OuParams.from_std(over.get("std_fraction", noise.std_fraction), ups)
        except ConfigError as exc:
            ctx.fail(["noise", "per_load", kw["id"]], str(exc))
        kw["ou"] = ou
        kw["ou_q"] = ou if noise.reactive else None
        loads.append(_build(ctx, p, StochasticLoad, kw))
    devices = DeviceSet(machines=tuple(machines), vsms=tuple(vsms), gfls=tuple(gfls),
                        loads=tuple(loads))

    # scenario
    sd = _take(ctx, ["scenario"], top.get("scenario", {}), {
        "duration_s": float, "warmup_s": float, "step_s": float, "lambda_profile": object,
        "setpoint_update_s": float, "device_schedules": list, "clock_start_h": float})
    scenario = ScenarioSection(**sd)
    if not scenario.duration_s > 0:
        ctx.fail(["scenario", "duration_s"], "must be > 0")
    if not scenario.step_s > 0:
        ctx.fail(["scenario", "step_s"], "must be > 0")
    lp = scenario.lambda_profile
    if lp is not None and lp != "duck":
        if not isinstance(lp, list) or not all(
                isinstance(e, list) and len(e) == 2 and all(isinstance(x, (int, float)) for x in e)
                for e in lp):
            ctx.fail(["scenario", "lambda_profile"], "expected 'duck' or a list of [time_s, lambda]")
        if any(e[1] <= 0 for e in lp):
            ctx.fail(["scenario", "lambda_profile"], "multipliers must be > 0")
    for j, ev in enumerate(scenario.device_schedules):
        _take(ctx, ["scenario", "device_schedules", j], ev,
              {"time_s": float, "device": str, "H_eq": float, "D_eq": float},
              required=("time_s", "device"))

    # measurement
    md = _take(ctx, ["measurement"], top.get("measurement", {}), {
        "preset": str, "names": list, "boundaries": list, "sample_dt_s": float,
        "window_s": float, "stride_s": float, "filter": dict})
    if "filter" in md:
        md["filter"] = FilterSection(**_take(ctx, ["measurement", "filter"], md["filter"], {
            "enabled": bool, "f_lo_hz": float, "f_hi_hz": float, "order": int}))
    meas = MeasurementSection(**md)
    if meas.preset not in PRESETS:
        ctx.fail(["measurement", "preset"], f"must be one of {PRESETS}")
    if not meas.sample_dt_s > 0:
        ctx.fail(["measurement", "sample_dt_s"], "must be > 0")
    ratio = meas.window_s / meas.sample_dt_s
    if abs(ratio - round(ratio)) > 1e-9:
        ctx.fail(["measurement", "window_s"], "must be an integral number of samples")
    ratio = meas.sample_dt_s / scenario.step_s
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        ctx.fail(["scenario", "step_s"], "sample_dt_s must be an integral multiple of step_s")
    f = meas.filter
    if not 0 < f.f_lo_hz < f.f_hi_hz < 0.5 / meas.sample_dt_s:
        ctx.fail(["measurement", "filter"], "need 0 < f_lo_hz < f_hi_hz < Nyquist")

    ed = _take(ctx, ["estimation"], top.get("estimation", {}), {
        "param_set": str, "params": list, "initial": dict, "reference": dict,
        "upper_bound": float, "trials": int, "seed": int, "max_iter": int,
        "cost_tol": float, "step_tol": float, "gfl_equivalent_x": float,
        "gfl_equivalent": dict})
    est = EstimationSection(**ed)
    if est.param_set not in ("H", "D"):
        ctx.fail(["estimation", "param_set"], "must be H or D")
    if est.trials < 1:
        ctx.fail(["estimation", "trials"], "must be >= 1")

    return RunConfig(version=top["version"], name=top.get("name", ""), network=net,
                     devices=devices, noise=noise, scenario=scenario, measurement=meas,
                     estimation=est, source=copy.deepcopy(data))


def loads(text: str, origin: str = "<string>") -> RunConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{origin}: invalid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    return parse_config(data, text, origin)


def load(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return loads(path.read_text(), str(path))


# --------------------------------------------------------------------------- dumping

def _clean(d):
    return {k: v for k, v in d.items() if v is not None}


def dump_dict(cfg: RunConfig) -> dict:
    net = cfg.network
    out: dict[str, Any] = {"version": cfg.version}
    if cfg.name:
        out["name"] = cfg.name
    out["network"] = {
        "s_base_mva": net.s_base, "f_base_hz": net.f_base,
        "buses": [_clean({"id": b.id, "kind": b.kind, "base_kv": b.base_kv, "v_set": b.v_set,
                          "p_inj": b.p_inj, "q_inj": b.q_inj}) for b in net.buses],
        "branches": [{"id": br.id, "from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x,
                      "b_sh": br.b_sh, "tap": br.tap, "status": br.status}
                     for br in net.branches],
    }
    dv = cfg.devices
    machines = []
    for m in dv.machines:
        e = {"id": m.id, "bus": m.bus, "H": m.H, "D": m.D, "x_d_prime": m.x_d_prime,
             "p_rat_mw": m.p_rat, "omega0": m.omega0}
        if m.governor:
            e["governor"] = _clean({"droop_gain": m.governor.droop_gain, "t_g_s": m.governor.t_g,
                                    "p_ref": m.governor.p_ref})
        if m.avr:
            e["avr"] = _clean({"k_a": m.avr.k_a, "t_a_s": m.avr.t_a, "v_ref": m.avr.v_ref})
        machines.append(e)
    devices: dict[str, Any] = {"machines": machines}
    devices["vsm"] = [{"id": c.id, "bus": c.bus, "H_eq": c.H_eq, "D_eq": c.D_eq,
                       "p_set": c.p_set, "q_set": c.q_set, "x_c": c.x_c, "p_rat_mw": c.p_rat,
                       "omega0": c.omega0,
                       "schedule": [{"time_s": t, "H_eq": h} for t, h in c.schedule]}
                      for c in dv.vsms]
    devices["gfl"] = [{"id": c.id, "bus": c.bus, "droop": c.droop, "t_f_s": c.t_f,
                       "p_set": c.p_set, "q_set": c.q_set, "p_rat_mw": c.p_rat,
                       "omega0": c.omega0} for c in dv.gfls]
    devices["loads"] = [{"id": ld.id, "bus": ld.bus, "p_l0": ld.p_l0, "q_l0": ld.q_l0,
                         "v0": ld.v0, "gamma": ld.gamma} for ld in dv.loads]
    out["devices"] = devices
    out["noise"] = dataclasses.asdict(cfg.noise)
    out["scenario"] = dataclasses.asdict(cfg.scenario)
    if out["scenario"]["warmup_s"] is None:
        del out["scenario"]["warmup_s"]
    m = dataclasses.asdict(cfg.measurement)
    out["measurement"] = _clean(m)
    out["estimation"] = _clean(dataclasses.asdict(cfg.estimation))
    return out


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Copy of ``cfg`` with top-level section fields replaced, e.g.
    ``with_overrides(cfg, scenario={"duration_s": 60})``.

    The result is re-parsed so derived objects (load noise, devices) follow
    the new values.
    """
    data = copy.deepcopy(dump_dict(cfg))
    for sec, values in sections.items():
        if sec in ("network", "devices"):
            data[sec] = values
            continue
        if sec not in data or not isinstance(data[sec], dict):
            data.setdefault(sec, {})
        for k, v in values.items():
            if not hasattr(getattr(cfg, sec), k):
                raise ConfigError(f"unknown field {sec}.{k}")
            data[sec][k] = v
    return parse_config(data, origin=f"{cfg.name or '<config>'} (overridden)")
