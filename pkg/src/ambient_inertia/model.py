"""Assembly of the power-system DAE ``Lambda xi' = F(xi, zeta)``, ``0 = G(xi, zeta) + Xi eta``.

State vector ``xi`` = [omega, delta, x] where omega holds the rotor speeds of
swing devices with positive inertia, delta the swing-device angles and x the
governor, AVR and grid-following states. Algebraic vector ``zeta`` =
[v, theta, y]; y holds the internal algebraic variables (speed of zero-inertia
grid-forming converters, grid-following output power) followed by the
measurable current magnitudes.

The numeric description lives in :class:`ModelArrays`, a bag of flat arrays
read both by the vectorized residual below and by the compiled integrator.
Angle reference. When a synchronous machine sits on the slack bus it is the
reference machine: its rotor angle is held at the power-flow value (it is not
a state) and every other angle moves with the speed difference to it, so all
bus voltages are free. A slack bus without a machine is an infinite bus whose
voltage magnitude and angle are held fixed.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .devices import DeviceSet, GflConverter, OuParams, SyncMachine, VsmConverter
from .errors import ConfigError, InitializationError
from .grid import Network, PowerFlowSolution, build_admittance, solve_power_flow

EQ_TOL = 1e-8


@dataclass
class ModelArrays:
    omega_base: float
    nbus: int
    n_x: int
    n_core: int
    slack: int
    ref: int  # swing index of the reference machine, -1 for an infinite bus
    v_slack: float
    th_slack: float
    Yr: np.ndarray
    Yi: np.ndarray
    fixed_p: np.ndarray
    fixed_q: np.ndarray
    v_idx: np.ndarray
    th_idx: np.ndarray
    # swing devices (machines then grid-forming converters)
    sw_bus: np.ndarray
    sw_w: np.ndarray
    sw_d: np.ndarray
    sw_pm: np.ndarray
    sw_e: np.ndarray
    sw_D: np.ndarray
    sw_x: np.ndarray
    sw_ratio: np.ndarray
    sw_omega0: np.ndarray
    sw_pm_const: np.ndarray
    sw_e_const: np.ndarray
    sw_kg: np.ndarray
    sw_pref: np.ndarray
    sw_ka: np.ndarray
    sw_vref: np.ndarray
    sw_e0: np.ndarray
    sw_d_const: np.ndarray
    # grid-following converters
    gf_bus: np.ndarray
    gf_s: np.ndarray
    gf_p: np.ndarray
    gf_droop: np.ndarray
    gf_tf: np.ndarray
    gf_pset: np.ndarray
    gf_qset: np.ndarray
    # loads
    ld_bus: np.ndarray
    ld_p: np.ndarray
    ld_q: np.ndarray
    ld_v0: np.ndarray
    ld_gamma: np.ndarray
    ld_ou_p: np.ndarray
    ld_ou_q: np.ndarray
    # explicit outputs: |C @ W| with W = [V_bus, E_k exp(j delta_k)]; grid-following rows overwritten
    out_Cr: np.ndarray
    out_Ci: np.ndarray
    out_gf_row: np.ndarray
    out_gf_dev: np.ndarray

    @property
    def n_out(self) -> int:
        return self.out_Cr.shape[0]

    def copy(self) -> "ModelArrays":
        return dataclasses.replace(self, **{
            f.name: np.array(getattr(self, f.name), copy=True)
            for f in dataclasses.fields(self) if isinstance(getattr(self, f.name), np.ndarray)
        })


def _i(values):
    return np.asarray(values, dtype=np.int64).reshape(-1)


def _f(values):
    return np.asarray(values, dtype=float).reshape(-1)


def ref_speed_deviation(arr: ModelArrays, z: np.ndarray) -> float:
    """Speed deviation of the reference machine (zero against an infinite bus)."""
    if arr.ref < 0:
        return 0.0
    return float(z[arr.sw_w[arr.ref]] - arr.sw_omega0[arr.ref])


def _angles(arr, z):
    return np.where(arr.sw_d >= 0, z[np.maximum(arr.sw_d, 0)], arr.sw_d_const)


def core_residual(arr: ModelArrays, z: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Residual ``[F(xi, zeta_core); G_core(xi, zeta_core) + noise]`` on the packed vector ``z``.

    Row ``k < n_x`` is the differential right-hand side of state ``k``.
    P-balance rows sit at the theta positions and Q-balance rows at the
    v positions; on an infinite slack bus they pin theta and v.
    """
    Om = arr.omega_base
    r = np.zeros(arr.n_x + arr.n_core)
    v = z[arr.v_idx]
    th = z[arr.th_idx]
    V = v * np.exp(1j * th)
    S = V * np.conj((arr.Yr + 1j * arr.Yi) @ V)
    P = arr.fixed_p - S.real
    Q = arr.fixed_q - S.imag
    dw_ref = ref_speed_deviation(arr, z)

    if arr.sw_bus.size:
        b = arr.sw_bus
        w = z[arr.sw_w]
        d = _angles(arr, z)
        E = np.where(arr.sw_e >= 0, z[np.maximum(arr.sw_e, 0)], arr.sw_e_const)
        pm = np.where(arr.sw_pm >= 0, z[np.maximum(arr.sw_pm, 0)], arr.sw_pm_const)
        ang = d - th[b]
        pe = E * v[b] * np.sin(ang) / arr.sw_x
        qe = (E * v[b] * np.cos(ang) - v[b] ** 2) / arr.sw_x
        np.add.at(P, b, pe)
        np.add.at(Q, b, qe)
        dw = w - arr.sw_omega0
        r[arr.sw_w] = pm - pe / arr.sw_ratio - arr.sw_D * dw
        has_d = arr.sw_d >= 0
        r[arr.sw_d[has_d]] = Om * (dw[has_d] - dw_ref)
        g = arr.sw_pm >= 0
        r[arr.sw_pm[g]] = arr.sw_pref[g] - arr.sw_kg[g] * dw[g] - pm[g]
        a = arr.sw_e >= 0
        r[arr.sw_e[a]] = arr.sw_e0[a] + arr.sw_ka[a] * (arr.sw_vref[a] - v[b[a]]) - E[a]

    if arr.gf_bus.size:
        b = arr.gf_bus
        p = z[arr.gf_p]
        np.add.at(P, b, p)
        np.add.at(Q, b, arr.gf_qset)
        r[arr.gf_s] = arr.gf_pset - p - arr.gf_droop * dw_ref
        r[arr.gf_p] = p - (z[arr.gf_s] - arr.gf_droop * th[b] / Om) / arr.gf_tf

    if arr.ld_bus.size:
        b = arr.ld_bus
        fac = (v[b] / arr.ld_v0) ** arr.ld_gamma
        ep = np.where(arr.ld_ou_p >= 0, eta[np.maximum(arr.ld_ou_p, 0)], 0.0) if eta.size else 0.0
        eq = np.where(arr.ld_ou_q >= 0, eta[np.maximum(arr.ld_ou_q, 0)], 0.0) if eta.size else 0.0
        np.add.at(P, b, -(1.0 + ep) * arr.ld_p * fac)
        np.add.at(Q, b, -(1.0 + eq) * arr.ld_q * fac)

    r[arr.th_idx] = P
    r[arr.v_idx] = Q
    if arr.ref < 0:
        s = arr.slack
        r[arr.th_idx[s]] = th[s] - arr.th_slack
        r[arr.v_idx[s]] = v[s] - arr.v_slack
    return r


def phasors(arr: ModelArrays, z: np.ndarray) -> np.ndarray:
    """``W = [V_bus, E_k exp(j delta_k)]`` for the packed vector ``z``."""
    v = z[arr.v_idx]
    th = z[arr.th_idx]
    E = np.where(arr.sw_e >= 0, z[np.maximum(arr.sw_e, 0)], arr.sw_e_const)
    return np.concatenate([v * np.exp(1j * th), E * np.exp(1j * _angles(arr, z))])


def output_values(arr: ModelArrays, z: np.ndarray) -> np.ndarray:
    W = phasors(arr, z)
    y = np.abs((arr.out_Cr + 1j * arr.out_Ci) @ W)
    if arr.out_gf_row.size:
        k = arr.out_gf_dev
        p = z[arr.gf_p[k]]
        q = arr.gf_qset[k]
        y[arr.out_gf_row] = np.hypot(p, q) / z[arr.v_idx[arr.gf_bus[k]]]
    return y


@dataclass
class DynamicModel:
    net: Network
    devices: DeviceSet
    pf: PowerFlowSolution
    arrays: ModelArrays
    state_names: list[str]
    alg_names: list[str]
    lambda_diag: np.ndarray
    xi_inject: np.ndarray
    ou: list[OuParams]
    noise_names: list[str]
    xi0: np.ndarray
    zeta0: np.ndarray
    params: dict[str, tuple[str, str]] = field(default_factory=dict)

    @property
    def state_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.state_names)}

    @property
    def alg_index(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.alg_names)}

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    @property
    def n_alg(self) -> int:
        return len(self.alg_names)

    @property
    def n_noise(self) -> int:
        return len(self.ou)

    @property
    def measurement_names(self) -> list[str]:
        return list(self.alg_names)

    def pack(self, xi, zeta) -> np.ndarray:
        n_core = self.arrays.n_core
        return np.concatenate([np.asarray(xi, float), np.asarray(zeta, float)[:n_core]])

    def f_tilde(self, xi, zeta) -> np.ndarray:
        z = self.pack(xi, zeta)
        return core_residual(self.arrays, z, np.zeros(self.n_noise))[: self.n_states]

    def g(self, xi, zeta, eta=None) -> np.ndarray:
        """Algebraic residual; with ``eta`` given the full nonlinear noisy form is used."""
        arr = self.arrays
        z = self.pack(xi, zeta)
        eta = np.zeros(self.n_noise) if eta is None else np.asarray(eta, float)
        core = core_residual(arr, z, eta)[arr.n_x:]
        outs = np.asarray(zeta, float)[arr.n_core:] - output_values(arr, z)
        return np.concatenate([core, outs])

    def residual_at_equilibrium(self) -> tuple[float, float]:
        return (float(np.max(np.abs(self.f_tilde(self.xi0, self.zeta0)), initial=0.0)),
                float(np.max(np.abs(self.g(self.xi0, self.zeta0)), initial=0.0)))

    def parameter_value(self, name: str) -> float:
        kind, dev_id = self._param(name)
        dev = self.devices.get(dev_id)
        return float(dev.H if kind == "H" else dev.D)

    def parameter_row(self, name: str) -> int:
        """Row of ``xi`` (the omega row) that a parameter acts on."""
        kind, dev_id = self._param(name)
        return self.state_index[f"omega_{dev_id}"]

    def _param(self, name):
        try:
            return self.params[name]
        except KeyError:
            raise ConfigError(f"unknown parameter {name!r}; known: {sorted(self.params)}") from None

    def with_parameters(self, values: dict[str, float]) -> "DynamicModel":
        """Rebuild at the same operating point with new H/D values (full re-assembly)."""
        devs = {}
        for name, val in values.items():
            kind, dev_id = self._param(name)
            dev = devs.get(dev_id, self.devices.get(dev_id))
            if isinstance(dev, VsmConverter):
                dev = dataclasses.replace(dev, **{("H_eq" if kind == "H" else "D_eq"): float(val)})
            else:
                dev = dataclasses.replace(dev, **{kind: float(val)})
            devs[dev_id] = dev
        return assemble_model(self.net, replace_devices(self.devices, devs), pf=self.pf)


def replace_devices(devices: DeviceSet, new: dict) -> DeviceSet:
    def sub(seq):
        return tuple(new.get(d.id, d) for d in seq)

    return DeviceSet(machines=sub(devices.machines), vsms=sub(devices.vsms),
                     gfls=sub(devices.gfls), loads=sub(devices.loads))


def scheduled_injections(net: Network, devices: DeviceSet, v=None):
    """Net bus injections for the power flow (loads evaluated at voltages ``v``)."""
    n = len(net.buses)
    v = np.ones(n) if v is None else v
    p = np.array([b.p_inj for b in net.buses], dtype=float)
    q = np.array([b.q_inj if b.kind == "pq" else 0.0 for b in net.buses], dtype=float)
    for c in devices.vsms + devices.gfls:
        i = net.bus_index(c.bus)
        p[i] += c.p_set
        q[i] += c.q_set
    for ld in devices.loads:
        i = net.bus_index(ld.bus)
        fac = (v[i] / ld.v0) ** ld.gamma
        p[i] -= ld.p_l0 * fac
        q[i] -= ld.q_l0 * fac
    return p, q


def solve_operating_point(net: Network, devices: DeviceSet, tol: float = 1e-10,
                          max_iter: int = 50, warm_start=None) -> PowerFlowSolution:
    """Power flow with voltage-dependent loads resolved by fixed-point iteration."""
    pf = warm_start
    v = None if pf is None else pf.v
    for _ in range(50):
        p, q = scheduled_injections(net, devices, v)
        pf = solve_power_flow(net.with_injections(p, q), tol=tol, max_iter=max_iter,
                              warm_start=pf)
        if v is not None and np.max(np.abs(pf.v - v)) < 1e-13:
            break
        if all(ld.gamma == 0 for ld in devices.loads):
            break
        v = pf.v
    return pf


def _validate(net: Network, devices: DeviceSet):
    net.validate()
    ids = [d.id for d in devices.all()] + [br.id for br in net.branches] + net.bus_ids
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise ConfigError(f"identifiers must be unique across buses, branches and devices: {dup}")
    known = set(net.bus_ids)
    slack_id = net.buses[net.slack].id
    for d in devices.all():
        if d.bus not in known:
            raise ConfigError(f"device {d.id} attached to unknown bus {d.bus!r}")
        if d.bus == slack_id and isinstance(d, (VsmConverter, GflConverter)):
            raise ConfigError(f"converter {d.id} may not sit on the slack bus")
    for m in devices.machines:
        if net.buses[net.bus_index(m.bus)].kind == "pq":
            raise ConfigError(f"machine {m.id} must sit on a pv or slack bus")
    for b in net.buses:
        if b.kind == "pv" and not any(m.bus == b.id for m in devices.machines):
            raise ConfigError(f"pv bus {b.id} has no synchronous machine")


def assemble_model(net: Network, devices: DeviceSet, pf: PowerFlowSolution | None = None,
                   check: bool = True) -> DynamicModel:
    """Build the DAE and initialize every device state at the power-flow equilibrium."""
    _validate(net, devices)
    if pf is None:
        pf = solve_operating_point(net, devices)
    Om = net.omega_base
    sb = net.s_base
    nbus = len(net.buses)
    bidx = {b.id: i for i, b in enumerate(net.buses)}
    Vpf = pf.voltage
    swing = list(devices.swing_devices)
    gfls = list(devices.gfls)
    loads = list(devices.loads)
    slack_id = net.buses[net.slack].id
    ref = next((k for k, d in enumerate(swing)
                if isinstance(d, SyncMachine) and d.bus == slack_id), -1)

    # ---- index layout
    state_names: list[str] = []
    lam: list[float] = []
    for d in swing:
        if d.H > 0:
            state_names.append(f"omega_{d.id}")
            lam.append(2.0 * d.H)
    for k, d in enumerate(swing):
        if k != ref:
            state_names.append(f"delta_{d.id}")
            lam.append(1.0)
    for m in devices.machines:
        if m.governor is not None:
            state_names.append(f"pm_{m.id}")
            lam.append(m.governor.t_g)
    for m in devices.machines:
        if m.avr is not None:
            state_names.append(f"e_{m.id}")
            lam.append(m.avr.t_a)
    for c in gfls:
        state_names.append(f"s_{c.id}")
        lam.append(1.0)
    n_x = len(state_names)

    core_names = [f"v_{b.id}" for b in net.buses] + [f"theta_{b.id}" for b in net.buses]
    core_names += [f"omega_{d.id}" for d in swing if d.H == 0]
    core_names += [f"p_{c.id}" for c in gfls]
    n_core = len(core_names)
    out_names = [f"i_{d.id}" for d in swing] + [f"i_{c.id}" for c in gfls]
    out_names += [f"i_{br.id}" for br in net.live_branches]
    alg_names = core_names + out_names
    pos = {n: i for i, n in enumerate(state_names)}
    pos.update({n: n_x + i for i, n in enumerate(core_names)})

    # ---- power sharing at pv buses
    p_sched, q_sched = scheduled_injections(net, devices, pf.v)
    gen_p = pf.p - p_sched
    gen_q = pf.q - q_sched
    for i, b in enumerate(net.buses):
        if b.kind in ("pv", "slack"):
            gen_p[i] += b.p_inj  # machines carry the scheduled dispatch
    rating_at = {}
    for m in devices.machines:
        rating_at[m.bus] = rating_at.get(m.bus, 0.0) + m.p_rat

    ns = len(swing)
    sw = {k: np.zeros(ns) for k in ("D", "x", "ratio", "omega0", "pm_const", "e_const",
                                    "kg", "pref", "ka", "vref", "e0", "d_const")}
    sw_pm = -np.ones(ns, dtype=np.int64)
    sw_e = -np.ones(ns, dtype=np.int64)
    xi0 = np.zeros(n_x)
    zc0 = np.zeros(n_core)
    zc0[:nbus] = pf.v
    zc0[nbus:2 * nbus] = pf.theta

    def put(name, value):
        p = pos[name]
        if p < n_x:
            xi0[p] = value
        else:
            zc0[p - n_x] = value

    for k, d in enumerate(swing):
        i = bidx[d.bus]
        ratio = d.p_rat / sb
        if isinstance(d, SyncMachine):
            share = d.p_rat / rating_at[d.bus]
            S = share * complex(gen_p[i], gen_q[i])
            x_sys = d.x_d_prime / ratio
        else:
            S = complex(d.p_set, d.q_set)
            x_sys = d.x_c / ratio
        I = np.conj(S / Vpf[i])
        Ed = Vpf[i] + 1j * x_sys * I
        E, delta = abs(Ed), float(np.angle(Ed))
        pm = S.real / ratio
        sw["D"][k] = d.D
        sw["x"][k] = x_sys
        sw["ratio"][k] = ratio
        sw["omega0"][k] = d.omega0
        sw["pm_const"][k] = pm
        sw["e_const"][k] = E
        put(f"omega_{d.id}", d.omega0)
        if k == ref:
            sw["d_const"][k] = delta
        else:
            put(f"delta_{d.id}", delta)
        gov = getattr(d, "governor", None)
        if gov is not None:
            sw_pm[k] = pos[f"pm_{d.id}"]
            sw["kg"][k] = gov.droop_gain
            sw["pref"][k] = pm if gov.p_ref is None else gov.p_ref
            put(f"pm_{d.id}", pm)
        avr = getattr(d, "avr", None)
        if avr is not None:
            sw_e[k] = pos[f"e_{d.id}"]
            sw["ka"][k] = avr.k_a
            sw["vref"][k] = pf.v[i] if avr.v_ref is None else avr.v_ref
            sw["e0"][k] = E
            put(f"e_{d.id}", E)

    gf_droop = np.array([c.droop * c.p_rat / sb for c in gfls])
    for c, dr in zip(gfls, gf_droop):
        i = bidx[c.bus]
        put(f"p_{c.id}", c.p_set)
        put(f"s_{c.id}", c.t_f * c.p_set + dr * pf.theta[i] / Om)

    # ---- noise sources
    ou: list[OuParams] = []
    noise_names: list[str] = []
    ld_ou_p = -np.ones(len(loads), dtype=np.int64)
    ld_ou_q = -np.ones(len(loads), dtype=np.int64)
    for j, ld in enumerate(loads):
        ld_ou_p[j] = len(ou)
        ou.append(ld.ou)
        noise_names.append(f"eta_{ld.id}")
    for j, ld in enumerate(loads):
        if ld.ou_q is not None:
            ld_ou_q[j] = len(ou)
            ou.append(ld.ou_q)
            noise_names.append(f"etaq_{ld.id}")

    # ---- outputs
    n_out = len(out_names)
    C = np.zeros((n_out, nbus + ns), dtype=complex)
    out_gf_row, out_gf_dev = [], []
    row = 0
    for k, d in enumerate(swing):
        i = bidx[d.bus]
        C[row, nbus + k] = 1.0 / (1j * sw["x"][k])
        C[row, i] = -1.0 / (1j * sw["x"][k])
        row += 1
    for g in range(len(gfls)):
        out_gf_row.append(row)
        out_gf_dev.append(g)
        row += 1
    for br in net.live_branches:
        yff, yft, _, _ = br.primitive()
        C[row, bidx[br.from_bus]] += yff
        C[row, bidx[br.to_bus]] += yft
        row += 1

    Y = build_admittance(net)
    fixed_p = np.array([b.p_inj if b.kind == "pq" else 0.0 for b in net.buses])
    fixed_q = np.array([b.q_inj if b.kind == "pq" else 0.0 for b in net.buses])
    slack = net.slack
    arr = ModelArrays(
        omega_base=Om, nbus=nbus, n_x=n_x, n_core=n_core, slack=slack, ref=ref,
        v_slack=float(pf.v[slack]), th_slack=float(pf.theta[slack]),
        Yr=np.ascontiguousarray(Y.real), Yi=np.ascontiguousarray(Y.imag),
        fixed_p=fixed_p, fixed_q=fixed_q,
        v_idx=_i([pos[f"v_{b.id}"] for b in net.buses]),
        th_idx=_i([pos[f"theta_{b.id}"] for b in net.buses]),
        sw_bus=_i([bidx[d.bus] for d in swing]),
        sw_w=_i([pos[f"omega_{d.id}"] for d in swing]),
        sw_d=_i([-1 if k == ref else pos[f"delta_{d.id}"] for k, d in enumerate(swing)]),
        sw_pm=sw_pm, sw_e=sw_e,
        sw_D=sw["D"], sw_x=sw["x"], sw_ratio=sw["ratio"], sw_omega0=sw["omega0"],
        sw_pm_const=sw["pm_const"], sw_e_const=sw["e_const"], sw_kg=sw["kg"],
        sw_pref=sw["pref"], sw_ka=sw["ka"], sw_vref=sw["vref"], sw_e0=sw["e0"],
        sw_d_const=sw["d_const"],
        gf_bus=_i([bidx[c.bus] for c in gfls]),
        gf_s=_i([pos[f"s_{c.id}"] for c in gfls]),
        gf_p=_i([pos[f"p_{c.id}"] for c in gfls]),
        gf_droop=_f(gf_droop), gf_tf=_f([c.t_f for c in gfls]),
        gf_pset=_f([c.p_set for c in gfls]), gf_qset=_f([c.q_set for c in gfls]),
        ld_bus=_i([bidx[ld.bus] for ld in loads]),
        ld_p=_f([ld.p_l0 for ld in loads]), ld_q=_f([ld.q_l0 for ld in loads]),
        ld_v0=_f([ld.v0 for ld in loads]), ld_gamma=_f([ld.gamma for ld in loads]),
        ld_ou_p=ld_ou_p, ld_ou_q=ld_ou_q,
        out_Cr=np.ascontiguousarray(C.real), out_Ci=np.ascontiguousarray(C.imag),
        out_gf_row=_i(out_gf_row), out_gf_dev=_i(out_gf_dev),
    )
    z0 = np.concatenate([xi0, zc0])
    zeta0 = np.concatenate([zc0, output_values(arr, z0)])

    # noise injection matrix: derivative of G with respect to eta at the equilibrium
    Xi = np.zeros((len(alg_names), len(ou)))
    for j, ld in enumerate(loads):
        i = bidx[ld.bus]
        if i == slack and ref < 0:
            continue
        fac = (pf.v[i] / ld.v0) ** ld.gamma
        Xi[arr.th_idx[i] - n_x, ld_ou_p[j]] = -ld.p_l0 * fac
        if ld_ou_q[j] >= 0:
            Xi[arr.v_idx[i] - n_x, ld_ou_q[j]] = -ld.q_l0 * fac

    params = {}
    for d in swing:
        if d.H > 0:
            params[f"H_{d.id}"] = ("H", d.id)
        params[f"D_{d.id}"] = ("D", d.id)

    model = DynamicModel(net=net, devices=devices, pf=pf, arrays=arr, state_names=state_names,
                         alg_names=alg_names, lambda_diag=np.array(lam, dtype=float),
                         xi_inject=Xi, ou=ou, noise_names=noise_names, xi0=xi0,
                         zeta0=zeta0, params=params)
    if check:
        _check_equilibrium(model)
    return model


def _check_equilibrium(model: DynamicModel, tol: float = EQ_TOL):
    f = model.f_tilde(model.xi0, model.zeta0)
    g = model.g(model.xi0, model.zeta0)
    for vec, names, label in ((f, model.state_names, "differential"),
                              (g, model.alg_names, "algebraic")):
        if vec.size and np.max(np.abs(vec)) > tol:
            k = int(np.argmax(np.abs(vec)))
            raise InitializationError(
                f"equilibrium initialization failed: {label} equation for {names[k]} "
                f"has residual {vec[k]:.3e}"
            )
