"""Static network description, admittance assembly and Newton-Raphson power flow.

All quantities are per unit on the single system base ``Network.s_base``.
The bus injections ``p_inj``/``q_inj`` used by :func:`solve_power_flow` are
net scheduled injections (generation minus consumption).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, PowerFlowError, SingularJacobianError

BUS_KINDS = ("slack", "pv", "pq")


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str = "pq"
    base_kv: float = 1.0
    v_set: float | None = None
    p_inj: float = 0.0
    q_inj: float = 0.0


@dataclass(frozen=True)
class Branch:
    id: str
    from_bus: str
    to_bus: str
    r: float = 0.0
    x: float = 0.1
    b_sh: float = 0.0
    tap: float = 1.0
    status: bool = True

    def primitive(self):
        """Return ``(y_ff, y_ft, y_tf, y_tt)`` of the pi model (tap on the from side)."""
        ys = 1.0 / complex(self.r, self.x)
        half = 0.5j * self.b_sh
        t = self.tap
        return (ys + half) / t**2, -ys / t, -ys / t, ys + half


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...] = ()
    s_base: float = 100.0
    f_base: float = 50.0

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))

    @property
    def omega_base(self) -> float:
        return 2.0 * np.pi * self.f_base

    @property
    def bus_ids(self) -> list[str]:
        return [b.id for b in self.buses]

    def bus_index(self, bus_id: str) -> int:
        for i, b in enumerate(self.buses):
            if b.id == bus_id:
                return i
        raise ConfigError(f"unknown bus {bus_id!r}")

    @property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")

    @property
    def live_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.status]

    def branch(self, branch_id: str) -> Branch:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise ConfigError(f"unknown branch {branch_id!r}")

    def with_injections(self, p: Sequence[float], q: Sequence[float]) -> "Network":
        buses = tuple(
            dataclasses.replace(b, p_inj=float(pi), q_inj=float(qi))
            for b, pi, qi in zip(self.buses, p, q)
        )
        return dataclasses.replace(self, buses=buses)

    def validate(self) -> None:
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate bus ids")
        br_ids = [br.id for br in self.branches]
        if len(set(br_ids)) != len(br_ids):
            dup = sorted({i for i in br_ids if br_ids.count(i) > 1})
            raise ConfigError(f"duplicate branch ids: {dup}")
        if self.s_base <= 0 or self.f_base <= 0:
            raise ConfigError("s_base and f_base must be positive")
        for b in self.buses:
            if b.kind not in BUS_KINDS:
                raise ConfigError(f"bus {b.id}: kind must be one of {BUS_KINDS}")
            if b.base_kv <= 0:
                raise ConfigError(f"bus {b.id}: base_kv must be > 0")
            if b.kind in ("slack", "pv") and (b.v_set is None or b.v_set <= 0):
                raise ConfigError(f"bus {b.id}: v_set must be > 0 on {b.kind} buses")
        known = set(ids)
        for br in self.branches:
            if br.from_bus not in known or br.to_bus not in known:
                raise ConfigError(f"branch {br.id}: unknown terminal bus")
            if br.from_bus == br.to_bus:
                raise ConfigError(f"branch {br.id}: from and to buses coincide")
            if br.x == 0.0:
                raise ConfigError(f"branch {br.id}: zero series reactance")
            if br.tap <= 0:
                raise ConfigError(f"branch {br.id}: tap must be > 0")
        n_slack = sum(b.kind == "slack" for b in self.buses)
        if n_slack != 1:
            raise ConfigError(f"exactly one slack bus required, found {n_slack}")
        # connectivity over live branches
        adj: dict[str, set[str]] = {i: set() for i in ids}
        for br in self.live_branches:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
        seen, stack = {ids[0]}, [ids[0]]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != len(ids):
            raise ConfigError(f"network is not connected: {sorted(set(ids) - seen)} isolated")


@dataclass
class PowerFlowSolution:
    v: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    q: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float

    @property
    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


def build_admittance(net: Network) -> np.ndarray:
    """Dense bus admittance matrix of the live branches."""
    net.validate()
    n = len(net.buses)
    Y = np.zeros((n, n), dtype=complex)
    for br in net.live_branches:
        i, j = net.bus_index(br.from_bus), net.bus_index(br.to_bus)
        yff, yft, ytf, ytt = br.primitive()
        Y[i, i] += yff
        Y[i, j] += yft
        Y[j, i] += ytf
        Y[j, j] += ytt
    return Y


def power_injections(Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    return V * np.conj(Y @ V)


def _jacobian(Y, V, pvpq, pq):
    I = Y @ V
    Vn = V / np.abs(V)
    dS_dVa = 1j * np.diag(V) @ np.conj(np.diag(I) - Y @ np.diag(V))
    dS_dVm = np.diag(V) @ np.conj(Y @ np.diag(Vn)) + np.conj(np.diag(I)) @ np.diag(Vn)
    return np.block([
        [dS_dVa[np.ix_(pvpq, pvpq)].real, dS_dVm[np.ix_(pvpq, pq)].real],
        [dS_dVa[np.ix_(pq, pvpq)].imag, dS_dVm[np.ix_(pq, pq)].imag],
    ])


def solve_power_flow(net: Network, tol: float = 1e-8, max_iter: int = 50,
                     warm_start: PowerFlowSolution | None = None) -> PowerFlowSolution:
    """Polar Newton-Raphson power flow.

    Flat start (``v = 1`` or ``v_set``, ``theta = 0``) unless ``warm_start``
    is given. Raises :class:`PowerFlowError` on non-convergence and
    :class:`SingularJacobianError` naming the bus at the zero pivot.
    """
    Y = build_admittance(net)
    kinds = [b.kind for b in net.buses]
    slack = net.slack
    pv = [i for i, k in enumerate(kinds) if k == "pv"]
    pq = [i for i, k in enumerate(kinds) if k == "pq"]
    pvpq = pv + pq
    s_spec = np.array([complex(b.p_inj, b.q_inj) for b in net.buses])

    if warm_start is not None:
        vm = np.array(warm_start.v, dtype=float)
        va = np.array(warm_start.theta, dtype=float)
    else:
        vm = np.ones(len(net.buses))
        va = np.zeros(len(net.buses))
    for i, b in enumerate(net.buses):
        if b.kind in ("slack", "pv"):
            vm[i] = b.v_set
    va[slack] = 0.0

    def mismatch(V):
        ds = power_injections(Y, V) - s_spec
        return np.concatenate([ds[pvpq].real, ds[pq].imag])

    V = vm * np.exp(1j * va)
    F = mismatch(V)
    err = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while err > tol and it < max_iter:
        J = _jacobian(Y, V, pvpq, pq)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise SingularJacobianError(
                f"singular power-flow Jacobian at bus {_pivot_bus(J, pvpq, pq, net)}"
            ) from None
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        V = vm * np.exp(1j * va)
        F = mismatch(V)
        err = np.max(np.abs(F))
        it += 1
    if not np.isfinite(err) or err > tol:
        raise PowerFlowError(
            f"power flow did not converge in {max_iter} iterations "
            f"(max mismatch {err:.3e} pu)"
        )
    S = power_injections(Y, V)
    return PowerFlowSolution(v=np.abs(V), theta=np.angle(V), p=S.real, q=S.imag,
                             converged=True, iterations=it, max_mismatch=float(err))


def _pivot_bus(J, pvpq, pq, net):
    import scipy.linalg

    _, u = scipy.linalg.lu(J, permute_l=True)
    k = int(np.argmin(np.abs(np.diag(u))))
    rows = pvpq + pq
    return net.buses[rows[k]].id
