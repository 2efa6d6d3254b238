"""Dynamic device records and their scalar residual evaluators.

Powers in device equations (swing, governor) are on the device rating;
set-points in the records (``p_set``, ``q_set``, load powers) are on the
system base. Reactances ``x_d_prime``/``x_c`` are on the device rating.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass(frozen=True)
class OuParams:
    upsilon: float = 0.5
    sigma: float = 0.05
    mean: float = 0.0

    def __post_init__(self):
        if not self.upsilon > 0:
            raise ConfigError("OU drift upsilon must be > 0")
        if self.sigma < 0:
            raise ConfigError("OU diffusion sigma must be >= 0")

    @property
    def stationary_variance(self) -> float:
        return self.sigma**2 / (2.0 * self.upsilon)

    @classmethod
    def from_std(cls, std: float, upsilon: float = 0.5) -> "OuParams":
        """Parameters giving a stationary standard deviation ``std``."""
        return cls(upsilon=upsilon, sigma=std * math.sqrt(2.0 * upsilon))


@dataclass(frozen=True)
class Governor:
    droop_gain: float = 20.0
    t_g: float = 0.5
    p_ref: float | None = None

    def __post_init__(self):
        if not self.t_g > 0:
            raise ConfigError("governor t_g must be > 0")
        if self.droop_gain < 0:
            raise ConfigError("governor droop_gain must be >= 0")


@dataclass(frozen=True)
class Avr:
    k_a: float = 20.0
    t_a: float = 0.2
    v_ref: float | None = None

    def __post_init__(self):
        if not self.t_a > 0:
            raise ConfigError("AVR t_a must be > 0")
        if not self.k_a > 0:
            raise ConfigError("AVR k_a must be > 0")


@dataclass(frozen=True)
class SyncMachine:
    id: str
    bus: str
    H: float
    D: float = 0.0
    x_d_prime: float = 0.3
    p_rat: float = 100.0
    omega0: float = 1.0
    governor: Governor | None = None
    avr: Avr | None = None

    def __post_init__(self):
        if not self.H > 0:
            raise ConfigError(f"machine {self.id}: H must be > 0")
        if self.D < 0:
            raise ConfigError(f"machine {self.id}: D must be >= 0")
        if not self.x_d_prime > 0:
            raise ConfigError(f"machine {self.id}: x_d_prime must be > 0")
        if not self.p_rat > 0:
            raise ConfigError(f"machine {self.id}: p_rat must be > 0")


@dataclass(frozen=True)
class VsmConverter:
    """Grid-forming converter emulating a swing equation behind ``x_c``.

    ``schedule`` holds ``(time_s, H_eq)`` pairs applied by the simulator.
    """

    id: str
    bus: str
    H_eq: float
    D_eq: float
    p_set: float
    q_set: float = 0.0
    x_c: float = 0.15
    p_rat: float = 100.0
    omega0: float = 1.0
    schedule: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        if self.H_eq < 0:
            raise ConfigError(f"VSM {self.id}: H_eq must be >= 0")
        if self.D_eq < 0 or (self.H_eq == 0 and not self.D_eq > 0):
            raise ConfigError(f"VSM {self.id}: D_eq must be > 0 when H_eq = 0")
        if not self.x_c > 0 or not self.p_rat > 0:
            raise ConfigError(f"VSM {self.id}: x_c and p_rat must be > 0")
        object.__setattr__(self, "schedule",
                           tuple((float(t), float(h)) for t, h in self.schedule))

    # duck-typing with SyncMachine for the swing equation
    @property
    def H(self) -> float:
        return self.H_eq

    @property
    def D(self) -> float:
        return self.D_eq


@dataclass(frozen=True)
class GflConverter:
    id: str
    bus: str
    droop: float
    t_f: float
    p_set: float
    q_set: float = 0.0
    p_rat: float = 100.0
    omega0: float = 1.0

    def __post_init__(self):
        if not self.droop > 0:
            raise ConfigError(f"GFL {self.id}: droop must be > 0")
        if not self.t_f > 0:
            raise ConfigError(f"GFL {self.id}: t_f must be > 0")


@dataclass(frozen=True)
class StochasticLoad:
    id: str
    bus: str
    p_l0: float
    q_l0: float = 0.0
    v0: float = 1.0
    gamma: float = 0.0
    ou: OuParams = field(default_factory=lambda: OuParams.from_std(0.05))
    ou_q: OuParams | None = None

    def __post_init__(self):
        if self.p_l0 < 0:
            raise ConfigError(f"load {self.id}: p_l0 must be >= 0")
        if not math.isfinite(self.gamma):
            raise ConfigError(f"load {self.id}: gamma must be finite")
        if not self.v0 > 0:
            raise ConfigError(f"load {self.id}: v0 must be > 0")


@dataclass(frozen=True)
class DeviceSet:
    machines: tuple[SyncMachine, ...] = ()
    vsms: tuple[VsmConverter, ...] = ()
    gfls: tuple[GflConverter, ...] = ()
    loads: tuple[StochasticLoad, ...] = ()

    def __post_init__(self):
        for name in ("machines", "vsms", "gfls", "loads"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def swing_devices(self):
        return self.machines + self.vsms

    def all(self):
        return self.machines + self.vsms + self.gfls + self.loads

    def get(self, dev_id: str):
        for d in self.all():
            if d.id == dev_id:
                return d
        raise ConfigError(f"unknown device {dev_id!r}")


def eval_swing(machine, omega: float, p_m: float, p_e: float, omega_base: float):
    """Unscaled swing residuals ``(delta_row, omega_row)``.

    ``p_m`` and ``p_e`` are on the machine rating; dividing the omega row by
    ``2H`` gives the rotor acceleration.
    """
    dw = omega - machine.omega0
    return omega_base * dw, p_m - p_e - machine.D * dw


def eval_load(load: StochasticLoad, eta: float, v: float) -> float:
    """Consumed active power ``(1 + eta) p_l0 (v / v0)**gamma``."""
    if not v > 0:
        raise ValueError(f"load {load.id}: bus voltage must be positive, got {v}")
    return (1.0 + eta) * load.p_l0 * (v / load.v0) ** load.gamma


def eval_vsm(conv: VsmConverter, omega: float, p_m: float, p_e: float, omega_base: float):
    """Swing residuals of a grid-forming converter; identical to :func:`eval_swing`
    with ``(H_eq, D_eq)`` in place of ``(H, D)``."""
    return eval_swing(conv, omega, p_m, p_e, omega_base)


def eval_gfl(conv: GflConverter, p: float, omega_est: float) -> float:
    """Time derivative of the converter output ``(p_set - droop*dw - p) / t_f``."""
    return (conv.p_set - conv.droop * (omega_est - conv.omega0) - p) / conv.t_f
