"""Bundled desk-scale test systems and scenario variants of them."""
from __future__ import annotations

from importlib import resources

from . import config as _config
from .errors import ConfigError

BUNDLED = ("smib", "three-machine", "nine-bus-reduced")
SCENARIOS = ("vsm-step", "gfl-droop")


def config_text(system_id: str) -> str:
    if system_id in SCENARIOS:
        return resources.files(__package__).joinpath("data", "scenarios", f"{system_id}.yaml").read_text()
    if system_id not in BUNDLED:
        raise ConfigError(f"unknown bundled system {system_id!r}; choose from {BUNDLED + SCENARIOS}")
    return resources.files(__package__).joinpath("data", f"{system_id}.yaml").read_text()


def load_bundled(system_id: str) -> _config.RunConfig:
    return _config.loads(config_text(system_id), origin=f"<bundled:{system_id}>")
