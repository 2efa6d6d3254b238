import pytest

from ambient_inertia import config, systems
from ambient_inertia.errors import ConfigError

SMIB = systems.config_text("smib")


@pytest.mark.parametrize("system_id", systems.BUNDLED + systems.SCENARIOS)
def test_round_trip(system_id):
    cfg = systems.load_bundled(system_id)
    again = config.loads(cfg.dumps())
    assert again.to_dict() == cfg.to_dict()
    assert again.digest() == cfg.digest()
    assert again.devices == cfg.devices
    assert again.network == cfg.network


def test_error_names_file_line_and_key():
    bad = SMIB.replace("H: 5.0", "H: five")
    line = next(i for i, ln in enumerate(bad.splitlines(), 1) if "H: five" in ln)
    with pytest.raises(ConfigError) as exc:
        config.loads(bad, origin="smib.yaml")
    msg = str(exc.value)
    assert msg.startswith(f"smib.yaml:{line}:")
    assert "devices.machines.0.H" in msg and "expected a number" in msg


def test_unknown_key_is_rejected():
    bad = SMIB.replace("  duration_s: 60", "  duration_s: 60\n  duraton: 5")
    with pytest.raises(ConfigError, match="unknown key"):
        config.loads(bad)


def test_device_validation_is_line_anchored():
    bad = SMIB.replace("H: 5.0", "H: -1.0")
    with pytest.raises(ConfigError, match=r"<string>:\d+: .*H must be > 0"):
        config.loads(bad)


def test_version_and_yaml_errors():
    with pytest.raises(ConfigError, match="unsupported format version"):
        config.loads(SMIB.replace("version: 1", "version: 9"))
    with pytest.raises(ConfigError, match="invalid YAML"):
        config.loads("version: [1\n")
    with pytest.raises(ConfigError, match="not found"):
        config.load("/nonexistent/config.yaml")


def test_overrides():
    cfg = systems.load_bundled("smib")
    new = config.with_overrides(cfg, scenario={"duration_s": 120.0})
    assert new.scenario.duration_s == 120.0
    assert new.digest() != cfg.digest()
    with pytest.raises(ConfigError, match="unknown field"):
        config.with_overrides(cfg, scenario={"nope": 1})


def test_unknown_bundled_system():
    with pytest.raises(ConfigError, match="unknown bundled system"):
        systems.load_bundled("ieee-118")
