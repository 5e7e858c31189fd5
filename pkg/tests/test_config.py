import json

import pytest

from actipol.config import Config, load_config


def test_defaults():
    cfg = load_config(env={})
    assert cfg == Config()
    assert (cfg.continuity_repetitions, cfg.continuity_interval_ms, cfg.chain_depth_limit) == (10, 5.0, 2)


def test_file_then_env(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"port": 9000, "continuity_interval_ms": 10}))
    cfg = load_config(env={"ACTIPOL_CONFIG": str(path), "ACTIPOL_PORT": "9100", "ACTIPOL_CHAIN_DEPTH_LIMIT": "3"})
    assert (cfg.port, cfg.continuity_interval_ms, cfg.chain_depth_limit) == (9100, 10.0, 3)


def test_unknown_key(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"colour": "blue"}))
    with pytest.raises(ValueError, match="colour"):
        load_config(str(path), env={})


def test_invalid_values():
    with pytest.raises(ValueError):
        load_config(env={"ACTIPOL_CHAIN_DEPTH_LIMIT": "0"})
    with pytest.raises(ValueError):
        load_config(env={"ACTIPOL_CONTINUITY_INTERVAL_MS": "-1"})
