"""Service configuration: one JSON file, overridden by ``ACTIPOL_*`` environment variables."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Mapping, Optional

ENV_PREFIX = "ACTIPOL_"


@dataclass(frozen=True)
class Config:
    policy_path: Optional[str] = None  # None: bundled policy set
    fixture_path: Optional[str] = None  # None: bundled farm fixture
    continuity_repetitions: int = 10
    continuity_interval_ms: float = 5.0
    chain_depth_limit: int = 2
    host: str = "127.0.0.1"
    port: int = 8080

    def __post_init__(self):
        if self.continuity_repetitions < 1 or self.continuity_interval_ms <= 0:
            raise ValueError("continuity needs repetitions >= 1 and a positive interval")
        if self.chain_depth_limit < 1:
            raise ValueError("chain_depth_limit must be >= 1")


def _coerce(name: str, raw):
    kind = {f.name: f.type for f in fields(Config)}[name]
    if raw is None or raw == "":
        return None if "Optional" in str(kind) else raw
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return str(raw)


def load_config(path: Optional[str] = None, env: Optional[Mapping[str, str]] = None) -> Config:
    env = os.environ if env is None else env
    path = path or env.get(ENV_PREFIX + "CONFIG")
    values: dict = {}
    if path:
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(Config)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update(data)
    for f in fields(Config):
        key = ENV_PREFIX + f.name.upper()
        if key in env:
            values[f.name] = env[key]
    return replace(Config(), **{k: _coerce(k, v) for k, v in values.items()})
