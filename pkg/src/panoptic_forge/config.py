"""Operator configuration: one JSON file, every tunable in one place."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

ENV_VAR = "PANOPTIC_FORGE_CONFIG"
DEFAULT_PATH = "panoptic-forge.json"

DEFAULTS = {
    "seed": 0,
    "t_iou": 0.5,
    "gamma": 1.0,
    "top_k": 5,
    "clean_keep": 100,
    "crop_padding": 0.10,
    "lease_ttl": 900.0,
    "package_size": 100,
    "shard_count": 16,
    "jobs": 1,
    "verify_budget": 50,
    "datastore": "forge-data",
    "annotator_endpoint": "mock://annotators",
    "bias_file": None,
    "worker_tokens": {},
    "expert_tokens": {},
}


class ConfigError(Exception):
    pass


def load_config(path: Optional[str] = None) -> dict:
    """Resolve and load configuration.

    Explicit path wins, then the environment variable, then the default
    filename. A missing file at the default location just means defaults;
    a missing explicitly-requested file is an error. Unknown keys are
    rejected so typos fail loudly instead of silently using a default.
    """
    explicit = path or os.environ.get(ENV_VAR)
    target = Path(explicit or DEFAULT_PATH)
    merged = dict(DEFAULTS)
    if not target.exists():
        if explicit:
            raise ConfigError(f"config file not found: {target}")
        return merged
    try:
        loaded = json.loads(target.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {target} is not valid JSON: {exc}") from exc
    if not isinstance(loaded, dict):
        raise ConfigError(f"config file {target} must hold a JSON object")
    unknown = sorted(set(loaded) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys in {target}: {unknown}")
    merged.update(loaded)
    return merged
