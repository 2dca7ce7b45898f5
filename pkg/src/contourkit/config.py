"""Flat key=value run configuration with CLI-flag overrides.

Precedence: built-in defaults < config file < command-line flags.  The config
file path comes from --config or the CONTOURKIT_CONFIG environment variable.
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

import os
from pathlib import Path

from .benchmark import DEFAULT_THRESHOLD_COUNT, DEFAULT_TOLERANCE
from .dataset import GRID_THRESHOLD
from .network import DEFAULT_ARCH

ENV_CONFIG = "CONTOURKIT_CONFIG"


class UsageError(Exception):
    """Bad flags or config keys (CLI exit 1)."""


# key -> (parser, default)
CONFIG_KEYS = {
    "seed": (int, 0),
    "threads": (int, 1),
    "learning_rate": (float, 0.2),
    "momentum": (float, 0.9),
    "batch_size": (int, 32),
    "epochs": (int, 30),
    "weight_init_std": (float, 0.01),
    "arch": (str, DEFAULT_ARCH),
    "scale_mode": (str, "multi"),
    "stride": (int, 4),
    "scales": (str, "2"),
    "y_patch": (int, 32),
    "y_stride": (int, 16),
    "tolerance": (float, DEFAULT_TOLERANCE),
    "thresholds": (int, DEFAULT_THRESHOLD_COUNT),
    "grid_threshold": (float, GRID_THRESHOLD),
}


def parse_config_file(path) -> dict:
    """Parse 'key = value' lines; '#' starts a comment, blank lines ignored."""
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        parser, _ = CONFIG_KEYS[key]
        try:
            values[key] = parser(value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def resolve_config(config_path=None, overrides: dict | None = None) -> dict:
    """Merge defaults, an optional config file, and CLI overrides (None = unset)."""
    resolved = {k: default for k, (_, default) in CONFIG_KEYS.items()}
    path = config_path or os.environ.get(ENV_CONFIG)
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        resolved.update(parse_config_file(path))
    for key, value in (overrides or {}).items():
        if key not in CONFIG_KEYS:
            raise UsageError(f"unknown config key {key!r}")
        if value is not None:
            resolved[key] = value
    return resolved


def parse_scales(text: str) -> tuple[int, ...]:
    """'2' or '1,2,3' -> tuple of scale indices."""
    try:
        scales = tuple(int(s) for s in str(text).split(",") if s.strip() != "")
    except ValueError:
        raise UsageError(f"bad scales list {text!r}") from None
    if not scales:
        raise UsageError("scales list is empty")
    return scales


def format_config(resolved: dict) -> str:
    return "\n".join(f"{k}={resolved[k]}" for k in sorted(resolved))
