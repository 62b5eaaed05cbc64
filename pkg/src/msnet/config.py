"""Run configuration: key=value files, typed merging, seed resolution.

Precedence is command-line flags over config-file entries over built-in
defaults. The seed additionally falls back to the MSNET_SEED environment
variable before its default.
"""
from __future__ import annotations

import math
import os
from pathlib import Path

from .errors import ConfigError

SEED_ENV_VAR = "MSNET_SEED"

DESK_PRETRAIN_EPOCHS = 30
DESK_PROBE_EPOCHS = 50
PAPER_PRETRAIN_EPOCHS = 300
PAPER_PROBE_EPOCHS = 200
PAPER_SUPERVISED_EPOCHS = 400


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment, blanks are skipped.

    Later occurrences of a key override earlier ones.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    entries = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key or any(c.isspace() for c in key):
            raise ConfigError(f"{path}:{lineno}: bad key {key!r}")
        entries[key] = value
    return entries


def coerce(key: str, value, kind: str):
    """Parse a raw string (or pass through a typed value) as ``kind``."""
    if value is None:
        return None
    try:
        if kind == "int":
            out = int(str(value).strip())
        elif kind == "float":
            out = float(str(value).strip())
            if not math.isfinite(out):
                raise ValueError("not finite")
        elif kind == "bool":
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                out = True
            elif text in ("0", "false", "no", "off"):
                out = False
            else:
                raise ValueError("expected a boolean")
        elif kind == "floats":
            out = tuple(float(tok) for tok in str(value).split(",") if tok.strip() != "")
            if not out:
                raise ValueError("empty list")
        elif kind == "str":
            out = str(value)
        else:
            raise AssertionError(f"unknown kind {kind}")
    except (TypeError, ValueError) as e:
        raise ConfigError(f"option {key}: cannot parse {value!r} as {kind} ({e})") from e
    return out


def merge_settings(schema: dict, file_entries: dict, flag_entries: dict) -> dict:
    """Resolve each schema key (kind, default) through file then flags.

    Unknown keys in the config file are rejected so typos surface loudly.
    Flag values of None mean 'not given on the command line'.
    """
    unknown = set(file_entries) - set(schema)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    merged = {}
    for key, (kind, default) in schema.items():
        value = default
        if key in file_entries:
            value = coerce(key, file_entries[key], kind)
        flag = flag_entries.get(key)
        if flag is not None:
            value = coerce(key, flag, kind)
        merged[key] = value
    return merged


def resolve_seed(flag_seed, file_entries: dict) -> int:
    """Flag > config file > MSNET_SEED environment variable > 0."""
    if flag_seed is not None:
        return int(flag_seed)
    if "seed" in file_entries:
        return coerce("seed", file_entries["seed"], "int")
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env.strip())
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    return 0


def atomic_write_text(path, text: str) -> None:
    """Write-then-rename so partial files never appear under the final name."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
