"""Binary checkpoint format with integrity checking.

Layout (all little-endian):
  magic "MSNC" | u16 version=1 | u32 entry count |
  per entry: u16 name length | UTF-8 name | u8 rank | u32 dim per rank |
             float32 values (row-major) |
  trailing u32 CRC32 over every preceding byte.

Values are stored as float32; loading returns float64 arrays carrying the
float32-rounded values, so a save/load/save cycle is byte-stable.
"""
from __future__ import annotations

import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .encoder import Encoder, EncoderConfig, build_encoder
from .errors import ConfigError, DataError

MAGIC = b"MSNC"
VERSION = 1

_META_PREFIX = "__meta."


def state_of(params) -> dict:
    return {p.name: p.data.copy() for p in params}


def load_into(params, state: dict) -> None:
    """Copy arrays from ``state`` into parameters, matching names strictly."""
    for p in params:
        if p.name not in state:
            raise DataError(f"checkpoint is missing parameter {p.name}")
        arr = np.asarray(state[p.name], dtype=np.float64)
        if arr.shape != p.data.shape:
            raise DataError(
                f"checkpoint shape {arr.shape} does not match {p.name} {p.data.shape}"
            )
        p.data = arr


def save_checkpoint(path, state: dict) -> None:
    """Serialize name->array pairs; writes atomically via a temp file."""
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(state))]
    for name, array in state.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"parameter name too long: {name[:40]}...")
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim > 0xFF:
            raise ValueError(f"{name}: rank {arr.ndim} exceeds format limit")
        # validate before the narrowing cast so magnitudes past float32
        # range fail loudly instead of saving as inf
        if arr.size and (not np.all(np.isfinite(arr))
                         or np.abs(arr).max() > np.finfo(np.float32).max):
            raise ValueError(f"{name}: values do not fit float32")
        values = arr.astype(np.float32)
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(values.astype("<f4").tobytes())
    body = b"".join(chunks)
    blob = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if len(blob) < len(MAGIC) + 2 + 4 + 4:
        raise DataError(f"{path}: file too short to be a checkpoint")
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: bad magic, not a checkpoint file")
    body, (stored_crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise DataError(f"{path}: CRC mismatch, checkpoint is corrupt")
    version, count = struct.unpack_from("<HI", body, 4)
    if version != VERSION:
        # corruption raises DataError above; an intact file written by a
        # newer format revision is a configuration problem, not bad data
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    offset = 10
    state = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", body, offset)
            offset += 2
            name = body[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", body, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", body, offset)
            offset += 4 * rank
            n = int(np.prod(dims)) if rank else 1
            values = np.frombuffer(body, dtype="<f4", count=n, offset=offset)
            offset += 4 * n
            state[name] = values.astype(np.float64).reshape(dims)
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise DataError(f"{path}: truncated or malformed checkpoint: {e}") from e
    if offset != len(body):
        raise DataError(f"{path}: {len(body) - offset} trailing bytes after entries")
    return state


# ---------------------------------------------------------------------------
# encoder-aware wrappers
# ---------------------------------------------------------------------------


def _config_state(config: EncoderConfig) -> dict:
    return {
        _META_PREFIX + "input_size": np.asarray(config.input_size, dtype=np.float64),
        _META_PREFIX + "stage_channels": np.asarray(config.stage_channels, dtype=np.float64),
        _META_PREFIX + "stage_blocks": np.asarray(config.stage_blocks, dtype=np.float64),
        _META_PREFIX + "heads": np.asarray(config.heads, dtype=np.float64),
        _META_PREFIX + "window": np.asarray(config.window, dtype=np.float64),
        _META_PREFIX + "norm_groups": np.asarray(config.norm_groups, dtype=np.float64),
        _META_PREFIX + "size_code_dim": np.asarray(config.size_code_dim, dtype=np.float64),
        _META_PREFIX + "recursion_steps": np.asarray(config.recursion_steps, dtype=np.float64),
        _META_PREFIX + "size_range": np.asarray(config.size_range, dtype=np.float64),
        _META_PREFIX + "seed": np.asarray(config.seed, dtype=np.float64),
    }


def _config_from_state(state: dict) -> EncoderConfig:
    def grab(key):
        full = _META_PREFIX + key
        if full not in state:
            raise DataError(f"checkpoint lacks encoder metadata {full}")
        return state[full]

    return EncoderConfig(
        input_size=int(grab("input_size")),
        stage_channels=tuple(int(v) for v in np.atleast_1d(grab("stage_channels"))),
        stage_blocks=tuple(int(v) for v in np.atleast_1d(grab("stage_blocks"))),
        heads=int(grab("heads")),
        window=int(grab("window")),
        norm_groups=int(grab("norm_groups")),
        size_code_dim=int(grab("size_code_dim")),
        recursion_steps=int(grab("recursion_steps")),
        size_range=tuple(float(v) for v in np.atleast_1d(grab("size_range"))),
        seed=int(grab("seed")),
    )


def save_encoder_checkpoint(path, encoder: Encoder, extra_params=None) -> None:
    """Encoder weights + structural metadata (+ optional extra parameters)."""
    state = _config_state(encoder.config)
    state.update(state_of(encoder.parameters()))
    if extra_params:
        extra = state_of(extra_params)
        overlap = set(extra) & set(state)
        if overlap:
            raise ValueError(f"extra parameter names collide: {sorted(overlap)[:3]}")
        state.update(extra)
    save_checkpoint(path, state)


def load_encoder_checkpoint(path):
    """Rebuild the encoder a checkpoint was saved from.

    Returns (encoder, full state dict) so callers can restore companion
    parameters (e.g. a projection head) from the same file.
    """
    state = load_checkpoint(path)
    config = _config_from_state(state)
    encoder = build_encoder(config)
    load_into(encoder.parameters(), state)
    return encoder, state
