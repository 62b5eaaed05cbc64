"""Checkpoint format: roundtrips, integrity rejection, encoder rebuild."""
import struct
import zlib

import numpy as np
import pytest

from msnet.checkpoint import (
    load_checkpoint,
    load_encoder_checkpoint,
    load_into,
    save_checkpoint,
    save_encoder_checkpoint,
    state_of,
)
from msnet.encoder import EncoderConfig, build_encoder
from msnet.errors import ConfigError, DataError
from msnet.optim import Parameter


@pytest.fixture
def state():
    rng = np.random.default_rng(0)
    return {
        "w": rng.normal(size=(3, 4)),
        "b": rng.normal(size=5),
        "scalar": np.asarray(2.5),
        "cube": rng.normal(size=(2, 2, 2)),
    }


def test_roundtrip_is_float32_exact(state, tmp_path):
    path = tmp_path / "ck.msnc"
    save_checkpoint(path, state)
    back = load_checkpoint(path)
    assert set(back) == set(state)
    for name, arr in state.items():
        assert back[name].dtype == np.float64
        assert back[name].shape == np.asarray(arr).shape
        np.testing.assert_array_equal(back[name], np.asarray(arr).astype(np.float32))


def test_save_load_save_is_byte_stable(state, tmp_path):
    p1, p2 = tmp_path / "a.msnc", tmp_path / "b.msnc"
    save_checkpoint(p1, state)
    save_checkpoint(p2, load_checkpoint(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_empty_and_zero_size_entries(tmp_path):
    path = tmp_path / "ck.msnc"
    save_checkpoint(path, {})
    assert load_checkpoint(path) == {}
    save_checkpoint(path, {"empty": np.zeros((0, 3))})
    back = load_checkpoint(path)
    assert back["empty"].shape == (0, 3)


def test_rejects_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "nope.msnc")


def test_rejects_bad_magic(state, tmp_path):
    path = tmp_path / "ck.msnc"
    save_checkpoint(path, state)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"JUNK"
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_rejects_flipped_bit_via_crc(state, tmp_path):
    path = tmp_path / "ck.msnc"
    save_checkpoint(path, state)
    blob = bytearray(path.read_bytes())
    blob[len(blob) // 2] ^= 0x40
    path.write_bytes(bytes(blob))
    with pytest.raises(DataError, match="CRC"):
        load_checkpoint(path)


def test_rejects_truncation(state, tmp_path):
    path = tmp_path / "ck.msnc"
    save_checkpoint(path, state)
    blob = path.read_bytes()
    for cut in (5, len(blob) // 2, len(blob) - 1):
        path.write_bytes(blob[:cut])
        with pytest.raises(DataError):
            load_checkpoint(path)


def test_rejects_unsupported_version(state, tmp_path):
    path = tmp_path / "ck.msnc"
    save_checkpoint(path, state)
    blob = bytearray(path.read_bytes())
    struct.pack_into("<H", blob, 4, 9)
    body = bytes(blob[:-4])
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(ConfigError, match="version"):
        load_checkpoint(path)


def test_rejects_trailing_garbage(state, tmp_path):
    path = tmp_path / "ck.msnc"
    save_checkpoint(path, state)
    blob = path.read_bytes()
    body = blob[:-4] + b"\x00\x00\x00\x00"
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))
    with pytest.raises(DataError, match="trailing"):
        load_checkpoint(path)


def test_rejects_values_outside_float32(tmp_path):
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "ck.msnc", {"w": np.array([1e308])})


def test_load_into_matches_names_strictly(state, tmp_path):
    params = [Parameter("w", np.zeros((3, 4))), Parameter("b", np.zeros(5))]
    load_into(params, state)
    np.testing.assert_array_equal(params[0].data, state["w"])
    with pytest.raises(DataError, match="missing"):
        load_into([Parameter("ghost", np.zeros(2))], state)
    with pytest.raises(DataError, match="shape"):
        load_into([Parameter("w", np.zeros((4, 3)))], state)


def test_state_of_copies():
    p = Parameter("w", np.ones(3))
    snap = state_of([p])
    p.data = np.zeros(3)
    np.testing.assert_array_equal(snap["w"], np.ones(3))


# ---------------------------------------------------------------------------
# encoder wrappers
# ---------------------------------------------------------------------------


SMALL = EncoderConfig(input_size=16, stage_channels=(16,), stage_blocks=(1,),
                      heads=2, window=3, norm_groups=2, size_code_dim=8,
                      recursion_steps=1, seed=6)


def test_encoder_checkpoint_rebuilds_model(tmp_path):
    model = build_encoder(SMALL)
    path = tmp_path / "enc.msnc"
    save_encoder_checkpoint(path, model)
    rebuilt, extra_state = load_encoder_checkpoint(path)
    assert rebuilt.config == SMALL
    for pa, pb in zip(model.parameters(), rebuilt.parameters()):
        assert pa.name == pb.name
        np.testing.assert_array_equal(pb.data, pa.data.astype(np.float32))
    assert any(k.startswith("__meta.") for k in extra_state)


def test_encoder_checkpoint_carries_extra_params(tmp_path):
    model = build_encoder(SMALL)
    extra = [Parameter("head.weight", np.full((2, 2), 0.25))]
    path = tmp_path / "enc.msnc"
    save_encoder_checkpoint(path, model, extra_params=extra)
    _, state = load_encoder_checkpoint(path)
    np.testing.assert_array_equal(state["head.weight"], np.full((2, 2), 0.25))
    clash = [Parameter("stem.weight", np.zeros(1))]
    with pytest.raises(ValueError, match="collide"):
        save_encoder_checkpoint(path, model, extra_params=clash)


def test_encoder_checkpoint_missing_metadata(tmp_path):
    model = build_encoder(SMALL)
    state = state_of(model.parameters())  # weights only, no structure
    path = tmp_path / "bare.msnc"
    save_checkpoint(path, state)
    with pytest.raises(DataError, match="metadata"):
        load_encoder_checkpoint(path)


def test_encoder_roundtrip_preserves_outputs(tmp_path):
    from msnet.autodiff import Tensor

    model = build_encoder(SMALL)
    # float32-representable weights make the roundtrip fully value-exact
    for p in model.parameters():
        p.data = p.data.astype(np.float32).astype(np.float64)
    rng = np.random.default_rng(1)
    images = rng.uniform(size=(2, 1, 16, 16)).astype(np.float32).astype(np.float64)
    sizes = rng.uniform(-1, 1, size=(2, 2)).astype(np.float32).astype(np.float64)
    before = model.forward(Tensor(images), Tensor(sizes)).data

    path = tmp_path / "enc.msnc"
    save_encoder_checkpoint(path, model)
    rebuilt, _ = load_encoder_checkpoint(path)
    after = rebuilt.forward(Tensor(images), Tensor(sizes)).data
    np.testing.assert_array_equal(before, after)
