import numpy as np
import pytest

from cream.checkpoint import (
    MAGIC,
    CheckpointError,
    fingerprint_array,
    fingerprint_tensors,
    load_checkpoint,
    save_checkpoint,
)
from cream.numcore import Tensor


def random_tensors(count, seed=0):
    rng = np.random.default_rng(seed)
    tensors = {}
    for i in range(count):
        dtype = np.float64 if i % 2 == 0 else np.float32
        shape = tuple(int(s) for s in rng.integers(1, 5, size=rng.integers(0, 3)))
        tensors[f"t.{i:04d}"] = Tensor(rng.standard_normal(shape).astype(dtype))
    return tensors


def test_round_trip_thousand_tensors(tmp_path):
    tensors = random_tensors(1000)
    frozen = {name for i, name in enumerate(sorted(tensors)) if i % 7 == 0}
    config = {"kind": "test", "note": "round trip", "values": [1, 2.5, "x"]}
    path = tmp_path / "big.ckpt"
    save_checkpoint(path, tensors, config, frozen)
    loaded, config2, frozen2 = load_checkpoint(path)
    assert config2 == config
    assert frozen2 == frozen
    assert set(loaded) == set(tensors)
    for name, t in tensors.items():
        assert loaded[name].data.dtype == t.data.dtype  # no silent narrowing
        assert loaded[name].data.shape == t.data.shape
        assert loaded[name].data.tobytes() == t.data.tobytes()
        assert loaded[name].requires_grad == (name not in frozen)


def test_save_is_deterministic(tmp_path):
    tensors = random_tensors(20, seed=1)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, tensors, {"z": 1, "a": 2}, set())
    save_checkpoint(p2, dict(reversed(list(tensors.items()))), {"a": 2, "z": 1}, set())
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_file_rejected_without_partial_state(tmp_path):
    tensors = random_tensors(5, seed=2)
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, {}, set())
    blob = path.read_bytes()
    for cut in (len(blob) - 1, len(blob) // 2, 20):
        (tmp_path / "cut.ckpt").write_bytes(blob[:cut])
        with pytest.raises(CheckpointError, match="hash mismatch|too short"):
            load_checkpoint(tmp_path / "cut.ckpt")


def test_corrupt_payload_rejected(tmp_path):
    tensors = random_tensors(3, seed=3)
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, {}, set())
    blob = bytearray(path.read_bytes())
    blob[len(MAGIC) + 30] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="hash mismatch"):
        load_checkpoint(path)


def test_version_mismatch_refused(tmp_path):
    import hashlib
    import struct

    tensors = random_tensors(1, seed=4)
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, {}, set())
    blob = bytearray(path.read_bytes())[:-32]
    blob[len(MAGIC) : len(MAGIC) + 4] = struct.pack("<I", 99)
    body = bytes(blob)
    path.write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(path)


def test_bad_magic_rejected(tmp_path):
    import hashlib

    body = b"NOTACREAM!" + b"\x00" * 40
    (tmp_path / "x.ckpt").write_bytes(body + hashlib.sha256(body).digest())
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(tmp_path / "x.ckpt")


def test_fingerprints_change_with_content():
    a = np.zeros((3, 3))
    b = np.zeros((3, 3))
    assert fingerprint_array("x", a) == fingerprint_array("x", b)
    assert fingerprint_array("x", a) != fingerprint_array("y", b)
    b[0, 0] = 1e-300
    assert fingerprint_array("x", a) != fingerprint_array("x", b)
    tensors = {"p": Tensor(a), "q": Tensor(b)}
    prints = fingerprint_tensors(tensors)
    assert set(prints) == {"p", "q"}
