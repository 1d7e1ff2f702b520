import numpy as np
import pytest

from mmnas.checkpoint import CheckpointError, load_weights, save_weights


def _weights(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "proj/image:0/W": rng.standard_normal((6, 4)),
        "proj/image:0/b": rng.standard_normal(4),
        "cell0/out/W": rng.standard_normal((4, 4)),
        "head/b2": rng.standard_normal(3),
    }


def test_roundtrip_bit_exact(tmp_path):
    w = _weights()
    path = tmp_path / "w.mmnw"
    save_weights(path, w)
    back = load_weights(path)
    assert sorted(back) == sorted(w)
    for k in w:
        assert back[k].shape == w[k].shape
        assert back[k].tobytes() == w[k].tobytes()


def test_double_save_identical_bytes(tmp_path):
    w = _weights()
    p1, p2 = tmp_path / "a.mmnw", tmp_path / "b.mmnw"
    save_weights(p1, w)
    save_weights(p2, load_weights(p1))
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic(tmp_path):
    path = tmp_path / "w.mmnw"
    save_weights(path, _weights())
    blob = bytearray(path.read_bytes())
    blob[0] = ord("X")
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="magic"):
        load_weights(path)


def test_bad_version(tmp_path):
    path = tmp_path / "w.mmnw"
    save_weights(path, _weights())
    blob = bytearray(path.read_bytes())
    blob[4] = 42
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_weights(path)


def test_truncation_names_offset(tmp_path):
    path = tmp_path / "w.mmnw"
    save_weights(path, _weights())
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 5])
    with pytest.raises(CheckpointError, match=r"offset \d+"):
        load_weights(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "w.mmnw"
    save_weights(path, _weights())
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(CheckpointError, match="trailing"):
        load_weights(path)
