import numpy as np
import pytest

from obsgen.checkpoint import load_checkpoint, save_checkpoint, validate_layout
from obsgen.errors import ConfigError, DataError


def test_roundtrip(tmp_path):
    arrays = {
        "enc.w": np.arange(6.0).reshape(2, 3),
        "enc.b": np.array([1.5, -2.5]),
    }
    cfg = {"hidden": 4, "heads": 2}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, arrays, cfg)
    loaded, loaded_cfg = load_checkpoint(path)
    assert loaded_cfg == cfg
    assert list(loaded) == list(arrays)
    for k in arrays:
        np.testing.assert_array_equal(loaded[k], arrays[k])


def test_save_is_byte_deterministic(tmp_path):
    arrays = {"w": np.linspace(0, 1, 7)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, arrays, {"b": 2, "a": 1})
    save_checkpoint(p2, arrays, {"a": 1, "b": 2})
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 16)
    with pytest.raises(DataError, match="magic"):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, {"w": np.zeros(2)}, {})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(DataError, match="trailing"):
        load_checkpoint(path)


def test_validate_layout():
    arrays = {"w": np.zeros((2, 3))}
    validate_layout(arrays, {"w": (2, 3)})
    with pytest.raises(ConfigError):
        validate_layout(arrays, {"w": (3, 2)})
    with pytest.raises(ConfigError):
        validate_layout(arrays, {"w": (2, 3), "extra": (1,)})
