"""Checkpoint round-trip and format validation tests."""

import numpy as np
import pytest

from gazescore.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def test_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "embed/table": rng.normal(size=(7, 4)),
        "conv/w": rng.normal(size=(3, 4, 5)) * 1e-8,
        "head/bias": np.array(0.123456789012345678),
        "empty": np.zeros((0, 3)),
    }
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, arrays)
    loaded = load_checkpoint(path)
    assert list(loaded) == list(arrays)
    for name, arr in arrays.items():
        assert loaded[name].shape == np.asarray(arr).shape
        np.testing.assert_array_equal(loaded[name], arr)


def test_round_trip_extreme_values(tmp_path):
    arrays = {"w": np.array([1e-300, 1e300, -0.0, np.pi, 2.0 ** -52])}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, arrays)
    np.testing.assert_array_equal(load_checkpoint(path)["w"], arrays["w"])


def test_header_version_is_checked(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_text("gazescore-checkpoint 99\nparam w float64 1 1\n0\n")
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)


def test_foreign_file_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_text("something else entirely\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_truncated_values_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_text("gazescore-checkpoint 1\nparam w float64 1 3\n1 2\n")
    with pytest.raises(CheckpointError, match="expected 3"):
        load_checkpoint(path)


def test_duplicate_parameter_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_text(
        "gazescore-checkpoint 1\nparam w float64 1 1\n1\nparam w float64 1 1\n2\n")
    with pytest.raises(CheckpointError, match="duplicate"):
        load_checkpoint(path)


def test_whitespace_in_name_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_checkpoint(tmp_path / "m.ckpt", {"bad name": np.zeros(1)})


def test_file_is_human_readable(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"w": np.array([[1.5, -2.0]])})
    text = path.read_text()
    assert text.splitlines()[0] == "gazescore-checkpoint 1"
    assert "param w float64 2 1 2" in text
    assert "1.5" in text and "-2" in text
