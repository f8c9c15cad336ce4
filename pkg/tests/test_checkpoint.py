import numpy as np
import pytest

from memtrack.checkpoint import MAGIC, CheckpointError, load_arrays, save_arrays
from memtrack.model import ModelConfig, TrackerNet, load_model
from memtrack.features import BackboneConfig


def test_round_trip_preserves_bits(tmp_path):
    rng = np.random.default_rng(0)
    arrays = {
        "a": rng.standard_normal((3, 4)).astype(np.float32),
        "b.c": rng.standard_normal(5),
        "scalar": np.array(2.5, dtype=np.float32),
    }
    save_arrays(tmp_path / "x.ckpt", arrays, {"note": "hi"})
    back, meta = load_arrays(tmp_path / "x.ckpt")
    assert meta == {"note": "hi"}
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype
        assert back[k].tobytes() == arrays[k].tobytes()


def test_header_layout(tmp_path):
    save_arrays(tmp_path / "x.ckpt", {"w": np.arange(3, dtype=np.float32)})
    raw = (tmp_path / "x.ckpt").read_bytes()
    assert raw[:8] == MAGIC
    n = int.from_bytes(raw[8:16], "little")
    assert raw[16 + n :] == np.arange(3, dtype="<f4").tobytes()


def test_bad_magic(tmp_path):
    (tmp_path / "x.ckpt").write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_arrays(tmp_path / "x.ckpt")


def test_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_arrays(tmp_path / "x.ckpt", {"i": np.arange(3)})


def test_model_round_trip(tmp_path):
    cfg = ModelConfig(BackboneConfig(widths=(4, 8), strides=(2, 2), reduced_channels=4), head_depth=1, patch_size=32, seed=3)
    model = TrackerNet(cfg)
    model.save(tmp_path / "m.ckpt", {"step": 7})
    back, meta = load_model(tmp_path / "m.ckpt")
    assert meta["step"] == 7
    assert back.model_cfg == cfg
    for (na, a), (nb, b) in zip(model.named_parameters(), back.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(a.data, b.data)


def test_load_state_dict_rejects_mismatch():
    model = TrackerNet(ModelConfig(BackboneConfig(widths=(4,), strides=(2,), reduced_channels=2), head_depth=1, patch_size=16))
    state = model.state_dict()
    state.pop(next(iter(state)))
    with pytest.raises(KeyError):
        model.load_state_dict(state)
