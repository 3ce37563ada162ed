import numpy as np
import pytest

from scaleformer.checkpoint import (
    BadMagicError,
    CheckpointError,
    ChecksumError,
    VersionError,
    load_checkpoint,
    save_checkpoint,
)
from scaleformer.model import ModelConfig, init_params


CFG = ModelConfig(channels=8, heads=2, n_single=1, n_cross=1, ms_bands=3)


def _params():
    params = init_params(CFG, seed=7)
    rng = np.random.default_rng(8)
    for name in params.names():
        params[name].data[...] = rng.normal(size=params[name].shape).astype(np.float32)
    return params


def test_roundtrip_bitwise(tmp_path):
    params = _params()
    path = tmp_path / "model.sfck"
    save_checkpoint(path, params, CFG)
    loaded, cfg = load_checkpoint(path)
    assert cfg == CFG
    assert loaded.names() == params.names()
    for name in params.names():
        assert loaded[name].data.tobytes() == params[name].data.tobytes(), name


def test_corrupt_payload_byte_fails_checksum(tmp_path):
    path = tmp_path / "model.sfck"
    save_checkpoint(path, _params(), CFG)
    blob = bytearray(path.read_bytes())
    blob[-100] ^= 0xFF  # inside the payload
    path.write_bytes(bytes(blob))
    with pytest.raises(ChecksumError):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "model.sfck"
    save_checkpoint(path, _params(), CFG)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"WHAT"
    path.write_bytes(bytes(blob))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_unsupported_version(tmp_path):
    path = tmp_path / "model.sfck"
    save_checkpoint(path, _params(), CFG)
    blob = bytearray(path.read_bytes())
    blob[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(blob))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_mismatched_config_names_tensor(tmp_path):
    path = tmp_path / "model.sfck"
    save_checkpoint(path, _params(), CFG)
    wider = ModelConfig(channels=16, heads=2, n_single=1, n_cross=1, ms_bands=3)
    with pytest.raises(CheckpointError, match="enc.pan.conv1.w"):
        load_checkpoint(path, expected_cfg=wider)


def test_missing_tensor_detected(tmp_path):
    path = tmp_path / "model.sfck"
    save_checkpoint(path, _params(), CFG)
    deeper = ModelConfig(channels=8, heads=2, n_single=2, n_cross=1, ms_bands=3)
    with pytest.raises(CheckpointError, match="missing tensor"):
        load_checkpoint(path, expected_cfg=deeper)


def test_save_rejects_nonfinite(tmp_path):
    params = _params()
    params["head.b"].data[0] = np.nan
    with pytest.raises(ValueError, match="head.b"):
        save_checkpoint(tmp_path / "model.sfck", params, CFG)


def test_loaded_params_run_forward(tmp_path):
    from scaleformer.model import forward
    from scaleformer.tensor import Tensor

    params = _params()
    path = tmp_path / "model.sfck"
    save_checkpoint(path, params, CFG)
    loaded, cfg = load_checkpoint(path, expected_cfg=CFG)
    rng = np.random.default_rng(9)
    pan = Tensor(rng.random((1, 1, 16, 16)).astype(np.float32))
    lrms = Tensor(rng.random((1, 3, 8, 8)).astype(np.float32))
    a = forward(pan, lrms, 2, params, cfg, window=8)
    b = forward(pan, lrms, 2, loaded, cfg, window=8)
    assert a.data.tobytes() == b.data.tobytes()
