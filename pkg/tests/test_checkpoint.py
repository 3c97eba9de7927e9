import struct

import pytest
import numpy as np

from polynormer.checkpoint import MAGIC, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from polynormer.config import ModelConfig, Stage, Variant
from polynormer.errors import CheckpointError
from polynormer.model import init_model

pytestmark = pytest.mark.unit


@pytest.fixture
def model():
    config = ModelConfig(input_dim=5, hidden_dim=4, local_layers=1, global_layers=1, heads=2,
                         num_classes=3, variant=Variant.V2, dropout=0.1)
    return init_model(config, seed=9)


def test_save_and_load(tmp_path, model):
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    assert loaded.seed == 9
    assert list(loaded.params) == list(model.params)
    for name, tensor in model.params.items():
        np.testing.assert_array_equal(loaded.params[name], tensor)
    assert loaded.stage is Stage.FULL


def test_selected_stage_round_trips(model):
    model.stage = Stage.WARMUP
    assert decode_checkpoint(encode_checkpoint(model)).stage is Stage.WARMUP


def test_unknown_stage_rejected(model):
    model.stage = Stage.WARMUP
    data = encode_checkpoint(model).replace(b"stage=warmup", b"stage=middle")
    with pytest.raises(CheckpointError, match="invalid embedded config"):
        decode_checkpoint(data)


def test_encoding_is_deterministic(model):
    assert encode_checkpoint(model) == encode_checkpoint(model.copy())


def test_bad_magic(model):
    data = b"XXXX" + encode_checkpoint(model)[4:]
    with pytest.raises(CheckpointError):
        decode_checkpoint(data)


def test_truncated_payload_names_tensor(model):
    data = encode_checkpoint(model)
    with pytest.raises(CheckpointError) as exc:
        decode_checkpoint(data[:-3])
    assert exc.value.tensor == "head.bias"
    assert "head.bias" in str(exc.value)


def test_trailing_bytes_rejected(model):
    with pytest.raises(CheckpointError):
        decode_checkpoint(encode_checkpoint(model) + b"\x00")


def test_unknown_tensor_rejected(model):
    renamed = model.copy()
    renamed.params = {("bogus.weight" if k == "input.weight" else k): v for k, v in model.params.items()}
    with pytest.raises(CheckpointError) as exc:
        decode_checkpoint(encode_checkpoint(renamed))
    assert exc.value.tensor == "bogus.weight"


def test_shape_mismatch_names_tensor(model):
    broken = model.copy()
    broken.params["local.0.w_v"] = np.zeros((4, 5))
    with pytest.raises(CheckpointError) as exc:
        decode_checkpoint(encode_checkpoint(broken))
    assert exc.value.tensor == "local.0.w_v"


def test_missing_tensor_rejected(model):
    partial = model.copy()
    del partial.params["head.bias"]
    with pytest.raises(CheckpointError) as exc:
        decode_checkpoint(encode_checkpoint(partial))
    assert exc.value.tensor == "head.bias"


def test_invalid_embedded_config(model):
    blob = b"hidden_dim=4\nbogus=1"
    data = MAGIC + struct.pack("<I", 1) + struct.pack("<I", len(blob)) + blob + struct.pack("<I", 0)
    with pytest.raises(CheckpointError):
        decode_checkpoint(data)


def test_unsupported_version(model):
    data = bytearray(encode_checkpoint(model))
    data[4:8] = struct.pack("<I", 99)
    with pytest.raises(CheckpointError):
        decode_checkpoint(bytes(data))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.ckpt")
