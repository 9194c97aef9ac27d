import numpy as np
import pytest

from rlplace import checkpoint
from rlplace.agent import Optimizer, init_params
from rlplace.checkpoint import Checkpoint, CheckpointError


def sample_checkpoint():
    params, _ = init_params(0, 16)
    opt = Optimizer(lr=1e-3)
    opt.apply(params, {k: np.ones_like(v) for k, v in params.items()})
    return Checkpoint(params, opt, 7, "abc123")


def test_round_trip_is_bitwise(tmp_path):
    ck = sample_checkpoint()
    path = tmp_path / "c.bin"
    checkpoint.save(path, ck)
    back = checkpoint.load(path)
    assert back.iteration == 7 and back.config_hash == "abc123"
    assert back.optimizer.step_count == 1 and back.optimizer.lr == 1e-3
    for k in ck.params:
        assert back.params[k].tobytes() == ck.params[k].tobytes()
        assert back.optimizer.m[k].tobytes() == ck.optimizer.m[k].tobytes()
        assert back.optimizer.v[k].tobytes() == ck.optimizer.v[k].tobytes()
    assert checkpoint.dumps(back) == checkpoint.dumps(ck)


def test_bad_magic():
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.loads(b"NOPE" + checkpoint.dumps(sample_checkpoint())[4:])


def test_truncated_file():
    data = checkpoint.dumps(sample_checkpoint())
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint.loads(data[:-10])


def test_trailing_bytes():
    with pytest.raises(CheckpointError):
        checkpoint.loads(checkpoint.dumps(sample_checkpoint()) + b"\0")


def test_unknown_version():
    data = bytearray(checkpoint.dumps(sample_checkpoint()))
    data[4] = 99
    with pytest.raises(CheckpointError, match="version"):
        checkpoint.loads(bytes(data))
