from __future__ import annotations

import struct

import numpy as np
import pytest

from lesionseg.errors import CheckpointError, NumericalError
from lesionseg.nn.checkpoint import (
    ModelCheckpoint,
    from_bytes,
    load_checkpoint,
    save_checkpoint,
    to_bytes,
)
from lesionseg.nn.network import EncoderDecoder, NetworkConfig
from lesionseg.rng import RngState

SMALL = NetworkConfig(stage_channels=(4, 8), bottleneck_channels=8)


def _net(seed=0, config=SMALL):
    net = EncoderDecoder(config)
    net.init_parameters(seed)
    return net


@pytest.mark.parametrize("hw", [(16, 16), (13, 21), (1, 1), (7, 4)])
def test_forward_shape_and_range(rng, hw):
    x = rng.random((2, 3, *hw)).astype(np.float32)
    y = _net()(x) if callable(_net()) else _net().forward(x)
    assert y.shape == (2, 1, *hw)
    assert np.all((y >= 0) & (y <= 1))


def test_eval_forward_deterministic(rng):
    net = _net()
    x = rng.random((1, 3, 12, 20)).astype(np.float32)
    a = net.forward(x)
    b = net.forward(x)
    assert a.tobytes() == b.tobytes()
    assert _net().forward(x).tobytes() == a.tobytes()


def test_train_forward_backward_fills_every_gradient(rng):
    net = _net()
    x = rng.random((2, 3, 8, 8)).astype(np.float32)
    net.zero_grad()
    probs = net.forward(x, train=True, rng=RngState(1))
    net.backward(np.ones_like(probs))
    for name, g in net.gradients().items():
        assert g.shape == net.parameters()[name].shape
    assert sum(float(np.abs(g).sum()) for g in net.gradients().values()) > 0


def test_without_skips(rng):
    cfg = NetworkConfig(stage_channels=(4,), bottleneck_channels=4, skip_connections=False)
    net = _net(config=cfg)
    assert net.forward(rng.random((1, 3, 6, 6)).astype(np.float32)).shape == (1, 1, 6, 6)


def test_nonfinite_parameters_detected():
    net = _net()
    first = next(iter(net.parameters()))
    net.parameters()[first].flat[0] = np.nan
    with pytest.raises(NumericalError):
        net.assert_finite()


def test_config_validation():
    with pytest.raises(ValueError):
        NetworkConfig(stage_channels=())
    with pytest.raises(ValueError):
        NetworkConfig(dropout_prob=1.0)


def test_checkpoint_round_trip(tmp_path, rng):
    net = _net(seed=3)
    net.forward(rng.random((2, 3, 8, 8)).astype(np.float32), train=True, rng=RngState(0))
    ckpt = ModelCheckpoint.from_network(net, epoch=4, note="x")
    path = tmp_path / "m.lsn"
    save_checkpoint(ckpt, path)
    loaded = load_checkpoint(path)
    assert loaded == ckpt
    assert loaded.metadata == {"epoch": 4, "note": "x"}
    x = rng.random((1, 3, 10, 14)).astype(np.float32)
    assert loaded.build_network().forward(x).tobytes() == net.forward(x).tobytes()
    assert to_bytes(loaded) == path.read_bytes()


def test_checkpoint_rejects_corruption():
    data = to_bytes(ModelCheckpoint.from_network(_net()))
    with pytest.raises(CheckpointError):
        from_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        from_bytes(data[:-3])
    with pytest.raises(CheckpointError):
        from_bytes(data + b"\0")
    bumped = data[:4] + struct.pack("<I", 99) + data[8:]
    with pytest.raises(CheckpointError):
        from_bytes(bumped)


def test_checkpoint_shape_mismatch():
    ckpt = ModelCheckpoint.from_network(_net())
    other = NetworkConfig(stage_channels=(4, 16), bottleneck_channels=8)
    with pytest.raises(CheckpointError):
        ModelCheckpoint(other, ckpt.state).validate()


def test_missing_checkpoint(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "none.lsn")
