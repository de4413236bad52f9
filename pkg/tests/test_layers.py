from __future__ import annotations

import numpy as np
import pytest

from lesionseg.errors import ShapeError
from lesionseg.nn.gradcheck import SUITES, numeric_grad, relative_error, run_gradcheck
from lesionseg.nn.layers import (
    BatchNorm2d,
    Conv2d,
    Dropout,
    MaxPool2,
    ReLU,
    Sigmoid,
    UpsampleNearest2,
    im2col3,
)
from lesionseg.rng import RngState


def test_conv_identity_and_zero(rng):
    x = rng.standard_normal((2, 5, 6, 3)).astype(np.float32)
    conv = Conv2d(3, 3, kernel=1)
    conv.params["weight"] = np.eye(3, dtype=np.float32)[:, :, None, None]
    assert np.array_equal(conv(x), x)
    zero = Conv2d(3, 4, kernel=3)
    assert not zero(x).any()
    with pytest.raises(ShapeError):
        Conv2d(3, 4, kernel=5)
    with pytest.raises(ShapeError):
        zero(np.zeros((1, 4, 4, 2), np.float32))


def test_conv3_matches_direct_loop(rng):
    x = rng.standard_normal((1, 4, 5, 2))
    conv = Conv2d(2, 3, kernel=3)
    conv.params["weight"] = rng.standard_normal((3, 2, 3, 3))
    conv.params["bias"] = rng.standard_normal(3)
    out = conv(x)
    xp = np.pad(x[0], ((1, 1), (1, 1), (0, 0)))
    ref = np.zeros((4, 5, 3))
    for y in range(4):
        for xx in range(5):
            patch = xp[y:y + 3, xx:xx + 3, :]  # (ky, kx, c)
            for o in range(3):
                ref[y, xx, o] = np.sum(patch * conv.params["weight"][o].transpose(1, 2, 0)) + conv.params["bias"][o]
    assert np.allclose(out[0], ref, atol=1e-12)


def test_im2col_layout():
    x = np.arange(2 * 3 * 3 * 2, dtype=np.float64).reshape(2, 3, 3, 2)
    cols = im2col3(x)
    assert cols.shape == (2 * 3 * 3, 18)
    # centre pixel of image 0: its row is the full 3x3x2 neighbourhood
    assert np.array_equal(cols[4], x[0].reshape(-1))


def test_batchnorm_fixed_points(rng):
    # balanced +-1 per channel: exactly zero mean, unit variance
    x = np.ones((4, 5, 5, 2))
    x.reshape(-1, 2)[rng.permutation(100)[:50]] = -1.0
    bn = BatchNorm2d(2)
    bn.astype(np.float64)
    assert np.max(np.abs(bn(x, train=True) - x)) < 1e-5
    bn.params["gamma"][:] = 0.0
    bn.params["beta"][:] = 5.0
    assert np.allclose(bn(x, train=True), 5.0)


def test_batchnorm_running_stats(rng):
    bn = BatchNorm2d(1)
    bn.astype(np.float64)
    x = rng.normal(3.0, 2.0, (8, 6, 6, 1))
    bn(x, train=True)
    assert bn.buffers["running_mean"][0] == pytest.approx(0.1 * x.mean())
    assert bn.buffers["running_var"][0] == pytest.approx(0.9 + 0.1 * x.var())
    # eval mode uses the stored statistics, not the batch
    y = bn(x, train=False)
    expected = (x - bn.buffers["running_mean"]) / np.sqrt(bn.buffers["running_var"] + bn.eps)
    assert np.allclose(y, expected)


def test_relu_sigmoid():
    x = np.array([-2.0, 0.0, 3.0]).reshape(1, 1, 3, 1)
    assert ReLU()(x).ravel().tolist() == [0.0, 0.0, 3.0]
    s = Sigmoid()(np.array([-1000.0, 0.0, 1000.0]).reshape(1, 1, 3, 1))
    assert s.ravel().tolist() == [0.0, 0.5, 1.0]


def test_maxpool():
    pool = MaxPool2()
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert pool(x).ravel().tolist() == [4.0]
    dx = pool.backward(np.ones((1, 1, 1, 1)))
    assert dx.ravel().tolist() == [0.0, 0.0, 0.0, 1.0]
    const = np.full((1, 4, 6, 2), 7.0)
    assert pool(const).shape == (1, 2, 3, 2) and np.all(pool(const) == 7.0)


def test_upsample():
    up = UpsampleNearest2()
    assert up(np.full((1, 1, 1, 1), 2.5)).ravel().tolist() == [2.5] * 4
    dx = up.backward(np.ones((1, 2, 2, 1)))
    assert dx.ravel().tolist() == [4.0]


def test_dropout():
    x = np.ones((1, 100, 1000, 1), np.float32)
    d = Dropout(0.5)
    d.rng = RngState(0)
    y = d(x, train=True)
    assert abs(float(y.mean()) - 1.0) < 0.02
    assert set(np.unique(y).tolist()) == {0.0, 2.0}
    assert d(x, train=False) is x
    assert Dropout(0.0)(x, train=True) is x
    with pytest.raises(ValueError):
        Dropout(1.0)


def test_numeric_grad_on_known_function():
    x = np.array([1.0, -2.0, 3.0])
    g = numeric_grad(lambda: float(np.sum(x ** 3)), x, 1e-5)
    assert np.allclose(g, 3 * x ** 2, rtol=1e-8)
    assert relative_error(np.array([1.0]), np.array([1.0])) == 0.0


def test_gradcheck_all_suites_pass():
    results = run_gradcheck(seed=0)
    assert [r.name for r in results] == list(SUITES)
    for r in results:
        assert r.passed, (r.name, r.max_rel_error)


@pytest.mark.parametrize("suite", ["conv3x3", "batchnorm", "bce_loss", "network"])
def test_gradcheck_detects_perturbed_backward(suite):
    results = {r.name: r for r in run_gradcheck(seed=0, perturb=suite)}
    assert not results[suite].passed
    assert all(r.passed for name, r in results.items() if name != suite)
