from __future__ import annotations

import math

import numpy as np
import pytest

from lesionseg.errors import ShapeError
from lesionseg.losses import bce_loss, sgd_step, soft_jaccard_loss


def test_bce_values():
    y = np.zeros((1, 1, 4, 4))
    y[0, 0, :2] = 1
    assert bce_loss(y.copy(), y)[0] <= 1e-6
    loss, _ = bce_loss(np.full_like(y, 0.5), y)
    assert loss == pytest.approx(math.log(2), abs=1e-12)


def test_soft_jaccard_values():
    y = np.zeros((1, 1, 10, 10))
    assert soft_jaccard_loss(np.zeros_like(y), y)[0] == 0.0
    y[:] = 1.0
    loss, _ = soft_jaccard_loss(y.copy(), y)
    assert loss <= 0.01


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        bce_loss(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 2, 3)))


def test_sgd_plain_and_zero():
    w = {"w": np.array([1.0, 2.0])}
    sgd_step(w, {"w": np.array([0.5, -1.0])}, {}, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert w["w"].tolist() == pytest.approx([0.95, 2.1])
    before = w["w"].copy()
    sgd_step(w, {"w": np.zeros(2)}, {"w": np.zeros(2)}, lr=0.1, momentum=0.9, weight_decay=0.0)
    assert np.array_equal(w["w"], before)


def test_sgd_quadratic_bowl():
    w = {"w": np.array([1.0])}
    vel: dict = {}
    for _ in range(100):
        sgd_step(w, {"w": 2 * w["w"]}, vel, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert abs(w["w"][0]) < 1e-3
