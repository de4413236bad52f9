"""Layers with hand-written forward and backward passes.

Layers take channels-last ``(N, H, W, C)`` arrays, which keeps the
convolution's patch gathering contiguous; the network transposes from and to
``(N, C, H, W)`` at its boundary. Layers work in whatever float
dtype they are handed: float32 for training and inference, float64 for
gradient checking. Each layer caches what its backward pass needs during
``forward`` and accumulates parameter gradients into ``self.grads``.
"""

from __future__ import annotations

import os
from typing import Dict, Optional

import numpy as np
from numpy.lib.stride_tricks import as_strided

from ..errors import NumericalError, ShapeError
from ..rng import RngState

CHECK_FINITE = os.environ.get("LESIONSEG_CHECK_FINITE", "0") not in ("", "0")

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def check_finite(x: np.ndarray, where: str) -> None:
    if not np.isfinite(x).all():
        raise NumericalError(f"non-finite values produced by {where}")


class Layer:
    name: str = ""
    params: Dict[str, np.ndarray]
    grads: Dict[str, np.ndarray]
    buffers: Dict[str, np.ndarray]

    def __init__(self, name: str = "") -> None:
        self.name = name
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        out = self.forward(x, train)
        if CHECK_FINITE:
            check_finite(out, f"{type(self).__name__} {self.name}")
        return out

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def astype(self, dtype) -> None:
        for store in (self.params, self.buffers):
            for k in store:
                store[k] = store[k].astype(dtype)
        self.zero_grad()


class Conv2d(Layer):
    """Stride-1 cross-correlation with zero padding that preserves H x W.

    Weights are stored ``(out, in, k, k)``.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3, name: str = "") -> None:
        super().__init__(name)
        if kernel not in (1, 3):
            raise ShapeError(f"kernel must be 1 or 3, got {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.params["weight"] = np.zeros((out_channels, in_channels, kernel, kernel), np.float32)
        self.params["bias"] = np.zeros(out_channels, np.float32)
        self.zero_grad()
        self._cols: Optional[np.ndarray] = None
        self._shape = None

    def init_he_uniform(self, rng: RngState) -> None:
        fan_in = self.in_channels * self.kernel * self.kernel
        limit = np.sqrt(6.0 / fan_in)
        w = self.params["weight"]
        u = rng.uniform_block(w.size).reshape(w.shape)
        self.params["weight"] = ((2.0 * u - 1.0) * limit).astype(w.dtype)
        self.params["bias"] = np.zeros_like(self.params["bias"])

    def _wmat(self) -> np.ndarray:
        # rows ordered (ky, kx, c_in) to match the column layout of im2col3
        return self.params["weight"].transpose(2, 3, 1, 0).reshape(-1, self.out_channels)

    def _wmat_flipped(self) -> np.ndarray:
        # kernel rotated 180 degrees with in/out swapped: maps output grads to input grads
        w = self.params["weight"][:, :, ::-1, ::-1]
        return w.transpose(2, 3, 0, 1).reshape(-1, self.in_channels)

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"conv {self.name}: expected {self.in_channels} input channels, got shape {x.shape}")
        n, h, w, _ = x.shape
        cols = im2col3(x) if self.kernel == 3 else x.reshape(n * h * w, -1)
        out = cols @ self._wmat()
        out += self.params["bias"]
        self._cols = cols
        self._shape = x.shape
        return out.reshape(n, h, w, self.out_channels)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, h, w, c = self._shape
        k = self.kernel
        d2 = dout.reshape(n * h * w, self.out_channels)
        dwmat = self._cols.T @ d2
        self.grads["weight"] += dwmat.reshape(k, k, c, self.out_channels).transpose(3, 2, 0, 1)
        self.grads["bias"] += d2.sum(axis=0)
        if k == 1:
            return (d2 @ self._wmat().T).reshape(n, h, w, c)
        return (im2col3(dout) @ self._wmat_flipped()).reshape(n, h, w, c)


def im2col3(x: np.ndarray) -> np.ndarray:
    """3x3 zero-padded patches of an NHWC tensor as rows of ``(ky, kx, c)``."""
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:h + 1, 1:w + 1] = x
    s = xp.strides
    # (kx, c) for fixed (y, x, ky) is one contiguous run of 3c values
    win = as_strided(xp, shape=(n, h, w, 3, 3 * c), strides=(s[0], s[1], s[2], s[1], s[3]), writeable=False)
    return np.ascontiguousarray(win).reshape(n * h * w, 9 * c)


class BatchNorm2d(Layer):
    """Per-channel batch normalisation with running statistics."""

    def __init__(self, channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM, name: str = "") -> None:
        super().__init__(name)
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, np.float32)
        self.params["beta"] = np.zeros(channels, np.float32)
        self.buffers["running_mean"] = np.zeros(channels, np.float32)
        self.buffers["running_var"] = np.ones(channels, np.float32)
        self.zero_grad()
        self._cache = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.channels:
            raise ShapeError(f"batchnorm {self.name}: expected {self.channels} channels, got shape {x.shape}")
        gamma = self.params["gamma"]
        beta = self.params["beta"]
        if train:
            mean = x.mean(axis=(0, 1, 2))
            centered = x - mean
            var = (centered * centered).mean(axis=(0, 1, 2))
            m = self.momentum
            rm, rv = self.buffers["running_mean"], self.buffers["running_var"]
            self.buffers["running_mean"] = (m * rm + (1 - m) * mean).astype(rm.dtype)
            self.buffers["running_var"] = (m * rv + (1 - m) * var).astype(rv.dtype)
        else:
            mean = self.buffers["running_mean"].astype(x.dtype)
            var = self.buffers["running_var"].astype(x.dtype)
            centered = x - mean
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = centered * inv
        self._cache = (xhat, inv, train)
        return xhat * gamma + beta

    def backward(self, dout: np.ndarray) -> np.ndarray:
        xhat, inv, train = self._cache
        self.grads["gamma"] += (dout * xhat).sum(axis=(0, 1, 2))
        self.grads["beta"] += dout.sum(axis=(0, 1, 2))
        dxhat = dout * self.params["gamma"]
        if not train:
            return dxhat * inv
        m = dout.shape[0] * dout.shape[1] * dout.shape[2]
        s1 = dxhat.sum(axis=(0, 1, 2))
        s2 = (dxhat * xhat).sum(axis=(0, 1, 2))
        return (inv / m) * (m * dxhat - s1 - xhat * s2)


class ReLU(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._mask


class Sigmoid(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        e = np.exp(-np.abs(x))
        out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
        self._out = out
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return dout * self._out * (1 - self._out)


class MaxPool2(Layer):
    """2x2 max pooling, stride 2. Ties go to the first element in row-major order."""

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool needs even H and W, got {h}x{w}")
        win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
        idx = win.argmax(axis=-1)
        self._idx = idx
        self._shape = x.shape
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, h, w, c = self._shape
        onehot = np.zeros((n, h // 2, w // 2, c, 4), dtype=dout.dtype)
        np.put_along_axis(onehot, self._idx[..., None], dout[..., None], axis=-1)
        return onehot.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


class UpsampleNearest2(Layer):
    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        return x.repeat(2, axis=1).repeat(2, axis=2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        n, h, w, c = dout.shape
        return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))


class Dropout(Layer):
    """Inverted dropout. The keep-mask comes from an explicit RNG stream."""

    def __init__(self, prob: float, name: str = "") -> None:
        super().__init__(name)
        if not 0.0 <= prob < 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1), got {prob}")
        self.prob = prob
        self.rng: Optional[RngState] = None
        self._scale_mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if not train or self.prob == 0.0:
            self._scale_mask = None
            return x
        if self.rng is None:
            raise RuntimeError("dropout in train mode needs an RNG stream")
        keep = self.rng.uniform_block(x.size).reshape(x.shape) >= self.prob
        self._scale_mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.prob)
        return x * self._scale_mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._scale_mask is None:
            return dout
        return dout * self._scale_mask
