"""Compact U-shaped encoder-decoder with skip connections."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..errors import NumericalError, ShapeError
from ..rng import RngState
from .layers import (
    BatchNorm2d,
    Conv2d,
    Dropout,
    Layer,
    MaxPool2,
    ReLU,
    Sigmoid,
    UpsampleNearest2,
    check_finite,
)


@dataclass(frozen=True)
class NetworkConfig:
    in_channels: int = 3
    stage_channels: Tuple[int, ...] = (16, 32, 64)
    bottleneck_channels: int = 128
    dropout_prob: float = 0.5
    skip_connections: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if len(self.stage_channels) < 1:
            raise ValueError("need at least one encoder stage")
        if self.in_channels < 1 or self.bottleneck_channels < 1 or min(self.stage_channels) < 1:
            raise ValueError("channel counts must be >= 1")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError(f"dropout_prob must lie in [0, 1), got {self.dropout_prob}")

    @property
    def stride(self) -> int:
        return 2 ** len(self.stage_channels)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d


class _Block:
    """conv3x3 - BN - ReLU."""

    def __init__(self, cin: int, cout: int, name: str) -> None:
        self.conv = Conv2d(cin, cout, 3, name=f"{name}.conv")
        self.bn = BatchNorm2d(cout, name=f"{name}.bn")
        self.relu = ReLU(name=f"{name}.relu")

    def layers(self) -> List[Layer]:
        return [self.conv, self.bn, self.relu]

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        return self.relu(self.bn(self.conv(x, train), train), train)

    def backward(self, d: np.ndarray) -> np.ndarray:
        return self.conv.backward(self.bn.backward(self.relu.backward(d)))


class EncoderDecoder:
    """Encoder stages ``[block, block, maxpool]``, a bottleneck ``[block,
    dropout]``, mirrored decoder stages ``[upsample, concat skip, block,
    block]`` and a 1x1 convolution with sigmoid head.

    Inputs whose sides are not multiples of ``2**stages`` are padded by edge
    replication on the bottom/right and the output is cropped back.
    """

    def __init__(self, config: NetworkConfig, dtype=np.float32) -> None:
        self.config = config
        self.dtype = np.dtype(dtype)
        ch = config.stage_channels
        self.encoder: List[Tuple[_Block, _Block, MaxPool2]] = []
        cin = config.in_channels
        for s, c in enumerate(ch):
            self.encoder.append((
                _Block(cin, c, f"enc{s}.0"),
                _Block(c, c, f"enc{s}.1"),
                MaxPool2(name=f"enc{s}.pool"),
            ))
            cin = c
        self.bottleneck = _Block(cin, config.bottleneck_channels, "mid")
        self.dropout = Dropout(config.dropout_prob, name="mid.dropout")
        self.decoder: List[Tuple[UpsampleNearest2, _Block, _Block]] = []
        cin = config.bottleneck_channels
        for s in reversed(range(len(ch))):
            c = ch[s]
            first_in = cin + c if config.skip_connections else cin
            self.decoder.append((
                UpsampleNearest2(name=f"dec{s}.up"),
                _Block(first_in, c, f"dec{s}.0"),
                _Block(c, c, f"dec{s}.1"),
            ))
            cin = c
        self.head = Conv2d(cin, 1, 1, name="head.conv")
        self.sigmoid = Sigmoid(name="head.sigmoid")
        if self.dtype != np.float32:
            for layer in self.layers():
                layer.astype(self.dtype)

    # -- parameter bookkeeping -------------------------------------------------

    def layers(self) -> Iterator[Layer]:
        for b0, b1, pool in self.encoder:
            yield from b0.layers()
            yield from b1.layers()
            yield pool
        yield from self.bottleneck.layers()
        yield self.dropout
        for up, b0, b1 in self.decoder:
            yield up
            yield from b0.layers()
            yield from b1.layers()
        yield self.head
        yield self.sigmoid

    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for layer in self.layers():
            for k, v in layer.params.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def buffers(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for layer in self.layers():
            for k, v in layer.buffers.items():
                out[f"{layer.name}.{k}"] = v
        return out

    def gradients(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for layer in self.layers():
            for k in layer.params:
                out[f"{layer.name}.{k}"] = layer.grads[k]
        return out

    def state(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters followed by buffers, in a fixed order."""
        out = self.parameters()
        out.update(self.buffers())
        return out

    def _slot(self, key: str) -> Tuple[Layer, str, str]:
        lname, _, pname = key.rpartition(".")
        for layer in self.layers():
            if layer.name == lname:
                if pname in layer.params:
                    return layer, "params", pname
                if pname in layer.buffers:
                    return layer, "buffers", pname
        raise KeyError(key)

    def set_array(self, key: str, value: np.ndarray) -> None:
        layer, store, pname = self._slot(key)
        current = getattr(layer, store)[pname]
        if tuple(value.shape) != current.shape:
            raise ShapeError(f"{key}: shape {tuple(value.shape)} != expected {current.shape}")
        getattr(layer, store)[pname] = np.array(value, dtype=self.dtype)

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        expected = list(self.state().keys())
        if sorted(expected) != sorted(state.keys()):
            missing = set(expected) - set(state)
            extra = set(state) - set(expected)
            raise ShapeError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k in expected:
            self.set_array(k, state[k])
        self.zero_grad()

    def zero_grad(self) -> None:
        for layer in self.layers():
            layer.zero_grad()

    def init_parameters(self, seed: int) -> None:
        """He-uniform conv weights, zero biases, unit gamma, zero beta."""
        rng = RngState(seed)
        for layer in self.layers():
            if isinstance(layer, Conv2d):
                layer.init_he_uniform(rng)
                layer.params["weight"] = layer.params["weight"].astype(self.dtype)
                layer.params["bias"] = layer.params["bias"].astype(self.dtype)
        self.zero_grad()

    def copy(self, dtype=None) -> "EncoderDecoder":
        other = EncoderDecoder(self.config, dtype=dtype or self.dtype)
        other.load_state({k: v.astype(other.dtype) for k, v in self.state().items()})
        return other

    # -- computation -----------------------------------------------------------

    def _pad(self, x: np.ndarray) -> np.ndarray:
        s = self.config.stride
        h, w = x.shape[2], x.shape[3]
        ph, pw = (-h) % s, (-w) % s
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="edge")
        return x

    def forward(self, x: np.ndarray, train: bool = False, rng: Optional[RngState] = None) -> np.ndarray:
        """Per-pixel lesion probabilities, shape ``(n, 1, H, W)``."""
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"network expects (n, {self.config.in_channels}, H, W) input, got {x.shape}"
            )
        x = np.asarray(x, dtype=self.dtype)
        h, w = x.shape[2], x.shape[3]
        self._in_shape = (h, w)
        x = self._pad(x)
        self._padded_shape = x.shape
        x = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
        self.dropout.rng = rng
        skips = []
        for b0, b1, pool in self.encoder:
            x = b1.forward(b0.forward(x, train), train)
            skips.append(x)
            x = pool(x, train)
        x = self.dropout(self.bottleneck.forward(x, train), train)
        self._skip_channels = []
        for (up, b0, b1), skip in zip(self.decoder, reversed(skips)):
            x = up(x, train)
            if self.config.skip_connections:
                self._skip_channels.append(x.shape[3])
                x = np.concatenate([x, skip], axis=3)
            x = b1.forward(b0.forward(x, train), train)
        probs = self.sigmoid(self.head(x, train), train)
        probs = probs.transpose(0, 3, 1, 2)[:, :, :h, :w]
        check_finite(probs, "network output")
        return probs

    def backward(self, dprobs: np.ndarray) -> None:
        """Accumulate parameter gradients for ``d loss / d probs``."""
        ph, pw = self._padded_shape[2], self._padded_shape[3]
        h, w = self._in_shape
        d = np.zeros((dprobs.shape[0], ph, pw, 1), dtype=self.dtype)
        d[:, :h, :w, 0] = dprobs[:, 0]
        d = self.head.backward(self.sigmoid.backward(d))
        n_stages = len(self.encoder)
        skip_grads: List[Optional[np.ndarray]] = [None] * n_stages
        for i in reversed(range(n_stages)):
            up, b0, b1 = self.decoder[i]
            d = b0.backward(b1.backward(d))
            if self.config.skip_connections:
                c = self._skip_channels[i]
                # decoder i consumes the skip of encoder stage n_stages-1-i
                skip_grads[n_stages - 1 - i] = d[..., c:]
                d = d[..., :c]
            d = up.backward(d)
        d = self.bottleneck.backward(self.dropout.backward(d))
        for s in reversed(range(len(self.encoder))):
            b0, b1, pool = self.encoder[s]
            d = pool.backward(d)
            if self.config.skip_connections:
                d = d + skip_grads[s]
            d = b0.backward(b1.backward(d))

    def assert_finite(self) -> None:
        for k, v in self.state().items():
            if not np.isfinite(v).all():
                raise NumericalError(f"parameter {k} is not finite")
