"""Finite-difference verification of every analytic backward pass.

Each check runs the layer in float64, builds a scalar objective on top of
its output, and compares the analytic gradient with central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from ..losses import bce_loss, soft_jaccard_loss
from ..rng import RngState
from .layers import BatchNorm2d, Conv2d, Dropout, Layer, MaxPool2, ReLU, Sigmoid, UpsampleNearest2
from .network import EncoderDecoder, NetworkConfig

LAYER_TOL = 1e-3
NETWORK_TOL = 1e-2
REL_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    tolerance: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float, indices=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. the entries of ``x`` (modified in place, then restored)."""
    flat = x.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(len(idx) if indices is not None else flat.size)
    for k, i in enumerate(idx):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def _check_layer(
    name: str,
    layer: Layer,
    x: np.ndarray,
    rng: np.random.Generator,
    h: float,
    before_forward: Optional[Callable[[], None]] = None,
    train: bool = True,
    perturb: bool = False,
) -> GradcheckResult:
    layer.astype(np.float64)
    x = x.astype(np.float64)

    def run() -> np.ndarray:
        if before_forward is not None:
            before_forward()
        return layer.forward(x, train)

    weights = rng.standard_normal(run().shape)

    def objective() -> float:
        return float(np.sum(run() * weights))

    layer.zero_grad()
    run()
    dx = layer.backward(weights.copy())
    pairs = [(dx, x)] + [(layer.grads[k].copy(), layer.params[k]) for k in layer.params]
    worst = 0.0
    count = 0
    for analytic, target in pairs:
        if perturb:
            analytic = analytic * 1.05 + 1e-3
        numeric = numeric_grad(objective, target, h)
        worst = max(worst, relative_error(analytic, numeric))
        count += numeric.size
    tol = LAYER_TOL
    return GradcheckResult(name, worst, tol, count)


def _check_loss(name: str, fn, rng: np.random.Generator, h: float, perturb: bool) -> GradcheckResult:
    pred = rng.uniform(0.05, 0.95, size=(2, 1, 4, 5))
    target = (rng.uniform(size=pred.shape) < 0.4).astype(np.float64)
    _, analytic = fn(pred, target)
    if perturb:
        analytic = analytic * 1.05 + 1e-3
    numeric = numeric_grad(lambda: fn(pred, target)[0], pred, h)
    return GradcheckResult(name, relative_error(analytic, numeric), 1e-4, numeric.size)


def check_network(seed: int, perturb: bool = False, n_params: int = 48) -> GradcheckResult:
    """Whole encoder-decoder in train mode on a 3x16x16 input, BCE objective,
    against a random subset of parameter entries."""
    rng = np.random.default_rng(seed)
    net = EncoderDecoder(NetworkConfig(), dtype=np.float64)
    net.init_parameters(seed)
    x = rng.uniform(0, 1, size=(1, 3, 16, 16))
    target = (rng.uniform(size=(1, 1, 16, 16)) < 0.5).astype(np.float64)

    def objective() -> float:
        return bce_loss(net.forward(x, train=True, rng=RngState(seed)), target)[0]

    net.zero_grad()
    probs = net.forward(x, train=True, rng=RngState(seed))
    _, dprobs = bce_loss(probs, target)
    net.backward(dprobs)
    params = net.parameters()
    grads = net.gradients()
    names = list(params)
    worst = 0.0
    for _ in range(n_params):
        key = names[int(rng.integers(len(names)))]
        i = int(rng.integers(params[key].size))
        analytic = grads[key].reshape(-1)[i]
        if perturb:
            analytic = analytic * 1.05 + 1e-3
        numeric = numeric_grad(objective, params[key], 1e-5, [i])[0]
        worst = max(worst, relative_error(np.array([analytic]), np.array([numeric])))
    return GradcheckResult("network", worst, NETWORK_TOL, n_params)


SUITES = (
    "conv3x3",
    "conv1x1",
    "batchnorm",
    "relu",
    "sigmoid",
    "maxpool2",
    "upsample2",
    "dropout",
    "bce_loss",
    "soft_jaccard_loss",
    "network",
)


def run_gradcheck(seed: int = 0, perturb: Optional[str] = None) -> List[GradcheckResult]:
    """Run every suite. ``perturb`` names a suite whose analytic gradient is
    deliberately corrupted (negative control)."""
    if perturb is not None and perturb not in SUITES:
        raise ValueError(f"unknown gradcheck suite {perturb!r}")
    rng = np.random.default_rng(seed)
    results: List[GradcheckResult] = []

    def p(name: str) -> bool:
        return perturb == name

    conv3 = Conv2d(2, 3, 3, name="conv3x3")
    conv3.init_he_uniform(RngState(seed))
    conv3.params["bias"] = rng.standard_normal(3).astype(np.float32)
    results.append(_check_layer("conv3x3", conv3, rng.standard_normal((1, 4, 4, 2)), rng, 1e-2, perturb=p("conv3x3")))

    conv1 = Conv2d(2, 3, 1, name="conv1x1")
    conv1.init_he_uniform(RngState(seed + 1))
    results.append(_check_layer("conv1x1", conv1, rng.standard_normal((1, 4, 4, 2)), rng, 1e-2, perturb=p("conv1x1")))

    bn = BatchNorm2d(3, name="bn")
    bn.params["gamma"] = rng.uniform(0.5, 1.5, 3).astype(np.float32)
    bn.params["beta"] = rng.standard_normal(3).astype(np.float32)
    results.append(_check_layer("batchnorm", bn, rng.standard_normal((2, 3, 3, 3)) * 2 + 1, rng, 1e-4, perturb=p("batchnorm")))

    x = rng.uniform(0.1, 1.0, size=(1, 4, 4, 2)) * rng.choice([-1.0, 1.0], size=(1, 4, 4, 2))
    results.append(_check_layer("relu", ReLU(), x, rng, 1e-4, perturb=p("relu")))

    results.append(_check_layer("sigmoid", Sigmoid(), rng.uniform(-3, 3, size=(1, 4, 4, 2)), rng, 1e-4, perturb=p("sigmoid")))

    distinct = rng.permutation(32).reshape(1, 4, 4, 2) * 0.1
    results.append(_check_layer("maxpool2", MaxPool2(), distinct, rng, 1e-4, perturb=p("maxpool2")))

    results.append(_check_layer("upsample2", UpsampleNearest2(), rng.standard_normal((1, 2, 3, 2)), rng, 1e-4, perturb=p("upsample2")))

    drop = Dropout(0.5, name="dropout")

    def fixed_mask() -> None:
        drop.rng = RngState(seed)

    results.append(_check_layer("dropout", drop, rng.standard_normal((1, 4, 4, 2)), rng, 1e-4,
                                before_forward=fixed_mask, perturb=p("dropout")))

    results.append(_check_loss("bce_loss", bce_loss, rng, 1e-6, p("bce_loss")))
    results.append(_check_loss("soft_jaccard_loss", soft_jaccard_loss, rng, 1e-6, p("soft_jaccard_loss")))
    results.append(check_network(seed, perturb=p("network")))
    return results


def format_table(results: List[GradcheckResult], seconds: Optional[float] = None) -> str:
    lines = [f"{'layer':<18} {'max_rel_err':>12} {'tolerance':>10}  result"]
    for r in results:
        lines.append(
            f"{r.name:<18} {r.max_rel_error:>12.3e} {r.tolerance:>10.0e}  {'PASS' if r.passed else 'FAIL'}"
        )
    if seconds is not None:
        lines.append(f"elapsed {seconds:.2f}s")
    return "\n".join(lines)


def timed_gradcheck(seed: int = 0, perturb: Optional[str] = None):
    t0 = time.perf_counter()
    results = run_gradcheck(seed, perturb)
    return results, time.perf_counter() - t0
