"""Finite-difference verification of every primitive and the full network."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network, ops
from .ops import ConvSpec, finite_diff_check

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    instances: int
    max_error: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def _corrupt(grads, enabled):
    if not enabled:
        return grads
    grads = [np.array(g, dtype=float, copy=True) for g in grads]
    grads[0] *= 2.0
    return grads


def _random_conv_case(rng):
    c, o = rng.integers(1, 3, size=2)
    kt, kh, kw = rng.integers(1, 3), rng.choice([1, 3]), rng.choice([1, 3])
    stride = tuple(int(s) for s in rng.integers(1, 3, size=3))
    padding = (int(rng.integers(0, 2)), int(rng.integers(0, 2)), int(rng.integers(0, 2)))
    t, h, w = (int(v) for v in rng.integers(3, 6, size=3))
    x = rng.normal(size=(1, c, t, h, w))
    weights = rng.normal(size=(o, c, kt, kh, kw))
    bias = rng.normal(size=o)
    return x, weights, bias, ConvSpec(stride, padding)


def check_conv3d(rng, instances=20, fault=False) -> float:
    worst = 0.0
    for _ in range(instances):
        x, wts, b, spec = _random_conv_case(rng)
        g = rng.normal(size=ops.conv3d_forward(x, wts, b, spec).shape)

        def f(x, wts, b):
            val = float((ops.conv3d_forward(x, wts, b, spec) * g).sum())
            return val, _corrupt(ops.conv3d_backward(x, wts, spec, g), fault)

        worst = max(worst, finite_diff_check(f, [x, wts, b]))
    return worst


def check_tconv3d(rng, instances=20, fault=False) -> float:
    worst = 0.0
    for _ in range(instances):
        c, o = (int(v) for v in rng.integers(1, 4, size=2))
        kernel = (1, int(rng.choice([1, 3])), int(rng.choice([1, 3])))
        spec = ConvSpec.same(kernel)
        x = rng.normal(size=(1, c, 1, *(int(v) for v in rng.integers(2, 6, size=2))))
        wts = rng.normal(size=(o, c, *kernel))
        b = rng.normal(size=o)
        g = rng.normal(size=ops.tconv3d_forward(x, wts, b, spec).shape)

        def f(x, wts, b):
            val = float((ops.tconv3d_forward(x, wts, b, spec) * g).sum())
            return val, _corrupt(ops.tconv3d_backward(x, wts, spec, g), fault)

        worst = max(worst, finite_diff_check(f, [x, wts, b]))
    return worst


def check_maxpool(rng, instances=20, fault=False) -> float:
    worst = 0.0
    for _ in range(instances):
        shape = (1, int(rng.integers(1, 3)), int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3)), 2 * int(rng.integers(1, 3)))
        # distinct values at least 1e-2 apart keep every argmax stable under the probe
        x = rng.permutation(np.arange(np.prod(shape))).reshape(shape) * 1e-2 + rng.uniform(0, 1e-3)
        g = rng.normal(size=ops.maxpool_122(x)[0].shape)

        def f(x):
            y, idx = ops.maxpool_122(x)
            return float((y * g).sum()), _corrupt([ops.maxpool_122_backward(idx, g)], fault)

        worst = max(worst, finite_diff_check(f, [x]))
    return worst


def _pointwise(rng, instances, forward, backward, sample, fault):
    worst = 0.0
    for _ in range(instances):
        shape = tuple(int(v) for v in rng.integers(1, 4, size=5))
        x = sample(shape)
        g = rng.normal(size=forward(x).shape)

        def f(x):
            return float((forward(x) * g).sum()), _corrupt([backward(x, g)], fault)

        worst = max(worst, finite_diff_check(f, [x]))
    return worst


def check_upsample(rng, instances=20, fault=False) -> float:
    return _pointwise(rng, instances, ops.upsample_122,
                      lambda x, g: ops.upsample_122_backward(g), lambda s: rng.normal(size=s), fault)


def check_relu(rng, instances=20, fault=False) -> float:
    def away_from_kink(shape):
        x = rng.normal(size=shape)
        return np.where(np.abs(x) < 0.1, x + np.sign(x + 1e-12) * 0.1, x)

    return _pointwise(rng, instances, ops.relu, ops.relu_backward, away_from_kink, fault)


def check_sigmoid(rng, instances=20, fault=False) -> float:
    return _pointwise(rng, instances, ops.sigmoid,
                      lambda x, g: ops.sigmoid_backward(ops.sigmoid(x), g),
                      lambda s: rng.normal(scale=3.0, size=s), fault)


def check_branch_average(rng, instances=20, fault=False) -> float:
    worst = 0.0
    for _ in range(instances):
        k = int(rng.integers(1, 4))
        shape = tuple(int(v) for v in rng.integers(1, 4, size=5))
        parts = [rng.normal(size=shape) for _ in range(k)]
        g = rng.normal(size=shape)

        def f(*parts):
            return float((ops.branch_average(parts) * g).sum()), _corrupt(ops.branch_average_backward(g, k), fault)

        worst = max(worst, finite_diff_check(f, parts))
    return worst


def check_bce(rng, instances=20, fault=False) -> float:
    worst = 0.0
    for _ in range(instances):
        shape = tuple(int(v) for v in rng.integers(1, 4, size=5))
        p = rng.uniform(0.05, 0.95, size=shape)
        y = (rng.random(shape) < 0.5).astype(float)
        m = (rng.random(shape) < 0.8).astype(float)

        def f(p):
            loss, grad = ops.bce_loss(p, y, m)
            return loss, _corrupt([grad], fault)

        worst = max(worst, finite_diff_check(f, [p]))
    return worst


def check_network(seed=0, size=8, coords_per_tensor=4, eps=1e-6, fault=False) -> float:
    """End-to-end check of every layer's gradient for loss = sum(prob_map).

    Each weight and bias tensor is probed at ``coords_per_tensor`` random
    coordinates.
    """
    rng = np.random.default_rng(seed)
    params = network.init_params(seed)
    history = rng.random((1, 3, network.HISTORY_LENGTH, size, size))
    current = rng.random((1, 3, 1, size, size))
    names = params.names

    def f(*arrays):
        for i, name in enumerate(names):
            params[name].weights = arrays[2 * i]
            params[name].bias = arrays[2 * i + 1]
        prob, cache = network.forward(history, current, params)
        grads = network.backward(cache, params, np.ones_like(prob))
        flat = [a for name in names for a in grads[name]]
        return float(prob.sum()), _corrupt(flat, fault)

    inputs = [a for layer in params for a in (layer.weights, layer.bias)]
    return finite_diff_check(f, inputs, eps=eps, max_coords=coords_per_tensor, rng=rng)


PRIMITIVES = {
    "conv3d": check_conv3d,
    "tconv3d": check_tconv3d,
    "maxpool_122": check_maxpool,
    "upsample_122": check_upsample,
    "relu": check_relu,
    "sigmoid": check_sigmoid,
    "branch_average": check_branch_average,
    "bce_loss": check_bce,
}


def run_all(seed: int = 0, instances: int = 20, inject_fault: bool = False) -> list[CheckResult]:
    results = []
    for name, check in PRIMITIVES.items():
        rng = np.random.default_rng([seed, len(results)])
        results.append(CheckResult(name, instances, check(rng, instances, fault=inject_fault)))
    results.append(CheckResult("network_8x8", 1, check_network(seed, fault=inject_fault)))
    return results
