"""Finite-difference verification of every differentiable operation.

Each suite entry builds an operation closure and its differentiable inputs
at float64 and compares analytic gradients against central differences via
:func:`ivusnet.tensor.grad_check`. The full-network check perturbs the input
image and a seeded sample of parameter entries of a small float64 network.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .network import ArchConfig, build_network
from .tensor import (Tensor, add, concat_channels, grad_check, mul,
                     reduce_mean, reduce_sum)

PER_OP_TOL = 1e-4
NETWORK_TOL = 1e-3


def _away_from_zero(rng, shape, margin=0.2):
    x = rng.standard_normal(shape)
    return x + margin * np.sign(x)


def _suite_cases(rng, shape):
    """Yield (name, op, differentiable inputs) triples for one base shape."""
    b, c, h, w = shape
    x = rng.standard_normal(shape)
    x2 = rng.standard_normal(shape)

    yield "add", add, [x, x2]
    yield "add_bias", add, [x, rng.standard_normal(c)]
    yield "mul", mul, [x, x2]
    yield "concat_channels", concat_channels, \
        [x, rng.standard_normal((b, c + 1, h, w))]
    yield "reduce_mean", reduce_mean, [x]

    for kernel, stride, padding, tag in ((3, 1, "same", "3x3_same"),
                                         (1, 1, "valid", "1x1"),
                                         (5, 1, "same", "5x5_same"),
                                         (2, 2, "valid", "2x2_stride2")):
        wt = rng.standard_normal((c + 1, c, kernel, kernel)) * 0.5
        bias = rng.standard_normal(c + 1) * 0.1
        yield (f"conv2d_{tag}",
               lambda xi, wi, bi, s=stride, p=padding:
                   ops.conv2d(xi, wi, bi, stride=s, padding=p),
               [x, wt, bias])

    dw = rng.standard_normal((c, c + 1, 2, 2)) * 0.5
    db = rng.standard_normal(c + 1) * 0.1
    yield "deconv2d_2x2", ops.deconv2d_2x2, [x, dw, db]
    yield "avgpool_2x2", ops.avgpool_2x2, [x]

    gamma = rng.uniform(0.5, 1.5, c)
    beta = rng.standard_normal(c) * 0.1

    def bn_train(xi, gi, bi):
        state = ops.BatchNormState.create(c, dtype=np.float64)
        return ops.batchnorm(xi, gi, bi, state, training=True)

    def bn_infer(xi, gi, bi):
        state = ops.BatchNormState.create(c, dtype=np.float64)
        state.running_mean[:] = rng_mean
        state.running_var[:] = rng_var
        return ops.batchnorm(xi, gi, bi, state, training=False)

    rng_mean = rng.standard_normal(c) * 0.2
    rng_var = rng.uniform(0.5, 2.0, c)
    yield "batchnorm_train", bn_train, [x, gamma, beta]
    yield "batchnorm_infer", bn_infer, [x, gamma, beta]

    alpha = rng.uniform(0.1, 0.5, c)
    yield "prelu", ops.prelu, [_away_from_zero(rng, shape), alpha]
    yield "sigmoid", ops.sigmoid, [x]

    target = (rng.random(shape) > 0.5).astype(np.float64)
    pred = rng.uniform(0.2, 0.8, shape)
    yield "bce_loss", lambda p: ops.bce_loss(p, target), [pred]
    yield "sigmoid_bce_chain", \
        lambda xi: ops.bce_loss(ops.sigmoid(xi), target), [x]


SUITE_SHAPES = ((1, 2, 6, 6), (2, 3, 4, 4))


def gradient_suite(seeds=5, shapes=SUITE_SHAPES):
    """Run grad_check for every op over all seeds and shapes.

    Returns a dict mapping op name to the worst relative error observed.
    """
    worst = {}
    for seed in range(seeds):
        for shape in shapes:
            rng = np.random.default_rng([seed, shape[1], shape[2]])
            for name, op, inputs in _suite_cases(rng, shape):
                err = grad_check(op, inputs, seed=seed)
                worst[name] = max(worst.get(name, 0.0), err)
    return worst


def _to_float64(net):
    for p in net.named_parameters().values():
        p.data = p.data.astype(np.float64)
    for _, mod in net._named_modules():
        if hasattr(mod, "state"):
            mod.state.running_mean = mod.state.running_mean.astype(np.float64)
            mod.state.running_var = mod.state.running_var.astype(np.float64)
    return net


def network_gradient_check(seed=0, image_hw=8, params_sampled=120, eps=1e-5):
    """End-to-end finite-difference check of a small float64 network.

    Checks every entry of the input image plus a seeded sample of parameter
    entries spread across all parameter tensors. Returns the max relative
    error.
    """
    rng = np.random.default_rng(seed)
    cfg = ArchConfig.from_preset("tiny")
    net = _to_float64(build_network(cfg, seed))
    img = Tensor(rng.random((1, 1, image_hw, image_hw)), requires_grad=True)
    proj = rng.standard_normal((1, 1, image_hw, image_hw))

    def loss_value():
        return float((net.forward(Tensor(img.data), training=True).data
                      * proj).sum())

    net.zero_grad()
    img.zero_grad()
    out = net.forward(img, training=True)
    reduce_sum(mul(out, Tensor(proj))).backward()

    probes = [("image", img.data, img.grad, np.arange(img.data.size))]
    params = net.named_parameters()
    per_param = max(1, params_sampled // len(params))
    for name, p in params.items():
        k = min(per_param, p.data.size)
        idxs = rng.choice(p.data.size, size=k, replace=False)
        probes.append((name, p.data, p.grad, idxs))

    max_err = 0.0
    for _, arr, grad, idxs in probes:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = loss_value()
            flat[i] = orig - eps
            f_minus = loss_value()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2 * eps)
            err = abs(gflat[i] - fd) / max(1.0, abs(gflat[i]))
            max_err = max(max_err, err)
    return max_err
