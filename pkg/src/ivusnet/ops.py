"""Forward and backward rules for the network's building-block operations.

Convolution uses the cross-correlation convention (no kernel flip) and an
im2col layout chosen so that the whole spatial reduction is a single GEMM:
columns are materialized channel-major as ``(C*kh*kw, B*Ho*Wo)`` with
contiguous row copies, which is considerably faster than the textbook
batch-major gather on small channel counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import Tensor, make_op


def _im2col(xp, kh, kw, stride, ho, wo):
    b, c, _, _ = xp.shape
    cols = np.empty((c, kh, kw, b, ho * wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            blk = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[:, i, j] = blk.transpose(1, 0, 2, 3).reshape(c, b, ho * wo)
    return cols.reshape(c * kh * kw, b * ho * wo)


def _col2im(gcols, xpshape, kh, kw, stride, ho, wo):
    b, c = xpshape[0], xpshape[1]
    gxp = np.zeros(xpshape, dtype=gcols.dtype)
    gr = gcols.reshape(c, kh, kw, b, ho, wo)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                np.moveaxis(gr[:, i, j], 0, 1)
    return gxp


def conv2d(x, weight, bias=None, stride=1, padding="valid"):
    """2-D cross-correlation of a (B,C,H,W) tensor with (O,C,kh,kw) weights.

    ``padding="same"`` zero-pads so the spatial size is preserved and is only
    valid for stride 1; ``"valid"`` applies no padding. Stride 2 requires even
    input height and width. Gradients flow to the input, the weights and the
    bias.
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects a 4-D input, got {x.shape}")
    o, c, kh, kw = weight.shape
    if x.shape[1] != c:
        raise DimensionError(
            f"conv2d: input has {x.shape[1]} channels, weights expect {c}")
    if padding == "same":
        if stride != 1:
            raise DimensionError("conv2d: 'same' padding requires stride 1")
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    elif padding == "valid":
        ph = pw = 0
    else:
        raise ValueError(f"conv2d: unknown padding {padding!r}")
    bsz, _, h, w = x.shape
    if stride == 2 and (h % 2 or w % 2):
        raise DimensionError(
            f"conv2d: stride-2 needs even spatial dims, got {h}x{w}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    out = weight.data.reshape(o, -1) @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(
        np.moveaxis(out.reshape(o, bsz, ho, wo), 0, 1))
    xpshape = xp.shape

    def backward(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, 1, 0)).reshape(o, -1)
        if weight.requires_grad:
            weight.accumulate_grad((g2 @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g2.sum(axis=1))
        if x.requires_grad:
            gcols = weight.data.reshape(o, -1).T @ g2
            gxp = _col2im(gcols, xpshape, kh, kw, stride, ho, wo)
            gx = gxp[:, :, ph:ph + h, pw:pw + w] if ph or pw else gxp
            x.accumulate_grad(gx)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


def deconv2d_2x2(x, weight, bias=None):
    """Transposed convolution with a 2x2 kernel and stride 2 (exact 2x upsample).

    Weights are laid out (C_in, C_out, 2, 2). Because the stride equals the
    kernel size the output tiles do not overlap, so each input pixel simply
    stamps a scaled copy of the kernel.
    """
    if weight.shape[2:] != (2, 2):
        raise ValueError(f"deconv2d_2x2 requires a 2x2 kernel, got "
                         f"{weight.shape[2]}x{weight.shape[3]}")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"deconv2d_2x2: input has {x.shape[1]} channels, weights expect "
            f"{weight.shape[0]}")
    bsz, c, h, w = x.shape
    o = weight.shape[1]
    t = np.tensordot(x.data, weight.data, axes=([1], [0]))  # B,H,W,O,2,2
    out = t.transpose(0, 3, 1, 4, 2, 5).reshape(bsz, o, 2 * h, 2 * w)
    out = np.ascontiguousarray(out)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)

    def backward(g):
        gr = g.reshape(bsz, o, h, 2, w, 2).transpose(0, 2, 4, 1, 3, 5)
        if x.requires_grad:
            gx = np.tensordot(gr, weight.data, axes=([3, 4, 5], [1, 2, 3]))
            x.accumulate_grad(gx.transpose(0, 3, 1, 2))
        if weight.requires_grad:
            gw = np.tensordot(x.data, gr, axes=([0, 2, 3], [0, 1, 2]))
            weight.accumulate_grad(gw)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_op(out, parents, backward)


def avgpool_2x2(x):
    """Mean over disjoint 2x2 windows; halves H and W."""
    bsz, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avgpool_2x2 needs even spatial dims, got {h}x{w}")
    out = x.data.reshape(bsz, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(g):
        if x.requires_grad:
            gx = np.repeat(np.repeat(g, 2, axis=2), 2, axis=3)
            x.accumulate_grad(gx * np.asarray(0.25, dtype=g.dtype))

    return make_op(out, (x,), backward)


@dataclass
class BatchNormState:
    """Running statistics and hyperparameters for one batch-norm layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        return cls(running_mean=np.zeros(channels, dtype=dtype),
                   running_var=np.ones(channels, dtype=dtype),
                   momentum=momentum, eps=eps)


def batchnorm(x, gamma, beta, state, training):
    """Per-channel batch normalization with learnable scale and shift.

    Training mode normalizes by the batch statistics (biased variance) and
    updates the running statistics in place as
    ``running <- momentum * running + (1 - momentum) * batch``. Inference mode
    is a pure per-channel affine map using the running statistics.
    """
    c = x.shape[1]
    if gamma.shape != (c,) or state.running_mean.shape != (c,):
        raise DimensionError(
            f"batchnorm: state sized {state.running_mean.shape[0]} does not "
            f"match {c} input channels")
    if training:
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        state.running_mean[:] = m * state.running_mean + (1 - m) * mean
        state.running_var[:] = m * state.running_var + (1 - m) * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean.reshape(1, c, 1, 1)) * inv.reshape(1, c, 1, 1)
    out = gamma.data.reshape(1, c, 1, 1) * xhat + beta.data.reshape(1, c, 1, 1)
    n = x.shape[0] * x.shape[2] * x.shape[3]

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            scale = (gamma.data * inv).reshape(1, c, 1, 1)
            if training:
                gsum = g.sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                gxsum = (g * xhat).sum(axis=(0, 2, 3)).reshape(1, c, 1, 1)
                x.accumulate_grad(scale * (g - gsum / n - xhat * gxsum / n))
            else:
                x.accumulate_grad(scale * g)

    return make_op(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


def prelu(x, alpha):
    """Parametric ReLU: identity for positive entries, per-channel slope
    ``alpha`` for negative ones. Gradients flow to the input and to alpha."""
    c = x.shape[1]
    if alpha.shape != (c,):
        raise DimensionError(
            f"prelu: alpha sized {alpha.shape} does not match {c} channels")
    a = alpha.data.reshape(1, c, 1, 1)
    pos = x.data > 0
    out = np.where(pos, x.data, a * x.data)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(pos, g, a * g))
        if alpha.requires_grad:
            alpha.accumulate_grad(
                np.where(pos, 0.0, g * x.data).sum(axis=(0, 2, 3)))

    return make_op(out, (x, alpha), backward)


def sigmoid(x):
    """Numerically stable logistic function with output strictly inside (0,1)."""
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the open-interval contract even where the float rounds to 0 or 1
    one = np.asarray(1.0, dtype=d.dtype)
    zero = np.asarray(0.0, dtype=d.dtype)
    np.clip(out, np.nextafter(zero, one), np.nextafter(one, zero), out=out)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * out * (1.0 - out))

    return make_op(out, (x,), backward)


def bce_loss(pred, target):
    """Mean binary cross-entropy between probabilities and a {0,1} target.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs; the gradient
    is defined through the clamp (zero where the clamp is active).
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != t.shape:
        raise DimensionError(
            f"bce_loss: prediction {pred.shape} vs target {t.shape}")
    lo, hi = 1e-7, 1.0 - 1e-7
    p = np.clip(pred.data, lo, hi)
    loss = -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean()
    inside = (pred.data >= lo) & (pred.data <= hi)
    n = p.size

    def backward(g):
        if pred.requires_grad:
            gp = inside * (p - t) / (p * (1.0 - p)) / n
            pred.accumulate_grad((float(g) * gp).astype(pred.dtype, copy=False))

    return make_op(np.asarray(loss, dtype=pred.dtype), (pred,), backward)
