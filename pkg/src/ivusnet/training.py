"""Optimizer and training loop.

Training follows a fixed recipe: Adam at a constant learning rate (no decay),
mean binary cross-entropy on the sigmoid output, a seeded choice of original
(unaugmented) frames held out as a validation set, and one model per
segmentation target. The per-epoch validation score is the mean Jaccard of
the thresholded probability maps, without any contour extraction. Final
predictions may ensemble several independently trained models by averaging
their probability maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import build_epoch_stream
from .data import load_frame
from .errors import ConfigError
from .metrics import jaccard
from .network import build_network
from .ops import bce_loss
from .tensor import Tensor

TARGETS = ("lumen", "media")


@dataclass
class TrainConfig:
    target: str = "lumen"
    learning_rate: float = 1e-4
    batch_size: int = 6
    epochs: int = 96
    iterations_per_epoch: int = 144
    validation_count: int = 10
    seed: int = 0

    def validate(self):
        if self.target not in TARGETS:
            raise ConfigError(f"target must be one of {TARGETS}, got "
                              f"{self.target!r}")
        for name in ("learning_rate", "batch_size", "epochs",
                     "iterations_per_epoch"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.validation_count < 0:
            raise ConfigError("validation_count must be >= 0")
        return self


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    val_jm: list = field(default_factory=list)

    def to_csv(self, path):
        lines = ["epoch,loss,val_jm"]
        for i, (loss, jm) in enumerate(zip(self.losses, self.val_jm)):
            jm_str = "" if jm is None else f"{jm:.6f}"
            lines.append(f"{i},{loss:.6f},{jm_str}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        for key, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(param, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One functional Adam update; mutates ``param``, ``m`` and ``v`` in place.

    ``step`` is the 1-based step count after this update. Returns ``param``.
    """
    if param.shape != grad.shape:
        raise ValueError(f"parameter {param.shape} vs gradient {grad.shape}")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param


def split_validation(n_frames, validation_count, seed):
    """Seeded choice of validation frame indices among the originals."""
    if n_frames < validation_count + 1:
        raise ConfigError(f"need at least validation_count+1="
                          f"{validation_count + 1} frames, got {n_frames}")
    if validation_count == 0:
        return [], list(range(n_frames))
    rng = np.random.default_rng([seed, 7919])
    val = sorted(rng.choice(n_frames, size=validation_count, replace=False))
    train = [i for i in range(n_frames) if i not in set(val)]
    return list(val), train


def _batches(samples, batch_size):
    return [samples[i:i + batch_size]
            for i in range(0, len(samples), batch_size)]


def _stack(samples, target_index):
    x = np.stack([s.image for s in samples])[:, None].astype(np.float32)
    y = np.stack([s.masks[target_index] for s in samples])[:, None]
    return x, y.astype(np.float32)


def fit_network(frames, arch_cfg, train_cfg, aug_cfg=None, target_index=None):
    """Train one network on in-memory frames; returns (net, history).

    ``aug_cfg=None`` disables augmentation: every epoch is just the original
    frames, reshuffled. ``target_index`` picks which entry of each frame's
    mask tuple is the label (defaults to the config's named target).
    """
    train_cfg.validate()
    if target_index is None:
        target_index = TARGETS.index(train_cfg.target)
    val_idx, train_idx = split_validation(
        len(frames), train_cfg.validation_count, train_cfg.seed)
    val_frames = [frames[i] for i in val_idx]
    train_frames = [frames[i] for i in train_idx]

    net = build_network(arch_cfg, train_cfg.seed)
    opt = Adam(net.named_parameters(), lr=train_cfg.learning_rate)
    shuffle_rng = np.random.default_rng([train_cfg.seed, 104729])
    history = TrainHistory()

    for epoch in range(train_cfg.epochs):
        if aug_cfg is not None:
            stream = build_epoch_stream(train_frames, aug_cfg, epoch)
        else:
            order = shuffle_rng.permutation(len(train_frames))
            stream = [train_frames[i] for i in order]
        batches = _batches(stream, train_cfg.batch_size)
        steps = min(train_cfg.iterations_per_epoch, len(batches))
        epoch_losses = []
        for batch in batches[:steps]:
            x, y = _stack(batch, target_index)
            opt.zero_grad()
            out = net.forward(x, training=True)
            loss = bce_loss(out, y)
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
        history.losses.append(float(np.mean(epoch_losses)))
        history.val_jm.append(
            validation_jaccard(net, val_frames, target_index)
            if val_frames else None)
    return net, history


def validation_jaccard(net, frames, target_index, threshold=0.5):
    """Mean Jaccard of thresholded probability maps (no contour extraction)."""
    scores = []
    for frame in frames:
        prob = predict_prob(net, frame.image)
        scores.append(jaccard(prob >= threshold, frame.masks[target_index]))
    return float(np.mean(scores))


def train_model(records, arch_cfg, train_cfg, aug_cfg=None):
    """Spec'd surface over :func:`fit_network` for on-disk datasets."""
    frames = [load_frame(r) for r in records]
    return fit_network(frames, arch_cfg, train_cfg, aug_cfg)


def predict_prob(net, image):
    """Single-model probability map for one (H, W) grayscale image."""
    x = np.asarray(image, dtype=np.float32)[None, None]
    out = net.forward(Tensor(x), training=False)
    return out.data[0, 0]


def ensemble_predict(models, image):
    """Average the probability maps of several models over one image."""
    if not models:
        raise ValueError("ensemble_predict needs at least one model")
    acc = None
    for net in models:
        prob = predict_prob(net, image).astype(np.float64)
        acc = prob if acc is None else acc + prob
    return (acc / len(models)).astype(np.float32)
