"""Training-set augmentation: deterministic flips, additive noise, blackout.

Every frame contributes four flip variants per epoch (identity, left-right,
up-down, both), flipped identically with its masks. On top of that each
variant may be corrupted: additive Gaussian noise on the image with
probability ``noise_prob``, and a full blackout (image forced to zero) with
probability ``blackout_prob``. Masks are never modified by the corruptions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Frame
from .errors import ConfigError


@dataclass
class AugmentConfig:
    noise_sigma: float = 0.10
    noise_prob: float = 0.5
    blackout_prob: float = 0.05
    seed: int = 0

    def validate(self):
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        for name in ("noise_prob", "blackout_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if self.seed < 0:
            raise ConfigError("seed must be >= 0")
        return self


def flip_lr(image, masks=()):
    """Mirror left-right; the image and every mask flip together."""
    return image[:, ::-1].copy(), tuple(m[:, ::-1].copy() for m in masks)


def flip_ud(image, masks=()):
    """Mirror top-bottom; the image and every mask flip together."""
    return image[::-1, :].copy(), tuple(m[::-1, :].copy() for m in masks)


def flip_both(image, masks=()):
    """Mirror both axes; equals flip_lr composed with flip_ud exactly."""
    return image[::-1, ::-1].copy(), tuple(m[::-1, ::-1].copy() for m in masks)


def add_gaussian_noise(image, sigma, seed):
    """Add i.i.d. N(0, sigma^2) per pixel and clamp to [0, 1]."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return image.copy()
    rng = np.random.default_rng(seed)
    noisy = image + rng.normal(0.0, sigma, image.shape).astype(image.dtype)
    return np.clip(noisy, 0.0, 1.0)


def blackout(image):
    """All pixels to zero; paired masks are left alone by the caller."""
    return np.zeros_like(image)


_FLIPS = (lambda img, masks: (img.copy(), tuple(m.copy() for m in masks)),
          flip_lr, flip_ud, flip_both)


def build_epoch_stream(frames, cfg, epoch):
    """Expand frames into one epoch's shuffled, augmented sample list.

    Deterministic in ``(cfg.seed, epoch)``: the same configuration always
    produces a bit-identical stream. Each input frame yields its four flip
    variants, every variant is independently noise-corrupted and/or blacked
    out, then the whole list is shuffled.
    """
    if not frames:
        raise ConfigError("cannot build an epoch stream from zero frames")
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, int(epoch)])
    samples = []
    for frame in frames:
        for flip in _FLIPS:
            img, masks = flip(frame.image, frame.masks)
            if rng.random() < cfg.noise_prob and cfg.noise_sigma > 0:
                noise = rng.normal(0.0, cfg.noise_sigma, img.shape)
                img = np.clip(img + noise.astype(img.dtype), 0.0, 1.0)
            if rng.random() < cfg.blackout_prob:
                img = blackout(img)
            samples.append(Frame(image=img, masks=masks))
    order = rng.permutation(len(samples))
    return [samples[i] for i in order]
