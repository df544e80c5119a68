"""Scikit-learn style estimator facade.

``IvusNetSegmenter`` wraps network construction, the training loop, optional
model ensembling and the ellipse post-processing behind the familiar
``fit`` / ``predict`` / ``get_params`` surface, so the segmenter drops into
pipelines, grid searches and cross-validation like any other estimator.

``X`` is an array of grayscale images shaped (n_samples, H, W) with values
in [0, 1] and H, W divisible by 8; ``y`` holds the binary target masks with
the same shape.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .augment import AugmentConfig
from .data import Frame
from .errors import EllipseFitError, EmptyRegionError
from .metrics import jaccard
from .network import ArchConfig, PRESETS
from .postprocess import binarize, extract_contour, largest_component
from .training import TrainConfig, ensemble_predict, fit_network


def check_image_batch(X):
    """Validate and normalize a batch of images to float32 (n, H, W)."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 4 and X.shape[1] == 1:
        X = X[:, 0]
    if X.ndim != 3:
        raise ValueError(f"X must be (n_samples, H, W), got shape {X.shape}")
    n, h, w = X.shape
    if h % 8 or w % 8:
        raise ValueError(f"image size {h}x{w} must be divisible by 8")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")
    return X


def check_mask_batch(y, X):
    """Validate binary masks paired with an image batch."""
    y = np.asarray(y)
    if y.ndim == 4 and y.shape[1] == 1:
        y = y[:, 0]
    if y.shape != X.shape:
        raise ValueError(f"y shape {y.shape} does not match X {X.shape}")
    vals = np.unique(y)
    if not np.all(np.isin(vals, (0, 1))):
        raise ValueError("y must be binary masks (values 0/1)")
    return y.astype(bool)


class IvusNetSegmenter(BaseEstimator):
    """Trainable vessel segmenter with ellipse-regularized predictions.

    Parameters
    ----------
    preset : "tiny" | "paper" or a 4-tuple of block depths.
    n_models : number of independently seeded models to train and ensemble.
    augment : apply the flip/noise/blackout augmentation during training.
    refine : keep the blocks' refining branches (ablation switch).
    fit_ellipse : post-process predictions into ellipse masks; when a map has
        no foreground or the fit fails, the raw thresholded mask is returned.
    validation_count : original frames held out per model for JM monitoring.
    """

    def __init__(self, preset="tiny", n_models=1, epochs=30, batch_size=6,
                 learning_rate=1e-4, iterations_per_epoch=144,
                 validation_count=0, augment=True, noise_sigma=0.10,
                 noise_prob=0.5, blackout_prob=0.05, refine=True,
                 threshold=0.5, fit_ellipse=True, random_state=0):
        self.preset = preset
        self.n_models = n_models
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.iterations_per_epoch = iterations_per_epoch
        self.validation_count = validation_count
        self.augment = augment
        self.noise_sigma = noise_sigma
        self.noise_prob = noise_prob
        self.blackout_prob = blackout_prob
        self.refine = refine
        self.threshold = threshold
        self.fit_ellipse = fit_ellipse
        self.random_state = random_state

    def _arch_config(self):
        if isinstance(self.preset, str):
            if self.preset not in PRESETS:
                raise ValueError(f"unknown preset {self.preset!r}")
            depths = PRESETS[self.preset]
        else:
            depths = tuple(int(d) for d in self.preset)
        return ArchConfig(block_depths=depths, refine=self.refine)

    def fit(self, X, y):
        """Train ``n_models`` networks on images X and binary masks y."""
        X = check_image_batch(X)
        y = check_mask_batch(y, X)
        frames = [Frame(image=img, masks=(mask,))
                  for img, mask in zip(X, y)]
        arch = self._arch_config()
        self.models_ = []
        self.histories_ = []
        for k in range(int(self.n_models)):
            tcfg = TrainConfig(
                target="lumen",  # target_index below overrides the name
                learning_rate=self.learning_rate,
                batch_size=self.batch_size,
                epochs=self.epochs,
                iterations_per_epoch=self.iterations_per_epoch,
                validation_count=self.validation_count,
                seed=int(self.random_state) + k)
            acfg = AugmentConfig(noise_sigma=self.noise_sigma,
                                 noise_prob=self.noise_prob,
                                 blackout_prob=self.blackout_prob,
                                 seed=int(self.random_state) + k) \
                if self.augment else None
            net, history = fit_network(frames, arch, tcfg, acfg,
                                       target_index=0)
            self.models_.append(net)
            self.histories_.append(history)
        return self

    def _check_fitted(self):
        if not hasattr(self, "models_"):
            raise NotFittedError("this IvusNetSegmenter is not fitted yet; "
                                 "call fit first")

    def predict_proba(self, X):
        """Ensemble-averaged probability maps, shaped like X."""
        self._check_fitted()
        X = check_image_batch(X)
        return np.stack([ensemble_predict(self.models_, img) for img in X])

    def predict(self, X):
        """Binary masks, ellipse-regularized when ``fit_ellipse`` is set."""
        probs = self.predict_proba(X)
        out = np.zeros(probs.shape, dtype=bool)
        for i, prob in enumerate(probs):
            out[i] = self._postprocess(prob)
        return out

    def _postprocess(self, prob):
        raw = binarize(prob, self.threshold)
        if not self.fit_ellipse:
            return raw
        try:
            _, _, mask = extract_contour(prob, self.threshold)
            return mask
        except (EmptyRegionError, EllipseFitError):
            try:
                return largest_component(raw)
            except EmptyRegionError:
                return raw

    def score(self, X, y):
        """Mean Jaccard overlap of predictions against true masks."""
        X = check_image_batch(X)
        y = check_mask_batch(y, X)
        preds = self.predict(X)
        return float(np.mean([jaccard(p, t) for p, t in zip(preds, y)]))
