"""Vessel-wall segmentation for intravascular ultrasound B-mode frames.

A self-contained pipeline: a small reverse-mode autodiff engine, the
encoder/decoder network with aggregated downsampling and refining branches,
a seeded training loop with flip/noise/blackout augmentation, ellipse-based
contour extraction, and Jaccard/Hausdorff evaluation. A scikit-learn style
estimator (:class:`IvusNetSegmenter`) wraps the whole thing.
"""

__version__ = "0.1.0"

from .augment import AugmentConfig, add_gaussian_noise, blackout, \
    build_epoch_stream, flip_both, flip_lr, flip_ud
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (BinaryMask, Frame, FrameRecord, GrayImage, downsize_half,
                   downsize_half_mask, load_frame, load_manifest, read_mask,
                   read_pgm, synth_phantoms, write_manifest, write_mask,
                   write_pgm)
from .errors import (ConfigError, DimensionError, EllipseFitError,
                     EmptyRegionError, FormatError, IvusNetError)
from .estimator import IvusNetSegmenter
from .metrics import EvalReport, EvalRow, directed_hausdorff, evaluate, \
    hausdorff, jaccard
from .network import ArchConfig, IvusNet, PRESETS, build_network
from .ops import (BatchNormState, avgpool_2x2, batchnorm, bce_loss, conv2d,
                  deconv2d_2x2, prelu, sigmoid)
from .postprocess import (EllipseParams, binarize, ellipse_to_contour,
                          ellipse_to_mask, extract_contour, fit_ellipse,
                          largest_component, read_prob_map, trace_boundary,
                          write_prob_map)
from .tensor import (Tensor, add, concat_channels, grad_check, mul,
                     reduce_mean, reduce_sum, set_debug_checks)
from .training import (Adam, TrainConfig, TrainHistory, adam_step,
                       ensemble_predict, fit_network, train_model)

__all__ = [
    "__version__",
    "AugmentConfig", "add_gaussian_noise", "blackout", "build_epoch_stream",
    "flip_both", "flip_lr", "flip_ud",
    "load_checkpoint", "save_checkpoint",
    "BinaryMask", "Frame", "FrameRecord", "GrayImage", "downsize_half",
    "downsize_half_mask", "load_frame", "load_manifest", "read_mask",
    "read_pgm", "synth_phantoms", "write_manifest", "write_mask", "write_pgm",
    "ConfigError", "DimensionError", "EllipseFitError", "EmptyRegionError",
    "FormatError", "IvusNetError",
    "IvusNetSegmenter",
    "EvalReport", "EvalRow", "directed_hausdorff", "evaluate", "hausdorff",
    "jaccard",
    "ArchConfig", "IvusNet", "PRESETS", "build_network",
    "BatchNormState", "avgpool_2x2", "batchnorm", "bce_loss", "conv2d",
    "deconv2d_2x2", "prelu", "sigmoid",
    "EllipseParams", "binarize", "ellipse_to_contour", "ellipse_to_mask",
    "extract_contour", "fit_ellipse", "largest_component", "read_prob_map",
    "trace_boundary", "write_prob_map",
    "Tensor", "add", "concat_channels", "grad_check", "mul", "reduce_mean",
    "reduce_sum", "set_debug_checks",
    "Adam", "TrainConfig", "TrainHistory", "adam_step", "ensemble_predict",
    "fit_network", "train_model",
]
