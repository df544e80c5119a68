"""Segmentation metrics and the per-category evaluation report.

Jaccard (intersection over union) compares predicted and true pixel regions;
the Hausdorff distance compares predicted and true boundary curves as the
larger of the two directed greatest-closest-point distances, optionally
scaled by a pixel spacing in millimetres. Results aggregate per artifact
category as "mean (std)" rows mirroring the usual benchmark table layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .data import read_mask
from .errors import DimensionError
from .postprocess import trace_boundary

CATEGORY_LABELS = {
    "all": "All",
    "none": "No Artifact",
    "bifurcation": "Bifurcation",
    "side_vessel": "Side Vessels",
    "shadow": "Shadow",
}


def jaccard(pred, truth):
    """|pred AND truth| / |pred OR truth|; two empty masks count as 1.0."""
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise DimensionError(f"jaccard: shapes {p.shape} vs {t.shape}")
    union = np.logical_or(p, t).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, t).sum() / union)


def directed_hausdorff(a, b):
    """max over points of ``a`` of the distance to the closest point of ``b``."""
    pa = np.asarray(a, dtype=np.float64).reshape(-1, 2)
    pb = np.asarray(b, dtype=np.float64).reshape(-1, 2)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("directed_hausdorff: contours must be non-empty")
    return float(cdist(pa, pb).min(axis=1).max())


def hausdorff(a, b, spacing_mm=1.0):
    """Symmetric Hausdorff distance, scaled by the pixel spacing."""
    return max(directed_hausdorff(a, b), directed_hausdorff(b, a)) * spacing_mm


@dataclass
class EvalRow:
    target: str
    category: str
    n: int
    jm_mean: float
    jm_std: float
    hd_mean: float
    hd_std: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    pixel_spacing_mm: float = 1.0

    def row(self, target, category):
        for r in self.rows:
            if r.target == target and r.category == category:
                return r
        return None

    def format_text(self):
        unit = "mm" if self.pixel_spacing_mm != 1.0 else "px"
        targets = [t for t in ("lumen", "media")
                   if any(r.target == t for r in self.rows)]
        header = f"{'Category':<14}{'n':>5}"
        for t in targets:
            header += f"  {t.capitalize() + ' JM':>13}{t.capitalize() + ' HD (' + unit + ')':>18}"
        lines = [header, "-" * len(header)]
        for cat in ("all", "none", "bifurcation", "side_vessel", "shadow"):
            per_target = {t: self.row(t, cat) for t in targets}
            if all(r is None for r in per_target.values()):
                continue
            any_row = next(r for r in per_target.values() if r is not None)
            line = f"{CATEGORY_LABELS[cat]:<14}{any_row.n:>5}"
            for t in targets:
                r = per_target[t]
                line += (f"  {_ms(r.jm_mean, r.jm_std):>13}"
                         f"{_ms(r.hd_mean, r.hd_std):>18}")
            lines.append(line)
        return "\n".join(lines)

    def to_csv(self):
        lines = ["target,category,n,jm_mean,jm_std,hd_mean,hd_std"]
        for r in self.rows:
            lines.append(f"{r.target},{r.category},{r.n},{r.jm_mean:.6f},"
                         f"{r.jm_std:.6f},{r.hd_mean:.6f},{r.hd_std:.6f}")
        return "\n".join(lines) + "\n"


def _ms(mean, std):
    return f"{mean:.2f} ({std:.2f})"


def evaluate(records, predictions, spacing_mm=1.0):
    """Score per-frame predictions against the records' ground truth.

    ``predictions`` maps each target name ("lumen", "media") to a list,
    aligned with ``records``, of ``(mask, contour)`` pairs: the final
    segmentation mask and boundary contour for that frame. Truth contours
    are obtained by tracing the truth masks. Returns an EvalReport with an
    "all" row plus one row per category that actually occurs.
    """
    report = EvalReport(pixel_spacing_mm=spacing_mm)
    for target, preds in predictions.items():
        if len(preds) != len(records):
            raise ValueError(f"{target}: {len(preds)} predictions for "
                             f"{len(records)} records")
        jm, hd, cats = [], [], []
        for i, (record, pred) in enumerate(zip(records, preds)):
            if pred is None:
                raise ValueError(f"missing {target} prediction for frame {i} "
                                 f"({record.image_path})")
            pred_mask, pred_contour = pred
            truth_attr = (record.lumen_mask_path if target == "lumen"
                          else record.media_mask_path)
            truth = read_mask(truth_attr).bits
            jm.append(jaccard(pred_mask, truth))
            hd.append(hausdorff(pred_contour, trace_boundary(truth),
                                spacing_mm))
            cats.append(record.category)
        jm = np.asarray(jm)
        hd = np.asarray(hd)
        cats = np.asarray(cats)
        groups = [("all", np.ones(len(jm), dtype=bool))]
        groups += [(c, cats == c) for c in
                   ("none", "bifurcation", "side_vessel", "shadow")
                   if (cats == c).any()]
        for cat, sel in groups:
            report.rows.append(EvalRow(
                target=target, category=cat, n=int(sel.sum()),
                jm_mean=float(jm[sel].mean()), jm_std=float(jm[sel].std()),
                hd_mean=float(hd[sel].mean()), hd_std=float(hd[sel].std())))
    return report
