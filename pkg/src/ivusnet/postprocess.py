"""From probability map to final vessel contour.

Pipeline: threshold the map, keep the largest 8-connected component, trace
its boundary, fit an ellipse, and emit the fitted ellipse as both an n-point
contour and a rasterized mask. The ellipse mask is the final segmentation
used for region overlap scoring; the ellipse contour is used for boundary
distances.

The ellipse fit itself is the direct least-squares conic fit with the
ellipse-specific constraint (4AC - B^2 = 1), computed on mean-centered,
RMS-scale-normalized coordinates and then de-normalized. Inside
``extract_contour`` the fit runs on sub-pixel boundary samples (midpoints of
foreground/background pixel edges) and the semi-axes are rescaled so the
ellipse area matches the component's pixel count; fitting raw boundary pixel
centers instead would shrink the axes by roughly half a pixel.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import DimensionError, EllipseFitError, EmptyRegionError, FormatError


@dataclass
class EllipseParams:
    """Center (pixels), semi-axes a >= b > 0 (pixels), rotation in [0, pi)."""

    cx: float
    cy: float
    a: float
    b: float
    theta: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError(f"semi-axes must satisfy a >= b > 0, got "
                             f"a={self.a}, b={self.b}")
        self.theta = float(self.theta) % np.pi


def binarize(prob, threshold=0.5):
    """Pixels with probability >= threshold become foreground."""
    p = np.asarray(prob)
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise ValueError("probability map has entries outside [0, 1]")
    return p >= threshold


_EIGHT = np.ones((3, 3), dtype=int)


def largest_component(mask):
    """Keep only the largest 8-connected foreground component.

    Ties are broken in favor of the component whose seed pixel comes first in
    row-major order. Raises EmptyRegionError for an all-background mask.
    """
    m = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(m, structure=_EIGHT)
    if n == 0:
        raise EmptyRegionError("mask has no foreground pixels")
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    tied = np.flatnonzero(sizes == best)
    if len(tied) > 1:
        flat = labels.ravel()
        tied = sorted(tied, key=lambda lab: int(np.argmax(flat == lab)))
    return labels == tied[0]


# Moore neighborhood in clockwise order (x right, y down), starting west.
_MOORE = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)]


def trace_boundary(mask):
    """Moore-neighbor boundary trace of a single 8-connected component.

    Starts at the top-left-most foreground pixel, walks clockwise, and stops
    by Jacob's criterion (re-entering the start pixel from the same
    direction). Returns an ordered, closed (last point 8-adjacent to first)
    array of (x, y) pixel coordinates. A single isolated pixel yields a
    one-point contour.
    """
    m = np.asarray(mask, dtype=bool)
    ys, xs = np.nonzero(m)
    if len(ys) == 0:
        raise EmptyRegionError("cannot trace an empty mask")
    h, w = m.shape
    first = np.lexsort((xs, ys))[0]
    start = (int(xs[first]), int(ys[first]))

    def fg(x, y):
        return 0 <= x < w and 0 <= y < h and m[y, x]

    contour = [start]
    px, py = start
    back = (px - 1, py)  # west neighbor, known background
    # a (pixel, backtrack) state repeating means the walk has closed; this
    # covers Jacob's start-pixel criterion and also terminates on thin
    # regions whose cycles never re-enter the start the original way
    seen = {(start, back)}
    limit = 8 * len(ys) + 8
    for _ in range(limit):
        bidx = _MOORE.index((back[0] - px, back[1] - py))
        nxt = None
        for k in range(1, 9):
            dx, dy = _MOORE[(bidx + k) % 8]
            if fg(px + dx, py + dy):
                pdx, pdy = _MOORE[(bidx + k - 1) % 8]
                nxt = (px + dx, py + dy)
                back = (px + pdx, py + pdy)
                break
        if nxt is None:
            break  # isolated pixel
        if (nxt, back) in seen:
            break
        seen.add((nxt, back))
        contour.append(nxt)
        px, py = nxt
    while len(contour) > 1 and contour[-1] == start:
        contour.pop()
    return np.array(contour, dtype=np.float64)


def fit_ellipse(points):
    """Direct least-squares ellipse fit of (x, y) points.

    Requires at least 6 points that are not all collinear. Raises
    EllipseFitError when no elliptical conic satisfies the constraint.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 6:
        raise EllipseFitError(f"need at least 6 points, got {len(pts)}")
    mean = pts.mean(axis=0)
    scale = np.sqrt(((pts - mean) ** 2).sum(axis=1).mean())
    if scale <= 0:
        raise EllipseFitError("degenerate input: all points coincide")
    q = (pts - mean) / scale
    x, y = q[:, 0], q[:, 1]

    d1 = np.column_stack([x * x, x * y, y * y])
    d2 = np.column_stack([x, y, np.ones_like(x)])
    s1 = d1.T @ d1
    s2 = d1.T @ d2
    s3 = d2.T @ d2
    try:
        t = -np.linalg.solve(s3, s2.T)
    except np.linalg.LinAlgError as exc:
        raise EllipseFitError(f"degenerate point set: {exc}") from exc
    reduced = s1 + s2 @ t
    reduced = np.vstack([reduced[2] / 2.0, -reduced[1], reduced[0] / 2.0])
    evals, evecs = np.linalg.eig(reduced)
    cond = 4.0 * evecs[0] * evecs[2] - evecs[1] ** 2
    elliptical = np.flatnonzero(np.real(cond) > 0)
    if len(elliptical) == 0:
        raise EllipseFitError("no elliptical solution for these points")
    a1 = np.real(evecs[:, elliptical[0]])
    conic = np.concatenate([a1, t @ a1])
    cx, cy, a, b, theta = _conic_to_geometric(conic)
    return EllipseParams(cx=float(mean[0] + scale * cx),
                         cy=float(mean[1] + scale * cy),
                         a=float(scale * a), b=float(scale * b),
                         theta=float(theta))


def _conic_to_geometric(coef):
    A, B, C, D, E, F = coef
    quad = np.array([[A, B / 2.0], [B / 2.0, C]])
    try:
        center = np.linalg.solve(2.0 * quad, [-D, -E])
    except np.linalg.LinAlgError as exc:
        raise EllipseFitError(f"degenerate conic: {exc}") from exc
    cx, cy = center
    f0 = (A * cx * cx + B * cx * cy + C * cy * cy + D * cx + E * cy + F)
    evals, evecs = np.linalg.eigh(quad)
    ax_sq = -f0 / evals
    if np.any(ax_sq <= 0):
        raise EllipseFitError("conic is not an ellipse")
    axes = np.sqrt(ax_sq)
    major = int(np.argmax(axes))
    v = evecs[:, major]
    theta = np.arctan2(v[1], v[0]) % np.pi
    return cx, cy, axes[major], axes[1 - major], theta


def ellipse_to_contour(ellipse, n=256):
    """Sample ``n`` points on the ellipse at uniform parameter spacing."""
    if n < 8:
        raise ValueError(f"need at least 8 contour points, got {n}")
    t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    ct, st = np.cos(ellipse.theta), np.sin(ellipse.theta)
    ex = ellipse.a * np.cos(t)
    ey = ellipse.b * np.sin(t)
    return np.column_stack([ellipse.cx + ct * ex - st * ey,
                            ellipse.cy + st * ex + ct * ey])


def ellipse_to_mask(ellipse, width, height):
    """Rasterize: a pixel is foreground when its center satisfies the
    implicit inequality <= 1 in the ellipse frame."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    dx = xs[None, :] - ellipse.cx
    dy = ys[:, None] - ellipse.cy
    ct, st = np.cos(ellipse.theta), np.sin(ellipse.theta)
    xr = ct * dx + st * dy
    yr = -st * dx + ct * dy
    return (xr / ellipse.a) ** 2 + (yr / ellipse.b) ** 2 <= 1.0


def _edge_midpoints(mask):
    """Sub-pixel boundary samples: midpoints of fg/bg 4-neighbor pixel edges.

    Pixels outside the image border count as background, so components
    touching the border still produce a closed sample set.
    """
    m = np.pad(np.asarray(mask, dtype=bool), 1)
    pts = []
    for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        shifted = np.roll(m, (-dy, -dx), axis=(0, 1))
        ys, xs = np.nonzero(m & ~shifted)
        pts.append(np.column_stack([xs - 1 + dx / 2.0, ys - 1 + dy / 2.0]))
    return np.vstack(pts)


def extract_contour(prob, threshold=0.5, contour_points=256):
    """Full post-processing pipeline for one probability map.

    Returns ``(contour, ellipse, mask)`` where the contour and mask are the
    sampled and rasterized versions of the fitted ellipse. Errors from the
    component and fit stages are re-raised with a stage label.
    """
    mask = binarize(prob, threshold)
    try:
        comp = largest_component(mask)
    except EmptyRegionError as exc:
        raise EmptyRegionError(f"[component] {exc}") from exc
    traced = trace_boundary(comp)
    try:
        fit = fit_ellipse(_edge_midpoints(comp))
        # boundary samples carry quantization noise; pin the scale to the
        # component's exact pixel count
        s = float(np.sqrt(comp.sum() / (np.pi * fit.a * fit.b)))
        fit = EllipseParams(fit.cx, fit.cy, fit.a * s, fit.b * s, fit.theta)
    except EllipseFitError as exc:
        raise EllipseFitError(f"[fit] {exc} (traced {len(traced)} boundary "
                              f"points)") from exc
    h, w = mask.shape
    return (ellipse_to_contour(fit, contour_points), fit,
            ellipse_to_mask(fit, w, h))


PROB_MAGIC = b"IVPM"


def write_prob_map(prob, path):
    """Raw probability-map file: magic, u32 height, u32 width, f32 values."""
    p = np.ascontiguousarray(prob, dtype="<f4")
    if p.ndim != 2:
        raise DimensionError(f"probability map must be 2-D, got {p.shape}")
    with open(path, "wb") as fh:
        fh.write(PROB_MAGIC)
        fh.write(struct.pack("<II", p.shape[0], p.shape[1]))
        fh.write(p.tobytes())


def read_prob_map(path):
    blob = Path(path).read_bytes()
    if blob[:4] != PROB_MAGIC:
        raise FormatError(f"bad probability-map magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError("truncated probability-map header")
    h, w = struct.unpack("<II", blob[4:12])
    need = 12 + 4 * h * w
    if len(blob) != need:
        raise FormatError(f"probability map should be {need} bytes, got "
                          f"{len(blob)}")
    return np.frombuffer(blob[12:], dtype="<f4").reshape(h, w).copy()


def write_contour_csv(contour, path):
    lines = [f"{x:.6f},{y:.6f}" for x, y in np.asarray(contour)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_contour_csv(path):
    pts = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.lower().startswith("x"):
            continue
        sx, sy = line.split(",")
        pts.append((float(sx), float(sy)))
    return np.array(pts, dtype=np.float64)
