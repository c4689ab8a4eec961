"""Layout quality metrics.

All box math runs on normalized coordinates, so the pairwise scores are
independent of canvas resolution. Raster scores (readability, saliency
occlusion) use one shared pixel rule: a pixel belongs to a box iff its
center lies inside the half-open box interval. Degenerate inputs take the
conventions documented on each function rather than raising, except for
occupancy over an empty list which is a caller error.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import BBox, Element, ElementClass, Layout, box_intersection_area, box_iou

TAU_UNDERLAY = 0.9

_PAIRWISE_CLASSES = (ElementClass.LOGO, ElementClass.TEXT)


def box_pixel_mask(box: BBox, width: int, height: int) -> np.ndarray:
    """Boolean (height, width) mask of pixels whose centers fall in the box."""
    x1, y1, x2, y2 = box.to_corners()
    cols = (np.arange(width) + 0.5) / width
    rows = (np.arange(height) + 0.5) / height
    in_x = (cols >= x1) & (cols < x2)
    in_y = (rows >= y1) & (rows < y2)
    return in_y[:, None] & in_x[None, :]


def _coverage(inner: BBox, outer: BBox) -> float:
    """Fraction of inner's area that outer overlaps."""
    area = inner.w * inner.h
    if area <= 0.0:
        return 0.0
    return box_intersection_area(inner, outer) / area


def alignment_score(layout: Layout) -> float:
    """Mean over elements of the distance to the nearest aligned neighbor.

    For each element the six axes (left, x-center, right, top, y-center,
    bottom) are compared against the same axis of every other element; the
    smallest absolute difference over axes and neighbors is that element's
    misalignment. Lower is better; fewer than two elements scores 0.
    """
    els = layout.elements
    if len(els) < 2:
        return 0.0
    axes = np.array([_axes(e.box) for e in els])  # (n, 6)
    n = len(els)
    per_element = []
    for i in range(n):
        diffs = np.abs(axes[i][None, :] - axes)  # (n, 6)
        diffs[i, :] = np.inf
        per_element.append(diffs.min())
    return float(np.mean(per_element))


def _axes(b: BBox) -> tuple[float, float, float, float, float, float]:
    x1, y1, x2, y2 = b.to_corners()
    return (x1, b.cx, x2, y1, b.cy, y2)


def overlap_score(layout: Layout) -> float:
    """Mean pairwise IoU over logo and text elements; 0 with fewer than two."""
    boxes = [e.box for e in layout.elements if e.cls in _PAIRWISE_CLASSES]
    if len(boxes) < 2:
        return 0.0
    vals = [
        box_iou(boxes[i], boxes[j])
        for i in range(len(boxes))
        for j in range(i + 1, len(boxes))
    ]
    return float(np.mean(vals))


def _underlay_coverages(layout: Layout) -> list[float]:
    """Best coverage score for each underlay element."""
    unders = [e for e in layout.elements if e.cls is ElementClass.UNDERLAY]
    others = [e for e in layout.elements if e.cls is not ElementClass.UNDERLAY]
    out = []
    for u in unders:
        if not others:
            out.append(0.0)
        else:
            out.append(max(_coverage(o.box, u.box) for o in others))
    return out


def underlay_validity(layout: Layout) -> float:
    """Mean over underlays of how completely they back their best element.

    Each underlay scores the maximum, over non-underlay elements, of the
    fraction of that element's area the underlay covers. No underlays -> 0.
    """
    cov = _underlay_coverages(layout)
    return float(np.mean(cov)) if cov else 0.0


def occupancy(layouts: Sequence[Layout]) -> float:
    """Fraction of layouts with at least one element. Empty input is an error."""
    if len(layouts) == 0:
        raise ValueError("occupancy needs at least one layout")
    return float(np.mean([1.0 if lay.elements else 0.0 for lay in layouts]))


def _grayscale(image: np.ndarray) -> np.ndarray:
    """Luma in [0, 1] from an (H, W, 3) uint8 image."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    f = image.astype(np.float64) / 255.0
    return 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]


def sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude with 3x3 Sobel kernels and replicated borders."""
    gx = ndimage.sobel(gray, axis=1, mode="nearest")
    gy = ndimage.sobel(gray, axis=0, mode="nearest")
    return np.hypot(gx, gy)


def readability_score(layout: Layout, image: np.ndarray) -> float:
    """Mean gradient magnitude under text that sits directly on the image.

    Text elements backed by an underlay (coverage >= 0.5) are excluded; the
    score is the mean Sobel magnitude over the union of the remaining text
    boxes' pixels. Lower means flatter, more readable backgrounds. No
    qualifying text (or no covered pixels) -> 0.
    """
    texts = [e for e in layout.elements if e.cls is ElementClass.TEXT]
    unders = [e for e in layout.elements if e.cls is ElementClass.UNDERLAY]
    qualifying = [
        t
        for t in texts
        if not any(_coverage(t.box, u.box) >= 0.5 for u in unders)
    ]
    if not qualifying:
        return 0.0
    h, w = image.shape[:2]
    mask = np.zeros((h, w), dtype=bool)
    for t in qualifying:
        mask |= box_pixel_mask(t.box, w, h)
    if not mask.any():
        return 0.0
    grad = sobel_magnitude(_grayscale(image))
    return float(grad[mask].mean())


@dataclass(frozen=True)
class OcclusionScores:
    shm: float  # mean saliency under the layout's elements
    sub: float  # fraction of the salient area the layout covers


def subject_occlusion(layout: Layout, saliency: np.ndarray) -> OcclusionScores:
    """How much the layout sits on top of the salient subject.

    shm is the mean saliency inside the union of all element boxes (0 when
    the union is empty); sub is the covered fraction of the salient region
    (saliency >= 0.5), 0 when no pixel is salient.
    """
    if saliency.ndim != 2:
        raise ValueError(f"expected (H, W) saliency, got {saliency.shape}")
    h, w = saliency.shape
    mask = np.zeros((h, w), dtype=bool)
    for e in layout.elements:
        mask |= box_pixel_mask(e.box, w, h)
    shm = float(saliency[mask].mean()) if mask.any() else 0.0
    salient = saliency >= 0.5
    total = int(salient.sum())
    sub = float((salient & mask).sum() / total) if total > 0 else 0.0
    return OcclusionScores(shm=shm, sub=sub)


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate scores over a set of generated layouts."""

    n_layouts: int
    r_ali: float
    r_ove: float
    r_und: float
    r_und_valid: float
    r_occ: float
    r_com: float
    r_shm: float
    r_sub: float

    def to_json_dict(self) -> dict:
        return {
            "n_layouts": self.n_layouts,
            "r_ali": self.r_ali,
            "r_ove": self.r_ove,
            "r_und": self.r_und,
            "r_und_valid": self.r_und_valid,
            "r_occ": self.r_occ,
            "r_com": self.r_com,
            "r_shm": self.r_shm,
            "r_sub": self.r_sub,
        }


def per_layout_metrics(
    layout: Layout, image: np.ndarray, saliency: np.ndarray
) -> dict:
    """All single-layout scores as a plain dict (occupancy is set-level)."""
    occ = subject_occlusion(layout, saliency)
    return {
        "r_ali": alignment_score(layout),
        "r_ove": overlap_score(layout),
        "r_und": underlay_validity(layout),
        "r_com": readability_score(layout, image),
        "r_shm": occ.shm,
        "r_sub": occ.sub,
    }


def evaluate(
    layouts: Sequence[Layout],
    images: Sequence[np.ndarray],
    saliencies: Sequence[np.ndarray],
) -> MetricsReport:
    """Aggregate metrics over index-aligned layouts, images and saliencies.

    Means run over all layouts except underlay validity, which averages only
    over layouts that contain an underlay (0 when none does); the valid
    fraction counts underlay elements dataset-wide against TAU_UNDERLAY.
    """
    if not (len(layouts) == len(images) == len(saliencies)):
        raise ValueError("layouts, images and saliencies must be index-aligned")
    r_occ = occupancy(layouts)

    ali, ove, com, shm, sub = [], [], [], [], []
    und_per_layout = []
    underlay_covs: list[float] = []
    for lay, img, sal in zip(layouts, images, saliencies):
        ali.append(alignment_score(lay))
        ove.append(overlap_score(lay))
        com.append(readability_score(lay, img))
        occ_scores = subject_occlusion(lay, sal)
        shm.append(occ_scores.shm)
        sub.append(occ_scores.sub)
        covs = _underlay_coverages(lay)
        if covs:
            und_per_layout.append(float(np.mean(covs)))
            underlay_covs.extend(covs)

    return MetricsReport(
        n_layouts=len(layouts),
        r_ali=float(np.mean(ali)),
        r_ove=float(np.mean(ove)),
        r_und=float(np.mean(und_per_layout)) if und_per_layout else 0.0,
        r_und_valid=(
            float(np.mean([c >= TAU_UNDERLAY for c in underlay_covs]))
            if underlay_covs
            else 0.0
        ),
        r_occ=r_occ,
        r_com=float(np.mean(com)),
        r_shm=float(np.mean(shm)),
        r_sub=float(np.mean(sub)),
    )


def greedy_match_mean_iou(pred: Layout, gt: Layout) -> float:
    """Mean IoU of ground-truth elements under greedy one-to-one matching.

    Pairs are matched best-IoU-first without replacement, ignoring element
    order and class; unmatched ground-truth elements contribute 0. An empty
    ground truth scores 1.0 vacuously.
    """
    if not gt.elements:
        return 1.0
    if not pred.elements:
        return 0.0
    iou = np.array(
        [[box_iou(p.box, g.box) for g in gt.elements] for p in pred.elements]
    )
    matched: list[float] = []
    work = iou.copy()
    for _ in range(min(work.shape)):
        i, j = np.unravel_index(np.argmax(work), work.shape)
        if work[i, j] <= 0.0:
            break
        matched.append(float(work[i, j]))
        work[i, :] = -1.0
        work[:, j] = -1.0
    return float(sum(matched) / len(gt.elements))
