"""Procedural poster corpus and external annotation ingestion.

Synthetic samples encode the correlations the model is supposed to learn:
text boxes sit in flat low-saliency regions and their widths grow with
slogan length, one underlay exactly backs a text element, and the logo
occupies the top band. Everything is a pure function of the seed. The
ingestion path reads a COCO-style annotation file with corner-pixel boxes
and the four real element categories.
"""

from __future__ import annotations

import json
import string
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import (
    BBox,
    Element,
    ElementClass,
    Layout,
    PosterSample,
    box_intersection_area,
)

# slogan length 4 -> width 0.15, length 40 -> width 0.8
W_PER_CHAR = (0.8 - 0.15) / 36.0
W_BASE = 0.15 - 4.0 * W_PER_CHAR
UNDERLAY_MARGIN = 0.02
PLACEMENT_GAP = 0.03
MAX_SAMPLE_ATTEMPTS = 20

CGL_CATEGORIES = {
    1: ElementClass.LOGO,
    2: ElementClass.TEXT,
    3: ElementClass.UNDERLAY,
    4: ElementClass.EMBELLISHMENT,
}


@dataclass(frozen=True)
class SynthSpec:
    """Knobs of the procedural generator."""

    count: int
    seed: int = 0
    canvas_w: int = 192
    canvas_h: int = 300
    blobs: tuple[int, int] = (1, 3)
    texts: tuple[int, int] = (1, 3)
    underlay_prob: float = 0.7
    embellish_prob: float = 0.3

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.canvas_w <= 0 or self.canvas_h <= 0:
            raise ValueError("canvas must be positive")
        for name in ("blobs", "texts"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} range {lo}..{hi} is empty")
        for name in ("underlay_prob", "embellish_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def text_width_for_length(n_chars: int) -> float:
    """Box width as a strictly increasing function of slogan length."""
    return W_BASE + W_PER_CHAR * n_chars


def _random_slogan(rng: np.random.Generator, n_chars: int) -> str:
    """Random words joined by single spaces, exactly n_chars characters."""
    letters = string.ascii_lowercase
    out: list[str] = []
    remaining = n_chars
    while remaining > 0:
        word_len = int(rng.integers(3, 9))
        if out:
            remaining -= 1  # the joining space
        if remaining <= word_len + 3:
            word_len = max(1, remaining)
        out.append("".join(letters[int(i)] for i in rng.integers(0, 26, word_len)))
        remaining -= word_len
    return " ".join(out)


def _background(
    rng: np.random.Generator, w: int, h: int, n_blobs: int
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth two-color gradient plus colored Gaussian blobs.

    Returns (image uint8 (H, W, 3), saliency float64 (H, W) in [0, 1]); the
    saliency is the normalized blob intensity.
    """
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    xs /= w
    ys /= h
    theta = rng.uniform(0.0, 2 * np.pi)
    ramp = xs * np.cos(theta) + ys * np.sin(theta)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-9)
    c0 = rng.integers(40, 200, 3).astype(np.float64)
    c1 = rng.integers(40, 200, 3).astype(np.float64)
    img = c0[None, None, :] + (c1 - c0)[None, None, :] * ramp[..., None]

    blob_total = np.zeros((h, w), dtype=np.float64)
    for _ in range(n_blobs):
        bx = rng.uniform(0.15, 0.85) * w
        by = rng.uniform(0.2, 0.8) * h
        sx = rng.uniform(0.06, 0.16) * w
        sy = rng.uniform(0.06, 0.16) * h
        blob = np.exp(-(((xs * w - bx) / sx) ** 2 + ((ys * h - by) / sy) ** 2) / 2.0)
        tint = rng.integers(0, 256, 3).astype(np.float64)
        img = img + (tint - img) * (blob * 0.85)[..., None]
        blob_total += blob
    peak = blob_total.max()
    saliency = blob_total / peak if peak > 0 else blob_total
    return np.clip(img, 0, 255).astype(np.uint8), saliency


def _mean_saliency_under(box: BBox, saliency: np.ndarray) -> float:
    h, w = saliency.shape
    x1, y1, x2, y2 = box.to_corners()
    c1 = max(int(np.ceil(x1 * w - 0.5)), 0)
    c2 = min(int(np.floor(x2 * w - 0.5)), w - 1)
    r1 = max(int(np.ceil(y1 * h - 0.5)), 0)
    r2 = min(int(np.floor(y2 * h - 0.5)), h - 1)
    if c2 < c1 or r2 < r1:
        return 0.0
    return float(saliency[r1 : r2 + 1, c1 : c2 + 1].mean())


def _separated(box: BBox, placed: list[BBox], gap: float) -> bool:
    inflated = BBox(box.cx, box.cy, box.w + 2 * gap, box.h + 2 * gap)
    return all(box_intersection_area(inflated, p) == 0.0 for p in placed)


def _try_build_sample(
    spec: SynthSpec, index: int, attempt: int
) -> PosterSample | None:
    rng = np.random.default_rng([spec.seed, index, attempt])
    n_blobs = int(rng.integers(spec.blobs[0], spec.blobs[1] + 1))
    n_texts = int(rng.integers(spec.texts[0], spec.texts[1] + 1))
    image, saliency = _background(rng, spec.canvas_w, spec.canvas_h, n_blobs)

    placed: list[BBox] = []
    elements: list[Element] = []

    logo = BBox(
        cx=float(rng.uniform(0.3, 0.7)),
        cy=float(rng.uniform(0.07, 0.16)),
        w=float(rng.uniform(0.15, 0.35)),
        h=float(rng.uniform(0.06, 0.12)),
    )
    placed.append(logo)
    elements.append(Element(box=logo, cls=ElementClass.LOGO))

    slogans: list[str] = []
    text_boxes: list[BBox] = []
    for _ in range(n_texts):
        n_chars = int(rng.integers(4, 41))
        slogan = _random_slogan(rng, n_chars)
        bw = min(max(text_width_for_length(len(slogan)), 0.05), 0.9)
        bh = float(rng.uniform(0.045, 0.075))
        chosen: BBox | None = None
        best_sal = np.inf
        for _ in range(60):
            cx = float(rng.uniform(bw / 2 + PLACEMENT_GAP, 1 - bw / 2 - PLACEMENT_GAP))
            cy = float(rng.uniform(0.26, 0.9))
            cand = BBox(cx, cy, bw, bh)
            if not _separated(cand, placed, PLACEMENT_GAP):
                continue
            s = _mean_saliency_under(cand, saliency)
            if s < best_sal:
                best_sal = s
                chosen = cand
        if chosen is None or best_sal > 0.35:
            return None  # crowded or too salient everywhere; retry sample
        placed.append(chosen)
        text_boxes.append(chosen)
        slogans.append(slogan)
        elements.append(Element(box=chosen, cls=ElementClass.TEXT))

    if n_texts > 0 and rng.uniform() < spec.underlay_prob:
        target = text_boxes[int(rng.integers(len(text_boxes)))]
        under = BBox(
            target.cx,
            target.cy,
            target.w + 2 * UNDERLAY_MARGIN,
            target.h + 2 * UNDERLAY_MARGIN,
        )
        if under.is_valid():
            elements.append(Element(box=under, cls=ElementClass.UNDERLAY))

    if rng.uniform() < spec.embellish_prob:
        ew = float(rng.uniform(0.04, 0.09))
        eh = float(rng.uniform(0.04, 0.09))
        for _ in range(40):
            cand = BBox(
                cx=float(rng.uniform(ew / 2 + 0.03, 1 - ew / 2 - 0.03)),
                cy=float(rng.uniform(0.22, 0.93)),
                w=ew,
                h=eh,
            )
            if _separated(cand, placed + [e.box for e in elements], PLACEMENT_GAP):
                placed.append(cand)
                elements.append(Element(box=cand, cls=ElementClass.EMBELLISHMENT))
                break

    layout = Layout(
        elements=tuple(elements), canvas_w=spec.canvas_w, canvas_h=spec.canvas_h
    )
    return PosterSample(
        id=f"synth-{spec.seed:08d}-{index:05d}",
        image=image,
        saliency=saliency,
        slogans=tuple(slogans),
        gt=layout,
    )


def generate(spec: SynthSpec) -> list[PosterSample]:
    """Deterministically generate spec.count poster samples."""
    samples: list[PosterSample] = []
    for index in range(spec.count):
        sample = None
        for attempt in range(MAX_SAMPLE_ATTEMPTS):
            sample = _try_build_sample(spec, index, attempt)
            if sample is not None:
                break
        if sample is None:
            raise RuntimeError(
                f"could not place elements for sample {index} after "
                f"{MAX_SAMPLE_ATTEMPTS} attempts; loosen the spec"
            )
        samples.append(sample)
    return samples


# --------------------------------------------------------------------------
# dataset directory layout: manifest.json + images/ + saliency/


def save_dataset(samples: list[PosterSample], out_dir: str | Path) -> Path:
    """Write manifest.json plus per-sample image and saliency rasters."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "saliency").mkdir(parents=True, exist_ok=True)
    records = []
    for s in samples:
        image_rel = f"images/{s.id}.png"
        sal_rel = f"saliency/{s.id}.png"
        Image.fromarray(s.image).save(out / image_rel)
        sal8 = np.round(np.clip(s.saliency, 0.0, 1.0) * 255.0).astype(np.uint8)
        Image.fromarray(sal8, mode="L").save(out / sal_rel)
        records.append(
            {
                "id": s.id,
                "image_path": image_rel,
                "saliency_path": sal_rel,
                "canvas": [s.gt.canvas_w, s.gt.canvas_h] if s.gt else
                          [s.image.shape[1], s.image.shape[0]],
                "slogans": list(s.slogans),
                "elements": [e.to_json_dict() for e in s.gt.elements] if s.gt else [],
            }
        )
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"samples": records}, indent=2, sort_keys=True))
    return manifest


def load_dataset(dataset_dir: str | Path) -> list[PosterSample]:
    """Read a dataset directory written by save_dataset."""
    root = Path(dataset_dir)
    manifest = root / "manifest.json"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    data = json.loads(manifest.read_text())
    samples = []
    for rec in data["samples"]:
        image = np.asarray(Image.open(root / rec["image_path"]).convert("RGB"))
        sal = np.asarray(Image.open(root / rec["saliency_path"]).convert("L"))
        saliency = sal.astype(np.float64) / 255.0
        cw, ch = rec["canvas"]
        elements = tuple(
            Element(
                box=BBox(*rec_el["box"]),
                cls=ElementClass.from_name(rec_el["cls"]),
                score=rec_el.get("score", 1.0),
            )
            for rec_el in rec["elements"]
        )
        samples.append(
            PosterSample(
                id=rec["id"],
                image=image,
                saliency=saliency,
                slogans=tuple(rec["slogans"]),
                gt=Layout(elements=elements, canvas_w=cw, canvas_h=ch),
            )
        )
    return samples


# --------------------------------------------------------------------------
# external COCO-style ingestion


@dataclass
class IngestResult:
    samples: list[PosterSample]
    record_errors: list[str] = field(default_factory=list)
    skipped_missing_images: int = 0


def ingest_cgl(annotation_path: str | Path, image_root: str | Path) -> IngestResult:
    """Read a COCO-style annotation file with corner-pixel boxes.

    Category ids 1..4 map to logo/text/underlay/embellishment; a record with
    any other id is reported in record_errors (the rest of the file still
    loads). Samples whose image file is missing are skipped with a warning.
    A saliency raster is looked up as <image stem>_sal.png next to the
    image; absent rasters yield all-zero saliency.
    """
    path = Path(annotation_path)
    root = Path(image_root)
    data = json.loads(path.read_text())
    result = IngestResult(samples=[])

    by_image: dict = {img["id"]: img for img in data.get("images", [])}
    anns_by_image: dict = {}
    for ann in data.get("annotations", []):
        anns_by_image.setdefault(ann["image_id"], []).append(ann)

    for image_id, meta in by_image.items():
        img_path = root / meta["file_name"]
        if not img_path.exists():
            warnings.warn(f"missing image for sample {image_id}: {img_path}")
            result.skipped_missing_images += 1
            continue
        image = np.asarray(Image.open(img_path).convert("RGB"))
        h, w = image.shape[:2]
        sal_path = img_path.with_name(img_path.stem + "_sal.png")
        if sal_path.exists():
            saliency = (
                np.asarray(Image.open(sal_path).convert("L")).astype(np.float64) / 255.0
            )
            if saliency.shape != (h, w):
                result.record_errors.append(
                    f"sample {image_id}: saliency shape {saliency.shape} != image"
                )
                saliency = np.zeros((h, w), dtype=np.float64)
        else:
            saliency = np.zeros((h, w), dtype=np.float64)

        elements = []
        slogans = []
        ok = True
        for ann in anns_by_image.get(image_id, []):
            cat = ann.get("category_id")
            if cat not in CGL_CATEGORIES:
                result.record_errors.append(
                    f"sample {image_id}: unknown category id {cat}"
                )
                ok = False
                continue
            x1, y1, x2, y2 = ann["bbox"]
            box = BBox.from_corners(x1 / w, y1 / h, x2 / w, y2 / h)
            cls = CGL_CATEGORIES[cat]
            elements.append(Element(box=box, cls=cls))
            if cls is ElementClass.TEXT and ann.get("text"):
                slogans.append(str(ann["text"]))
        if not ok and not elements:
            continue
        result.samples.append(
            PosterSample(
                id=str(image_id),
                image=image,
                saliency=saliency,
                slogans=tuple(slogans),
                gt=Layout(elements=tuple(elements), canvas_w=w, canvas_h=h),
            )
        )
    return result
