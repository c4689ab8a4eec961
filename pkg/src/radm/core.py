"""Core domain types: boxes, elements, layouts, poster samples, model configuration.

Boxes are stored in normalized center format (cx, cy, w, h), all values
fractions of canvas width/height, independent of the raster resolution.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

# Smallest width/height a clamped box may have. Keeps log-ratio geometry
# features and IoU denominators finite.
MIN_BOX_SIZE = 1e-3


class ElementClass(Enum):
    LOGO = "logo"
    TEXT = "text"
    UNDERLAY = "underlay"
    EMBELLISHMENT = "embellishment"
    # Padding label for non-element query slots. Never serialized in layouts.
    BACKGROUND = "background"

    @classmethod
    def from_name(cls, name: str) -> "ElementClass":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(f"unknown element class {name!r}") from None


FOREGROUND_CLASSES = (
    ElementClass.LOGO,
    ElementClass.TEXT,
    ElementClass.UNDERLAY,
    ElementClass.EMBELLISHMENT,
)

# Stable integer ids used by the model's classification head.
CLASS_TO_INDEX = {c: i for i, c in enumerate(FOREGROUND_CLASSES)}
CLASS_TO_INDEX[ElementClass.BACKGROUND] = len(FOREGROUND_CLASSES)
INDEX_TO_CLASS = {i: c for c, i in CLASS_TO_INDEX.items()}
BACKGROUND_INDEX = CLASS_TO_INDEX[ElementClass.BACKGROUND]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, center format, coordinates as canvas fractions."""

    cx: float
    cy: float
    w: float
    h: float

    def to_corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner fractions."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)

    def area(self) -> float:
        return max(self.w, 0.0) * max(self.h, 0.0)

    def is_valid(self) -> bool:
        return (
            0.0 <= self.cx <= 1.0
            and 0.0 <= self.cy <= 1.0
            and 0.0 < self.w <= 1.0
            and 0.0 < self.h <= 1.0
        )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


def clamp_box(b: BBox) -> BBox:
    """Project a box into the canvas and floor its size at MIN_BOX_SIZE.

    Sizes are clipped to [MIN_BOX_SIZE, 1] and the center is shifted the
    minimal amount that puts both corners inside [0, 1]. Operating directly
    on the stored center-format fields (no corner round trip) makes the
    projection exactly idempotent in floating point.
    """
    w = min(max(b.w, MIN_BOX_SIZE), 1.0)
    h = min(max(b.h, MIN_BOX_SIZE), 1.0)
    cx = min(max(b.cx, w / 2.0), 1.0 - w / 2.0)
    cy = min(max(b.cy, h / 2.0), 1.0 - h / 2.0)
    return BBox(cx, cy, w, h)


def box_iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes (0 for degenerate inputs)."""
    ax1, ay1, ax2, ay2 = a.to_corners()
    bx1, by1, bx2, by2 = b.to_corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_intersection_area(a: BBox, b: BBox) -> float:
    ax1, ay1, ax2, ay2 = a.to_corners()
    bx1, by1, bx2, by2 = b.to_corners()
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    return iw * ih


@dataclass(frozen=True)
class Element:
    """One layout element: a class-tagged box with a confidence score."""

    box: BBox
    cls: ElementClass
    score: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def to_json_dict(self) -> dict:
        if self.cls is ElementClass.BACKGROUND:
            raise ValueError("BACKGROUND elements are padding and cannot be serialized")
        return {
            "cls": self.cls.value,
            "box": list(self.box.as_tuple()),
            "score": self.score,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Element":
        box = d["box"]
        return cls(
            box=BBox(float(box[0]), float(box[1]), float(box[2]), float(box[3])),
            cls=ElementClass.from_name(d["cls"]),
            score=float(d.get("score", 1.0)),
        )


@dataclass(frozen=True)
class Layout:
    """An ordered set of elements on a canvas of known pixel size."""

    elements: tuple[Element, ...]
    canvas_w: int
    canvas_h: int

    def __post_init__(self) -> None:
        if self.canvas_w <= 0 or self.canvas_h <= 0:
            raise ValueError("canvas dimensions must be positive")
        object.__setattr__(self, "elements", tuple(self.elements))

    def __len__(self) -> int:
        return len(self.elements)

    def of_class(self, cls: ElementClass) -> tuple[Element, ...]:
        return tuple(e for e in self.elements if e.cls is cls)

    def to_json_dict(self) -> dict:
        return {
            "canvas": [self.canvas_w, self.canvas_h],
            "elements": [e.to_json_dict() for e in self.elements],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "Layout":
        canvas = d["canvas"]
        return cls(
            elements=tuple(Element.from_json_dict(e) for e in d["elements"]),
            canvas_w=int(canvas[0]),
            canvas_h=int(canvas[1]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())

    @classmethod
    def from_json(cls, s: str) -> "Layout":
        return cls.from_json_dict(json.loads(s))


@dataclass
class PosterSample:
    """A background raster with saliency, slogans, and a ground-truth layout.

    image: (H, W, 3) uint8 RGB; saliency: (H, W) float32 in [0, 1].
    """

    id: str
    image: np.ndarray
    saliency: np.ndarray
    slogans: tuple[str, ...] = ()
    gt: Layout | None = None

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {self.image.shape}")
        if self.image.dtype != np.uint8:
            raise ValueError(f"image must be uint8, got {self.image.dtype}")
        if self.saliency.shape != self.image.shape[:2]:
            raise ValueError("saliency must match image height/width")
        smin, smax = float(self.saliency.min(initial=0.0)), float(self.saliency.max(initial=0.0))
        if smin < 0.0 or smax > 1.0 + 1e-6:
            raise ValueError(f"saliency values must be in [0, 1], got [{smin}, {smax}]")


@dataclass(frozen=True)
class ModelConfig:
    """Dimensions and knobs shared by the encoders, fusion modules, and sampler."""

    n_queries: int = 16          # diffused boxes per sample
    max_slogans: int = 8         # text-token slots, padded
    text_dim: int = 128          # per-slogan feature width (content + length parts)
    roi_channels: int = 64       # RoI feature channels
    roi_width: int = 7
    roi_height: int = 7
    geo_embed_dim: int = 64      # sin/cos embedding width per box pair
    geo_feature_dim: int = 256   # geometry feature width after mixing
    num_classes: int = 5         # four element classes + background padding label
    diffusion_steps: int = 1000
    signal_scale: float = 1.0
    eps_geo: float = 1e-3        # clamp inside geometry log ratios
    decoder_hidden: int = 512
    text_vocab: int = 2048       # hashed-token vocabulary of the toy text encoder
    score_threshold: float = 0.5

    def __post_init__(self) -> None:
        dims = {
            "n_queries": self.n_queries,
            "max_slogans": self.max_slogans,
            "text_dim": self.text_dim,
            "roi_channels": self.roi_channels,
            "roi_width": self.roi_width,
            "roi_height": self.roi_height,
            "geo_embed_dim": self.geo_embed_dim,
            "geo_feature_dim": self.geo_feature_dim,
            "decoder_hidden": self.decoder_hidden,
            "text_vocab": self.text_vocab,
        }
        for name, value in dims.items():
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.geo_embed_dim % 8 != 0:
            raise ValueError(
                f"geo_embed_dim must be divisible by 8 (4 box components x sin/cos pairs), "
                f"got {self.geo_embed_dim}"
            )
        if self.text_dim % 8 != 0:
            raise ValueError(f"text_dim must be divisible by 8, got {self.text_dim}")
        if self.num_classes != len(CLASS_TO_INDEX):
            raise ValueError(f"num_classes must be {len(CLASS_TO_INDEX)}")
        if self.diffusion_steps < 1:
            raise ValueError("diffusion_steps must be >= 1")
        if self.signal_scale <= 0.0:
            raise ValueError("signal_scale must be positive")
        if self.eps_geo <= 0.0:
            raise ValueError("eps_geo must be positive")

    def to_json_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)

    def digest(self) -> str:
        """Stable hash of the configuration (hex sha256)."""
        payload = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array of (cx, cy, w, h)."""
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64).reshape(len(boxes), 4)


def array_to_boxes(arr: np.ndarray) -> list[BBox]:
    return [BBox(float(r[0]), float(r[1]), float(r[2]), float(r[3])) for r in arr]
