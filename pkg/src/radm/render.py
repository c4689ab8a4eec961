"""Rasterize layouts as translucent class-colored overlays on a background."""

from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .core import ElementClass, Layout

# one fixed RGB per class, so renders are comparable across runs
CLASS_COLORS: dict[ElementClass, tuple[int, int, int]] = {
    ElementClass.LOGO: (66, 133, 244),
    ElementClass.TEXT: (52, 168, 83),
    ElementClass.UNDERLAY: (251, 188, 5),
    ElementClass.EMBELLISHMENT: (234, 67, 53),
}
FILL_ALPHA = 110
BORDER_ALPHA = 230


def render_layout(image: np.ndarray, layout: Layout) -> np.ndarray:
    """Draw the layout over a copy of the image; empty layouts pass through.

    Underlays are painted first so text and logos sit visually above them;
    within a z-tier, element list order decides. Output is a fresh
    (H, W, 3) uint8 array; the input is never modified.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    if not layout.elements:
        return image.copy()

    h, w = image.shape[:2]
    base = Image.fromarray(image, mode="RGB").convert("RGBA")
    overlay = Image.new("RGBA", (w, h), (0, 0, 0, 0))
    draw = ImageDraw.Draw(overlay)
    border = max(1, round(min(w, h) * 0.005))

    tiers = [e for e in layout.elements if e.cls is ElementClass.UNDERLAY] + [
        e for e in layout.elements if e.cls is not ElementClass.UNDERLAY
    ]
    for el in tiers:
        x1, y1, x2, y2 = el.box.to_corners()
        px1, py1 = round(x1 * w), round(y1 * h)
        px2, py2 = round(x2 * w), round(y2 * h)
        px2, py2 = max(px2, px1 + 1), max(py2, py1 + 1)
        color = CLASS_COLORS[el.cls]
        draw.rectangle(
            (px1, py1, px2 - 1, py2 - 1),
            fill=color + (FILL_ALPHA,),
            outline=color + (BORDER_ALPHA,),
            width=border,
        )
    out = Image.alpha_composite(base, overlay).convert("RGB")
    return np.asarray(out).copy()
