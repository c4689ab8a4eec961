/** Overlay drawing for the editor canvas. */

import type { Box, ClassName, LayoutElement, PinnedElement } from "./api.js";
import { boxToPixelRect } from "./state.js";

/** Matches the service's PNG renderer so UI and CLI overlays agree. */
export const CLASS_COLORS: Record<ClassName, string> = {
  logo: "rgb(66, 133, 244)",
  text: "rgb(52, 168, 83)",
  underlay: "rgb(251, 188, 5)",
  embellishment: "rgb(234, 67, 53)",
};

const FILL_ALPHA = 0.43;

export interface DragPreview {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
  cls: ClassName;
}

function drawBox(
  ctx: CanvasRenderingContext2D,
  box: Box,
  cls: ClassName,
  opts: { locked?: boolean; dashed?: boolean } = {},
): void {
  const { x, y, w, h } = boxToPixelRect(box, ctx.canvas.width, ctx.canvas.height);
  const color = CLASS_COLORS[cls];
  ctx.save();
  ctx.globalAlpha = FILL_ALPHA;
  ctx.fillStyle = color;
  ctx.fillRect(x, y, w, h);
  ctx.globalAlpha = 0.9;
  ctx.strokeStyle = color;
  ctx.lineWidth = 2;
  if (opts.dashed) {
    ctx.setLineDash([6, 4]);
  }
  ctx.strokeRect(x + 0.5, y + 0.5, w - 1, h - 1);
  if (opts.locked) {
    ctx.setLineDash([]);
    ctx.globalAlpha = 1;
    ctx.font = "12px system-ui, sans-serif";
    ctx.fillStyle = "#fff";
    ctx.strokeStyle = "rgba(0,0,0,0.6)";
    ctx.lineWidth = 3;
    const label = "\u{1F512}";
    ctx.strokeText(label, x + 4, y + 14);
    ctx.fillText(label, x + 4, y + 14);
  }
  ctx.restore();
}

/** Repaint background, generated layout, pins, and the live drag preview. */
export function paint(
  ctx: CanvasRenderingContext2D,
  background: CanvasImageSource | null,
  elements: LayoutElement[],
  pinned: PinnedElement[],
  preview: DragPreview | null,
): void {
  const { width, height } = ctx.canvas;
  ctx.clearRect(0, 0, width, height);
  if (background) {
    ctx.drawImage(background, 0, 0, width, height);
  } else {
    ctx.fillStyle = "#222";
    ctx.fillRect(0, 0, width, height);
  }

  // underlays first so text strokes sit above their backing panels
  const tiers: LayoutElement[] = [
    ...elements.filter((e) => e.cls === "underlay"),
    ...elements.filter((e) => e.cls !== "underlay"),
  ];
  const pinnedBoxes = new Set(pinned.map((p) => JSON.stringify(p.box)));
  for (const el of tiers) {
    // pinned elements come back verbatim; draw those via the pin pass only
    if (pinnedBoxes.has(JSON.stringify(el.box))) continue;
    drawBox(ctx, el.box, el.cls);
  }
  for (const pin of pinned) {
    drawBox(ctx, pin.box, pin.cls, { locked: true });
  }
  if (preview) {
    ctx.save();
    ctx.strokeStyle = CLASS_COLORS[preview.cls];
    ctx.setLineDash([6, 4]);
    ctx.lineWidth = 1.5;
    ctx.strokeRect(
      Math.min(preview.x0, preview.x1) + 0.5,
      Math.min(preview.y0, preview.y1) + 0.5,
      Math.abs(preview.x1 - preview.x0),
      Math.abs(preview.y1 - preview.y0),
    );
    ctx.restore();
  }
}
