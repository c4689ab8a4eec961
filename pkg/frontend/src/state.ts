/** Editor state and the pure logic behind it (no DOM access here). */

import type {
  Box,
  ClassName,
  GenerateRequest,
  GenerateResponse,
  PinnedElement,
} from "./api.js";

/** Drags smaller than this, in either axis, are treated as clicks. */
export const MIN_DRAG_PX = 4;

export interface EditorState {
  sampleId: string | null;
  canvas: [number, number];
  slogans: string[];
  pinned: PinnedElement[];
  steps: number;
  seed: number;
  wantTrajectory: boolean;
  /** Capacity advertised by the service; null before /api/health resolves. */
  maxSlogans: number | null;
  maxSlots: number | null;
  lastResponse: GenerateResponse | null;
  previousResponse: GenerateResponse | null;
  /** Monotonic id of the newest in-flight generate request. */
  inflightSeq: number;
}

export function initialState(): EditorState {
  return {
    sampleId: null,
    canvas: [0, 0],
    slogans: [],
    pinned: [],
    steps: 25,
    seed: 0,
    wantTrajectory: false,
    maxSlogans: null,
    maxSlots: null,
    lastResponse: null,
    previousResponse: null,
    inflightSeq: 0,
  };
}

/**
 * Turn a pointer drag in canvas pixels into a normalized center-format box.
 * Returns null for sub-threshold drags (clicks and slivers).
 */
export function normalizeDrag(
  x0: number,
  y0: number,
  x1: number,
  y1: number,
  canvasW: number,
  canvasH: number,
): Box | null {
  const w = Math.abs(x1 - x0);
  const h = Math.abs(y1 - y0);
  if (w < MIN_DRAG_PX || h < MIN_DRAG_PX) {
    return null;
  }
  const cx = (x0 + x1) / 2 / canvasW;
  const cy = (y0 + y1) / 2 / canvasH;
  return [
    clamp01(cx),
    clamp01(cy),
    Math.min(w / canvasW, 1),
    Math.min(h / canvasH, 1),
  ];
}

function clamp01(v: number): number {
  return Math.min(1, Math.max(0, v));
}

/** Center-format normalized box to an integer pixel rect for drawing. */
export function boxToPixelRect(
  box: Box,
  canvasW: number,
  canvasH: number,
): { x: number; y: number; w: number; h: number } {
  const [cx, cy, w, h] = box;
  const x = Math.round((cx - w / 2) * canvasW);
  const y = Math.round((cy - h / 2) * canvasH);
  return {
    x,
    y,
    w: Math.round(w * canvasW),
    h: Math.round(h * canvasH),
  };
}

/** Smallest slot index not taken by an existing pin. */
export function nextFreeSlot(pinned: PinnedElement[]): number {
  const used = new Set(pinned.map((p) => p.slot));
  let slot = 0;
  while (used.has(slot)) slot += 1;
  return slot;
}

export function addPin(
  state: EditorState,
  box: Box,
  cls: ClassName,
): EditorState {
  const pin: PinnedElement = { slot: nextFreeSlot(state.pinned), cls, box };
  return { ...state, pinned: [...state.pinned, pin] };
}

export function removePin(state: EditorState, slot: number): EditorState {
  return { ...state, pinned: state.pinned.filter((p) => p.slot !== slot) };
}

/** Warning text for the slogan editor, or null when within capacity. */
export function sloganWarning(state: EditorState): string | null {
  if (state.maxSlogans !== null && state.slogans.length > state.maxSlogans) {
    return `${state.slogans.length} slogans exceed the model's capacity of ${state.maxSlogans}`;
  }
  return null;
}

/** The request body for the current editor state (pins sorted by slot). */
export function serializeRequest(state: EditorState): GenerateRequest {
  const req: GenerateRequest = {
    slogans: [...state.slogans],
    pinned: [...state.pinned].sort((a, b) => a.slot - b.slot),
    steps: state.steps,
    seed: state.seed,
  };
  if (state.sampleId !== null) {
    req.sample_id = state.sampleId;
  }
  if (state.wantTrajectory) {
    req.trajectory = true;
  }
  return req;
}

/** Mark a new request in flight; its seq must win over any older one. */
export function beginRequest(state: EditorState): {
  state: EditorState;
  seq: number;
} {
  const seq = state.inflightSeq + 1;
  return { state: { ...state, inflightSeq: seq }, seq };
}

/**
 * Fold a completed response into the state. Responses from superseded
 * requests (stale seq) are dropped so a slow reply can't clobber a newer one.
 */
export function acceptResponse(
  state: EditorState,
  seq: number,
  resp: GenerateResponse,
): EditorState {
  if (seq !== state.inflightSeq) {
    return state;
  }
  return {
    ...state,
    previousResponse: state.lastResponse,
    lastResponse: resp,
  };
}
