/** DOM wiring for the constraint editor. All layout math lives in state.ts. */

import { ApiClient, ApiError } from "./api.js";
import type { ClassName, GenerateResponse, SampleInfo } from "./api.js";
import { paint } from "./canvas.js";
import type { DragPreview } from "./canvas.js";
import {
  acceptResponse,
  addPin,
  beginRequest,
  initialState,
  normalizeDrag,
  removePin,
  serializeRequest,
  sloganWarning,
} from "./state.js";
import type { EditorState } from "./state.js";

const api = new ApiClient();
let state: EditorState = initialState();
let background: HTMLImageElement | null = null;
let preview: DragPreview | null = null;
let samples: SampleInfo[] = [];
let showPrevious = false;
let trajectoryIndex: number | null = null;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("editor-canvas");
const ctx = canvas.getContext("2d")!;
const samplePicker = $<HTMLSelectElement>("sample-picker");
const sloganBox = $<HTMLTextAreaElement>("slogans");
const sloganWarn = $<HTMLSpanElement>("slogan-warning");
const classPicker = $<HTMLSelectElement>("pin-class");
const seedInput = $<HTMLInputElement>("seed");
const stepsInput = $<HTMLInputElement>("steps");
const trajectoryToggle = $<HTMLInputElement>("want-trajectory");
const generateBtn = $<HTMLButtonElement>("generate");
const errorBanner = $<HTMLDivElement>("error-banner");
const pinList = $<HTMLUListElement>("pin-list");
const elementTable = $<HTMLTableSectionElement>("element-rows");
const abToggle = $<HTMLButtonElement>("ab-toggle");
const scrubber = $<HTMLInputElement>("trajectory-scrubber");
const scrubberLabel = $<HTMLSpanElement>("scrubber-label");
const statusLine = $<HTMLSpanElement>("status-line");

function visibleResponse(): GenerateResponse | null {
  return showPrevious ? state.previousResponse : state.lastResponse;
}

function repaint(): void {
  const resp = visibleResponse();
  let elements = resp?.layout.elements ?? [];
  if (
    trajectoryIndex !== null &&
    resp?.trajectory &&
    resp.trajectory.length > 0
  ) {
    const step = resp.trajectory[
      Math.min(trajectoryIndex, resp.trajectory.length - 1)
    ]!;
    elements = step.boxes.map((box, i) => ({
      cls: "embellishment" as ClassName,
      box,
      score: step.scores[i] ?? 0,
    }));
  }
  paint(ctx, background, elements, state.pinned, preview);
  renderPinList();
  renderElementTable(resp);
  sloganWarn.textContent = sloganWarning(state) ?? "";
  abToggle.disabled = state.previousResponse === null;
  abToggle.textContent = showPrevious ? "showing: previous" : "showing: latest";
  const traj = resp?.trajectory;
  scrubber.disabled = !traj || traj.length === 0;
  if (traj && traj.length > 0) {
    scrubber.max = String(traj.length - 1);
    scrubberLabel.textContent =
      trajectoryIndex === null
        ? "final"
        : `step ${traj[Math.min(trajectoryIndex, traj.length - 1)]!.step}`;
  } else {
    scrubberLabel.textContent = "";
  }
}

function renderPinList(): void {
  pinList.replaceChildren(
    ...state.pinned.map((pin) => {
      const li = document.createElement("li");
      const [cx, cy, w, h] = pin.box;
      li.textContent = `slot ${pin.slot} · ${pin.cls} · (${cx.toFixed(3)}, ${cy.toFixed(3)}, ${w.toFixed(3)}, ${h.toFixed(3)}) `;
      const del = document.createElement("button");
      del.textContent = "✕";
      del.title = "remove this pin";
      del.addEventListener("click", () => {
        state = removePin(state, pin.slot);
        repaint();
      });
      li.appendChild(del);
      return li;
    }),
  );
}

function renderElementTable(resp: GenerateResponse | null): void {
  const pinnedBoxes = new Set(state.pinned.map((p) => JSON.stringify(p.box)));
  elementTable.replaceChildren(
    ...(resp?.layout.elements ?? []).map((el) => {
      const tr = document.createElement("tr");
      const locked = pinnedBoxes.has(JSON.stringify(el.box)) ? "🔒 " : "";
      const cells = [
        `${locked}${el.cls}`,
        el.box.map((v) => v.toFixed(3)).join(", "),
        el.score.toFixed(3),
      ];
      for (const text of cells) {
        const td = document.createElement("td");
        td.textContent = text;
        tr.appendChild(td);
      }
      return tr;
    }),
  );
}

function showError(err: unknown, retry: (() => void) | null): void {
  errorBanner.replaceChildren();
  errorBanner.hidden = false;
  const msg = document.createElement("span");
  if (err instanceof ApiError && err.fieldErrors.length > 0) {
    const list = document.createElement("ul");
    for (const fe of err.fieldErrors) {
      const li = document.createElement("li");
      li.textContent = `${fe.field}: ${fe.message}`;
      list.appendChild(li);
    }
    msg.textContent = `request rejected (${err.status}):`;
    errorBanner.append(msg, list);
  } else if (err instanceof ApiError) {
    msg.textContent = `request failed (${err.status}): ${err.message}`;
    errorBanner.append(msg);
  } else {
    msg.textContent = `network failure: ${String(err)}`;
    errorBanner.append(msg);
    if (retry) {
      const btn = document.createElement("button");
      btn.textContent = "retry";
      btn.addEventListener("click", () => {
        errorBanner.hidden = true;
        retry();
      });
      errorBanner.append(" ", btn);
    }
  }
}

function clearError(): void {
  errorBanner.hidden = true;
  errorBanner.replaceChildren();
}

async function loadSample(id: string): Promise<void> {
  const info = samples.find((s) => s.id === id);
  if (!info) return;
  state = { ...state, sampleId: id, canvas: info.canvas };
  sloganBox.value = info.slogans.join("\n");
  state = { ...state, slogans: info.slogans.slice() };
  const img = new Image();
  img.src = api.sampleImageUrl(id);
  await img.decode();
  background = img;
  canvas.width = info.canvas[0];
  canvas.height = info.canvas[1];
  repaint();
}

function readControls(): void {
  const lines = sloganBox.value
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
  state = {
    ...state,
    slogans: lines,
    seed: Number.parseInt(seedInput.value, 10) || 0,
    steps: Math.max(1, Number.parseInt(stepsInput.value, 10) || 25),
    wantTrajectory: trajectoryToggle.checked,
  };
}

async function generate(): Promise<void> {
  readControls();
  clearError();
  const begun = beginRequest(state);
  state = begun.state;
  generateBtn.disabled = true;
  statusLine.textContent = "generating…";
  try {
    const resp = await api.generate(serializeRequest(state));
    state = acceptResponse(state, begun.seq, resp);
    showPrevious = false;
    trajectoryIndex = null;
    scrubber.value = scrubber.max;
  } catch (err) {
    if (begun.seq === state.inflightSeq) {
      showError(err, () => void generate());
    }
  } finally {
    if (begun.seq === state.inflightSeq) {
      generateBtn.disabled = false;
      statusLine.textContent = "";
    }
    repaint();
  }
}

// ---- canvas drag-to-pin

let dragStart: { x: number; y: number } | null = null;

function canvasPos(ev: PointerEvent): { x: number; y: number } {
  const rect = canvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * canvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * canvas.height,
  };
}

canvas.addEventListener("pointerdown", (ev) => {
  if (!background) return;
  canvas.setPointerCapture(ev.pointerId);
  dragStart = canvasPos(ev);
});

canvas.addEventListener("pointermove", (ev) => {
  if (!dragStart) return;
  const pos = canvasPos(ev);
  preview = {
    x0: dragStart.x,
    y0: dragStart.y,
    x1: pos.x,
    y1: pos.y,
    cls: classPicker.value as ClassName,
  };
  repaint();
});

canvas.addEventListener("pointerup", (ev) => {
  if (!dragStart) return;
  const pos = canvasPos(ev);
  const box = normalizeDrag(
    dragStart.x,
    dragStart.y,
    pos.x,
    pos.y,
    canvas.width,
    canvas.height,
  );
  dragStart = null;
  preview = null;
  if (box) {
    if (state.maxSlots !== null && state.pinned.length >= state.maxSlots) {
      showError(
        new ApiError(422, `all ${state.maxSlots} slots are already pinned`),
        null,
      );
    } else {
      state = addPin(state, box, classPicker.value as ClassName);
    }
  }
  repaint();
});

// ---- startup

async function init(): Promise<void> {
  generateBtn.addEventListener("click", () => void generate());
  abToggle.addEventListener("click", () => {
    showPrevious = !showPrevious;
    trajectoryIndex = null;
    repaint();
  });
  scrubber.addEventListener("input", () => {
    const traj = visibleResponse()?.trajectory;
    if (!traj || traj.length === 0) return;
    const idx = Number.parseInt(scrubber.value, 10);
    trajectoryIndex = idx >= traj.length - 1 ? null : idx;
    repaint();
  });
  sloganBox.addEventListener("input", () => {
    readControls();
    repaint();
  });
  samplePicker.addEventListener("change", () => {
    void loadSample(samplePicker.value);
  });

  try {
    const health = await api.health();
    state = {
      ...state,
      maxSlogans: health.max_slogans,
      maxSlots: health.n_slots,
    };
    if (health.schedule_steps !== null) {
      stepsInput.max = String(health.schedule_steps);
    }
    statusLine.textContent = health.model_loaded ? "" : "no model loaded";
    samples = await api.samples();
    samplePicker.replaceChildren(
      ...samples.map((s) => {
        const opt = document.createElement("option");
        opt.value = s.id;
        opt.textContent = s.id;
        return opt;
      }),
    );
    if (samples.length > 0) {
      await loadSample(samples[0]!.id);
    }
  } catch (err) {
    showError(err, () => void init());
  }
  repaint();
}

void init();
