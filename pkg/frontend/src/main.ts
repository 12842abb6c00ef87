/**
 * DOM wiring for the annotation page: record picker, canvas interactions,
 * solve buttons per method, side-by-side overlay toggles, and commit.
 */
import { ApiClient, ServiceError } from "./api";
import { draw } from "./canvas";
import { parsePgm } from "./image";
import { RecordPayload } from "./schema";
import {
  CanvasState,
  METHODS,
  Method,
  applySolveError,
  applySolveResult,
  beginDrag,
  beginSolve,
  canSolve,
  commitPlan,
  cycleActive,
  dragTo,
  endDrag,
  hitTest,
  initialState,
  loadRecord,
  placeMarker,
  residualBadge,
  screenToImage,
  selectVariant,
  sessionFor,
  solveDisabledReason,
  solvePayload,
  toggleOverlay,
  toggleVisibility,
} from "./state";

const params = new URLSearchParams(location.search);
const base =
  params.get("api") ??
  (location.protocol.startsWith("http") ? location.origin : "http://127.0.0.1:8008");
const api = new ApiClient(base);

const state: CanvasState = initialState();
const session = `ui-${Math.random().toString(36).slice(2, 10)}`;
let image: HTMLCanvasElement | HTMLImageElement | null = null;

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const recordSelect = document.getElementById("record") as HTMLSelectElement;
const statusLine = document.getElementById("status")!;
const errorLine = document.getElementById("error")!;
const residualList = document.getElementById("residuals")!;
const variantPanel = document.getElementById("variants")!;
const commitButton = document.getElementById("commit") as HTMLButtonElement;
const solveButtons = new Map<Method, HTMLButtonElement>();

function redraw(): void {
  draw(ctx, state, image);
  renderControls();
}

function renderControls(): void {
  errorLine.textContent = state.error ?? "";
  for (const method of METHODS) {
    const button = solveButtons.get(method)!;
    const reason = solveDisabledReason(state, method);
    button.disabled = reason !== null || state.pendingSeq !== null;
    button.title = reason ?? `solve with the ${method} method`;
  }
  renderVariants();
  renderResiduals();
  const record = state.record;
  commitButton.disabled = state.selected === null;
  statusLine.textContent =
    record === null
      ? "no record loaded"
      : `${record.id} v${record.version} | ${record.category} | ` +
        `active K${state.active} | ${state.pendingSeq !== null ? "solving..." : "idle"}`;
}

function renderVariants(): void {
  variantPanel.textContent = "";
  for (const method of METHODS) {
    const variant = state.variants[method];
    if (variant === undefined) continue;
    const row = document.createElement("label");
    row.className = `variant ${method}`;

    const show = document.createElement("input");
    show.type = "checkbox";
    show.checked = state.overlayShown[method];
    show.addEventListener("change", () => {
      toggleOverlay(state, method);
      redraw();
    });

    const pick = document.createElement("input");
    pick.type = "radio";
    pick.name = "selected-variant";
    pick.checked = state.selected === method;
    pick.addEventListener("change", () => {
      selectVariant(state, method);
      redraw();
    });

    const text = document.createElement("span");
    text.textContent =
      `${variant.solution.method} f=${variant.solution.focal.toFixed(1)} ` +
      `err=${variant.solution.error.toExponential(2)}`;

    row.append(show, pick, text);
    variantPanel.append(row);
  }
}

function renderResiduals(): void {
  residualList.textContent = "";
  const variant = state.selected === null ? undefined : state.variants[state.selected];
  if (variant === undefined) return;
  variant.residuals.forEach((res, i) => {
    const item = document.createElement("li");
    item.className = `badge-${residualBadge(res)}`;
    item.textContent = res === null ? `K${i}: hidden` : `K${i}: ${res.toFixed(2)} px`;
    residualList.append(item);
  });
}

async function loadImage(record: RecordPayload): Promise<void> {
  image = null;
  if (record.image_url.endsWith(".pgm")) {
    const res = await fetch(base + record.image_url);
    const gray = parsePgm(new Uint8Array(await res.arrayBuffer()));
    const off = document.createElement("canvas");
    off.width = gray.width;
    off.height = gray.height;
    const offCtx = off.getContext("2d")!;
    const rgba = offCtx.createImageData(gray.width, gray.height);
    for (let i = 0; i < gray.pixels.length; i++) {
      rgba.data[4 * i] = gray.pixels[i];
      rgba.data[4 * i + 1] = gray.pixels[i];
      rgba.data[4 * i + 2] = gray.pixels[i];
      rgba.data[4 * i + 3] = 255;
    }
    offCtx.putImageData(rgba, 0, 0);
    image = off;
  } else {
    image = await new Promise<HTMLImageElement>((resolve, reject) => {
      const img = new Image();
      img.onload = () => resolve(img);
      img.onerror = () => reject(new Error(`cannot load ${record.image_url}`));
      img.src = base + record.image_url;
    });
  }
}

async function openRecord(id: string): Promise<void> {
  try {
    const record = await api.getRecord(id);
    loadRecord(state, record);
    // fit the image into the canvas with a small margin
    const [w, h] = record.image_size;
    const zoom = Math.min((canvas.width - 20) / w, (canvas.height - 20) / h);
    state.view = {
      zoom,
      panX: (canvas.width - w * zoom) / 2,
      panY: (canvas.height - h * zoom) / 2,
    };
    await loadImage(record);
  } catch (err) {
    state.error = describe(err);
  }
  redraw();
}

async function runSolve(method: Method): Promise<void> {
  if (!canSolve(state, method)) return;
  const payload = solvePayload(state, method);
  const ticket = beginSolve(state, method);
  redraw();
  try {
    const response = await api.solve(state.record!.id, payload, sessionFor(session, method));
    applySolveResult(state, ticket, response);
  } catch (err) {
    if (err instanceof ServiceError) {
      applySolveError(state, ticket, err.code, err.message);
    } else {
      applySolveError(state, ticket, "RequestFailed", describe(err));
    }
  }
  redraw();
}

async function runCommit(): Promise<void> {
  try {
    const plan = commitPlan(state);
    const updated = await api.commit(
      state.record!.id,
      plan.body,
      sessionFor(session, plan.method),
    );
    loadRecord(state, updated);
  } catch (err) {
    state.error = err instanceof ServiceError ? `${err.code}: ${err.message}` : describe(err);
  }
  redraw();
}

function describe(err: unknown): string {
  return err instanceof Error ? err.message : String(err);
}

function wireCanvas(): void {
  canvas.addEventListener("mousedown", (ev) => {
    if (state.record === null) return;
    const hit = hitTest(state, ev.offsetX, ev.offsetY);
    if (hit !== null) {
      beginDrag(state, hit);
    } else if (state.active >= 0) {
      // click on empty space places the active marker there
      const [x, y] = screenToImage(state.view, ev.offsetX, ev.offsetY);
      placeMarker(state, state.active, x, y);
      cycleActive(state, 1);
    }
    redraw();
  });
  canvas.addEventListener("mousemove", (ev) => {
    if (state.dragging === null) return;
    dragTo(state, ev.offsetX, ev.offsetY);
    redraw();
  });
  window.addEventListener("mouseup", () => {
    endDrag(state);
    redraw();
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    const factor = ev.deltaY < 0 ? 1.15 : 1 / 1.15;
    const [ix, iy] = screenToImage(state.view, ev.offsetX, ev.offsetY);
    const zoom = Math.min(Math.max(state.view.zoom * factor, 0.2), 40);
    // keep the image point under the cursor fixed while zooming
    state.view = {
      zoom,
      panX: ev.offsetX - ix * zoom,
      panY: ev.offsetY - iy * zoom,
    };
    redraw();
  });
}

function wireKeyboard(): void {
  window.addEventListener("keydown", (ev) => {
    if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLSelectElement) {
      return;
    }
    if (ev.key === "Tab" || ev.key === "]") {
      ev.preventDefault();
      cycleActive(state, ev.shiftKey ? -1 : 1);
    } else if (ev.key === "[") {
      cycleActive(state, -1);
    } else if (ev.key === "v" && state.active >= 0) {
      toggleVisibility(state, state.active);
    } else if (ev.key.startsWith("Arrow") && state.active >= 0) {
      ev.preventDefault();
      const marker = state.markers[state.active];
      const step = ev.shiftKey ? 1 : 0.25; // subpixel nudge by default
      placeMarker(
        state,
        state.active,
        marker.x + (ev.key === "ArrowRight" ? step : ev.key === "ArrowLeft" ? -step : 0),
        marker.y + (ev.key === "ArrowDown" ? step : ev.key === "ArrowUp" ? -step : 0),
      );
    } else {
      return;
    }
    redraw();
  });
}

async function boot(): Promise<void> {
  for (const method of METHODS) {
    const button = document.getElementById(`solve-${method}`) as HTMLButtonElement;
    solveButtons.set(method, button);
    button.addEventListener("click", () => void runSolve(method));
  }
  commitButton.addEventListener("click", () => void runCommit());
  wireCanvas();
  wireKeyboard();

  try {
    const records = await api.listRecords();
    for (const record of records) {
      const option = document.createElement("option");
      option.value = record.id;
      option.textContent = `${record.id} (${record.category})`;
      recordSelect.append(option);
    }
    recordSelect.addEventListener("change", () => void openRecord(recordSelect.value));
    if (records.length > 0) {
      recordSelect.value = records[0].id;
      await openRecord(records[0].id);
    }
  } catch (err) {
    state.error = `cannot list records from ${base}: ${describe(err)}`;
  }
  redraw();
}

void boot();
