/**
 * Headless canvas state for the annotation tool.
 *
 * Everything here is plain data plus synchronous transitions, so the whole
 * interaction model is unit-testable without a DOM. The only numeric work
 * is the screen/image coordinate transform; all geometry and solving stays
 * on the server.
 */
import {
  AnnotationSet,
  KeypointSetBody,
  RecordPayload,
  SolutionPayload,
  SolveRequest,
  SolveResponse,
} from "./schema";

export type Method = "plain" | "ransac" | "subset";
export const METHODS: readonly Method[] = ["plain", "ransac", "subset"];

/** Residual badge thresholds, in image pixels. */
export const GREEN_PX = 2.0;
export const WARN_PX = 5.0;
/** The solver refuses fewer correspondences, so the UI blocks them early. */
export const MIN_VISIBLE = 4;

export type Badge = "green" | "amber" | "red" | "off";

export interface Marker {
  x: number; // image-pixel space, full float precision
  y: number;
  visible: boolean;
}

export interface ViewTransform {
  zoom: number;
  panX: number; // screen offset of image origin, in screen pixels
  panY: number;
}

export interface VariantResult {
  method: Method;
  solution: SolutionPayload;
  projected: [number, number][];
  residuals: (number | null)[];
  outline: [number, number][][];
  /** Record version observed at solve time; commits are checked against it. */
  recordVersion: number;
}

/** Handle returned by beginSolve; a response is applied only if it still matches. */
export interface SolveTicket {
  seq: number;
  epoch: number;
  method: Method;
}

export interface CanvasState {
  record: RecordPayload | null;
  /** Editable markers, one per 3D keypoint. Hidden markers stay in place. */
  markers: Marker[];
  /** All annotation sets as loaded; sets 1..2 back the robust methods. */
  storedSets: AnnotationSet[];
  active: number; // keyboard-focused marker index, -1 with no record
  dragging: number | null;
  view: ViewTransform;
  variants: Partial<Record<Method, VariantResult>>;
  overlayShown: Record<Method, boolean>;
  selected: Method | null;
  lastSeq: number;
  pendingSeq: number | null; // seq of the one in-flight solve, if any
  epoch: number; // bumped by marker edits; orphans in-flight solves
  error: string | null;
}

export function initialState(): CanvasState {
  return {
    record: null,
    markers: [],
    storedSets: [],
    active: -1,
    dragging: null,
    view: { zoom: 1, panX: 0, panY: 0 },
    variants: {},
    overlayShown: { plain: true, ransac: true, subset: true },
    selected: null,
    lastSeq: 0,
    pendingSeq: null,
    epoch: 0,
    error: null,
  };
}

/** Load a record, restoring markers from its first stored annotation set. */
export function loadRecord(state: CanvasState, record: RecordPayload): void {
  const first = record.keypoint_annotations[0];
  if (first.points.length !== record.keypoints_3d.length) {
    throw new Error(
      `record ${record.id}: ${first.points.length} annotated points for ` +
        `${record.keypoints_3d.length} keypoints`,
    );
  }
  state.record = record;
  state.storedSets = record.keypoint_annotations.map((s) => ({
    points: s.points.map((p) => [p[0], p[1]] as [number, number]),
    visibility: [...s.visibility],
  }));
  state.markers = first.points.map((p, i) => ({
    x: p[0],
    y: p[1],
    visible: first.visibility[i],
  }));
  state.active = state.markers.length > 0 ? 0 : -1;
  state.dragging = null;
  state.variants = {};
  state.selected = null;
  state.pendingSeq = null;
  state.epoch += 1;
  state.error = null;
}

export function screenToImage(view: ViewTransform, sx: number, sy: number): [number, number] {
  return [(sx - view.panX) / view.zoom, (sy - view.panY) / view.zoom];
}

export function imageToScreen(view: ViewTransform, x: number, y: number): [number, number] {
  return [x * view.zoom + view.panX, y * view.zoom + view.panY];
}

function requireRecord(state: CanvasState): RecordPayload {
  if (state.record === null) throw new Error("no record loaded");
  return state.record;
}

/** Marker edits invalidate solved overlays and orphan any in-flight solve. */
function touch(state: CanvasState): void {
  state.epoch += 1;
  state.variants = {};
  state.selected = null;
  state.error = null;
}

/** Move one marker to image coordinates (x, y), unrounded. */
export function placeMarker(state: CanvasState, index: number, x: number, y: number): void {
  requireRecord(state);
  const marker = state.markers[index];
  if (marker === undefined) throw new Error(`no marker ${index}`);
  marker.x = x;
  marker.y = y;
  state.active = index;
  touch(state);
}

export function beginDrag(state: CanvasState, index: number): void {
  requireRecord(state);
  if (state.markers[index] === undefined) throw new Error(`no marker ${index}`);
  state.dragging = index;
  state.active = index;
}

/** Drag handler; takes screen coordinates and stores image coordinates. */
export function dragTo(state: CanvasState, sx: number, sy: number): void {
  if (state.dragging === null) return;
  const [x, y] = screenToImage(state.view, sx, sy);
  const marker = state.markers[state.dragging];
  marker.x = x;
  marker.y = y;
  touch(state);
}

export function endDrag(state: CanvasState): void {
  state.dragging = null;
}

/** Hide or show a marker. The marker itself is kept, never deleted. */
export function toggleVisibility(state: CanvasState, index: number): void {
  requireRecord(state);
  const marker = state.markers[index];
  if (marker === undefined) throw new Error(`no marker ${index}`);
  marker.visible = !marker.visible;
  state.active = index;
  touch(state);
}

/** Nearest marker within radius (screen pixels) of a screen point, or null. */
export function hitTest(
  state: CanvasState,
  sx: number,
  sy: number,
  radius = 8,
): number | null {
  let best: number | null = null;
  let bestDist = radius;
  state.markers.forEach((m, i) => {
    const [mx, my] = imageToScreen(state.view, m.x, m.y);
    const dist = Math.hypot(mx - sx, my - sy);
    if (dist <= bestDist) {
      best = i;
      bestDist = dist;
    }
  });
  return best;
}

export function visibleCount(state: CanvasState): number {
  return state.markers.filter((m) => m.visible).length;
}

/**
 * Why a given method cannot be solved right now, or null if it can.
 * Doubles as the disabled-button tooltip.
 */
export function solveDisabledReason(state: CanvasState, method: Method): string | null {
  if (state.record === null) return "no record loaded";
  const visible = visibleCount(state);
  if (visible < MIN_VISIBLE) {
    return `need at least ${MIN_VISIBLE} visible keypoints (have ${visible})`;
  }
  if (method !== "plain" && state.storedSets.length !== 3) {
    return `${method} needs 3 annotation sets (record has ${state.storedSets.length})`;
  }
  return null;
}

export function canSolve(state: CanvasState, method: Method): boolean {
  return solveDisabledReason(state, method) === null;
}

/** Cycle the keyboard-focused marker through canonical keypoint order. */
export function cycleActive(state: CanvasState, step: number): void {
  const n = state.markers.length;
  if (n === 0) return;
  state.active = (((state.active + step) % n) + n) % n;
}

/**
 * Build the solve request. The edited markers form the first set; robust
 * methods add the record's other two stored sets unchanged. Hidden markers
 * ride along as coordinates but are excluded via the visibility flags.
 */
export function solvePayload(
  state: CanvasState,
  method: Method,
  config: Record<string, unknown> = {},
): SolveRequest {
  requireRecord(state);
  const reason = solveDisabledReason(state, method);
  if (reason !== null) throw new Error(reason);
  const own: KeypointSetBody = {
    points: state.markers.map((m) => [m.x, m.y] as [number, number]),
    visibility: state.markers.map((m) => m.visible),
  };
  const sets =
    method === "plain"
      ? [own]
      : [own, toBody(state.storedSets[1]), toBody(state.storedSets[2])];
  return { method, keypoints_2d: sets, config };
}

function toBody(set: AnnotationSet): KeypointSetBody {
  return { points: set.points.map((p) => [p[0], p[1]]), visibility: [...set.visibility] };
}

/**
 * Register a new in-flight solve. A newer solve or any marker edit makes
 * older tickets stale, so at most one response is ever applied.
 */
export function beginSolve(state: CanvasState, method: Method): SolveTicket {
  const reason = solveDisabledReason(state, method);
  if (reason !== null) throw new Error(reason);
  state.lastSeq += 1;
  state.pendingSeq = state.lastSeq;
  state.error = null;
  return { seq: state.lastSeq, epoch: state.epoch, method };
}

function ticketLive(state: CanvasState, ticket: SolveTicket): boolean {
  return ticket.seq === state.pendingSeq && ticket.epoch === state.epoch;
}

/** Apply a solve response; returns false (no-op) when the ticket is stale. */
export function applySolveResult(
  state: CanvasState,
  ticket: SolveTicket,
  response: SolveResponse,
): boolean {
  if (!ticketLive(state, ticket)) return false;
  state.pendingSeq = null;
  state.variants[ticket.method] = {
    method: ticket.method,
    solution: response.solution,
    projected: response.projected,
    residuals: response.residuals,
    outline: response.outline,
    recordVersion: response.record_version,
  };
  state.overlayShown[ticket.method] = true;
  state.selected = ticket.method;
  return true;
}

/** Surface a solve failure inline; returns false when the ticket is stale. */
export function applySolveError(
  state: CanvasState,
  ticket: SolveTicket,
  code: string,
  message: string,
): boolean {
  if (!ticketLive(state, ticket)) return false;
  state.pendingSeq = null;
  state.error = `${code}: ${message}`;
  return true;
}

export function toggleOverlay(state: CanvasState, method: Method): void {
  state.overlayShown[method] = !state.overlayShown[method];
}

/** Pick which solved variant the commit button will persist. */
export function selectVariant(state: CanvasState, method: Method): void {
  if (state.variants[method] === undefined) {
    throw new Error(`no ${method} result to select`);
  }
  state.selected = method;
}

export interface CommitPlan {
  method: Method;
  body: { expected_version: number };
}

/**
 * Commit plan for the selected variant. The server persists the solve it
 * stored for this (session, record), so the caller must send this with the
 * same session id used for the method's solve.
 */
export function commitPlan(state: CanvasState): CommitPlan {
  requireRecord(state);
  const method = state.selected;
  const variant = method === null ? undefined : state.variants[method];
  if (method === null || variant === undefined) {
    throw new Error("no solved variant selected");
  }
  return { method, body: { expected_version: variant.recordVersion } };
}

/** One server session per (client, method) so commits target exactly one solve. */
export function sessionFor(base: string, method: Method): string {
  return `${base}:${method}`;
}

export function residualBadge(residual: number | null): Badge {
  if (residual === null) return "off";
  if (residual < GREEN_PX) return "green";
  if (residual < WARN_PX) return "amber";
  return "red";
}
