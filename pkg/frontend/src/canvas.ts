/**
 * Canvas rendering for the annotation view: image, markers, per-variant
 * silhouette overlays, projected keypoints, and residual badges.
 */
import {
  Badge,
  CanvasState,
  METHODS,
  Method,
  residualBadge,
} from "./state";

export const VARIANT_COLORS: Record<Method, string> = {
  plain: "#3b82f6",
  ransac: "#f59e0b",
  subset: "#a855f7",
};

export const BADGE_COLORS: Record<Badge, string> = {
  green: "#22c55e",
  amber: "#eab308",
  red: "#ef4444",
  off: "#6b7280",
};

type Drawable = HTMLImageElement | HTMLCanvasElement | ImageBitmap;

export function draw(
  ctx: CanvasRenderingContext2D,
  state: CanvasState,
  image: Drawable | null,
): void {
  const { zoom, panX, panY } = state.view;
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.fillStyle = "#111318";
  ctx.fillRect(0, 0, ctx.canvas.width, ctx.canvas.height);
  ctx.setTransform(zoom, 0, 0, zoom, panX, panY);

  if (image !== null) ctx.drawImage(image, 0, 0);

  for (const method of METHODS) {
    const variant = state.variants[method];
    if (variant === undefined || !state.overlayShown[method]) continue;
    drawOutline(ctx, variant.outline, VARIANT_COLORS[method], zoom);
    drawProjected(ctx, variant.projected, VARIANT_COLORS[method], zoom);
  }

  drawMarkers(ctx, state, zoom);
  drawBadges(ctx, state, zoom);
}

function drawOutline(
  ctx: CanvasRenderingContext2D,
  outline: [number, number][][],
  color: string,
  zoom: number,
): void {
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5 / zoom;
  for (const polyline of outline) {
    if (polyline.length < 2) continue;
    ctx.beginPath();
    ctx.moveTo(polyline[0][0], polyline[0][1]);
    for (let i = 1; i < polyline.length; i++) {
      ctx.lineTo(polyline[i][0], polyline[i][1]);
    }
    ctx.stroke();
  }
}

function drawProjected(
  ctx: CanvasRenderingContext2D,
  points: [number, number][],
  color: string,
  zoom: number,
): void {
  const arm = 4 / zoom;
  ctx.strokeStyle = color;
  ctx.lineWidth = 1 / zoom;
  for (const [x, y] of points) {
    ctx.beginPath();
    ctx.moveTo(x - arm, y);
    ctx.lineTo(x + arm, y);
    ctx.moveTo(x, y - arm);
    ctx.lineTo(x, y + arm);
    ctx.stroke();
  }
}

function drawMarkers(ctx: CanvasRenderingContext2D, state: CanvasState, zoom: number): void {
  const r = 5 / zoom;
  state.markers.forEach((marker, i) => {
    ctx.beginPath();
    ctx.arc(marker.x, marker.y, r, 0, 2 * Math.PI);
    if (marker.visible) {
      ctx.fillStyle = "rgba(255, 255, 255, 0.85)";
      ctx.fill();
    } else {
      ctx.setLineDash([2 / zoom, 2 / zoom]);
      ctx.strokeStyle = "rgba(255, 255, 255, 0.5)";
      ctx.lineWidth = 1 / zoom;
      ctx.stroke();
      ctx.setLineDash([]);
    }
    if (i === state.active) {
      ctx.beginPath();
      ctx.arc(marker.x, marker.y, r + 3 / zoom, 0, 2 * Math.PI);
      ctx.strokeStyle = "#fbbf24";
      ctx.lineWidth = 1.5 / zoom;
      ctx.stroke();
    }
    ctx.fillStyle = "#e5e7eb";
    ctx.font = `${11 / zoom}px sans-serif`;
    ctx.fillText(`K${i}`, marker.x + r + 2 / zoom, marker.y - r);
  });
}

/** Residual heat badges for the selected variant, one dot per marker. */
function drawBadges(ctx: CanvasRenderingContext2D, state: CanvasState, zoom: number): void {
  const variant = state.selected === null ? undefined : state.variants[state.selected];
  if (variant === undefined) return;
  const r = 3 / zoom;
  state.markers.forEach((marker, i) => {
    const badge = residualBadge(variant.residuals[i] ?? null);
    ctx.beginPath();
    ctx.arc(marker.x - 8 / zoom, marker.y - 8 / zoom, r, 0, 2 * Math.PI);
    ctx.fillStyle = BADGE_COLORS[badge];
    ctx.fill();
  });
}
