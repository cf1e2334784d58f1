/** Top-down workspace drawing: workpiece footprint, stations, targets,
 * and the live mark as a short oriented segment. Pure drawing against a
 * minimal 2D-context interface so it can be exercised without a DOM. */

import { ConsoleState } from "./types.js";

export interface Draw2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  rect(x: number, y: number, w: number, h: number): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  stroke(): void;
  fill(): void;
  fillText(text: string, x: number, y: number): void;
}

export interface WorldTransform {
  toX(x: number): number;
  toY(y: number): number;
  scale: number;
}

const STATUS_COLORS: Record<string, string> = {
  pending: "#8a8f98",
  active: "#e4b429",
  done: "#3fa34d",
  failed: "#d64545",
};

/** Fit the scene (footprint plus stations) into the canvas with a margin. */
export function worldTransform(
  state: ConsoleState,
  width: number,
  height: number,
  margin = 24,
): WorldTransform {
  let minX = -1, minY = -1, maxX = 1, maxY = 1;
  if (state.footprint) {
    [minX, minY] = state.footprint.min;
    [maxX, maxY] = state.footprint.max;
  }
  for (const s of state.stations) {
    minX = Math.min(minX, s.x);
    maxX = Math.max(maxX, s.x);
    minY = Math.min(minY, s.y);
    maxY = Math.max(maxY, s.y);
  }
  const spanX = Math.max(maxX - minX, 0.1);
  const spanY = Math.max(maxY - minY, 0.1);
  const scale = Math.min(
    (width - 2 * margin) / spanX,
    (height - 2 * margin) / spanY,
  );
  const cx = (minX + maxX) / 2;
  const cy = (minY + maxY) / 2;
  return {
    scale,
    toX: (x: number) => width / 2 + (x - cx) * scale,
    // canvas y grows downward; world y grows up the screen
    toY: (y: number) => height / 2 - (y - cy) * scale,
  };
}

export function renderWorkspace(
  ctx: Draw2D,
  state: ConsoleState,
  width: number,
  height: number,
): void {
  ctx.clearRect(0, 0, width, height);
  const t = worldTransform(state, width, height);

  if (state.footprint) {
    const [minX, minY] = state.footprint.min;
    const [maxX, maxY] = state.footprint.max;
    ctx.strokeStyle = "#5b6472";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.rect(
      t.toX(minX),
      t.toY(maxY),
      (maxX - minX) * t.scale,
      (maxY - minY) * t.scale,
    );
    ctx.stroke();
  }

  for (const target of state.targets) {
    ctx.fillStyle = STATUS_COLORS[target.status] ?? STATUS_COLORS.pending;
    ctx.beginPath();
    ctx.arc(t.toX(target.x), t.toY(target.y), 3, 0, 2 * Math.PI);
    ctx.fill();
  }

  for (const st of state.stations) {
    const x = t.toX(st.x);
    const y = t.toY(st.y);
    ctx.strokeStyle = st.active ? "#e4b429" : "#8a8f98";
    ctx.fillStyle = st.active ? "#e4b429" : "transparent";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(x, y, 8, 0, 2 * Math.PI);
    if (st.active) ctx.fill();
    ctx.stroke();
    const yaw = (st.yawDeg * Math.PI) / 180;
    ctx.beginPath();
    ctx.moveTo(x, y);
    ctx.lineTo(x + 14 * Math.cos(yaw), y - 14 * Math.sin(yaw));
    ctx.stroke();
    ctx.fillStyle = "#c6ccd4";
    ctx.fillText(`S${st.id}`, x + 10, y - 10);
  }

  if (state.mark) {
    const half = 0.25 * t.scale; // a 0.5 m long line on the workpiece
    const x = t.toX(state.mark.x);
    const y = t.toY(state.mark.y);
    ctx.strokeStyle = "#ff3b30";
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(x - state.mark.dx * half, y + state.mark.dy * half);
    ctx.lineTo(x + state.mark.dx * half, y - state.mark.dy * half);
    ctx.stroke();
  }
}

/** Endpoints of the mark segment in canvas coordinates (for tests). */
export function markSegment(
  state: ConsoleState,
  width: number,
  height: number,
): [number, number, number, number] | null {
  if (!state.mark) return null;
  const t = worldTransform(state, width, height);
  const half = 0.25 * t.scale;
  const x = t.toX(state.mark.x);
  const y = t.toY(state.mark.y);
  return [
    x - state.mark.dx * half,
    y + state.mark.dy * half,
    x + state.mark.dx * half,
    y - state.mark.dy * half,
  ];
}
