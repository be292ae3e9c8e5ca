/** View state and canvas rendering: variance heatmap, attractor-force
 * quiver, stabilization overlay, robot trail and the append/correct cue.
 *
 * Every number on screen originates from a service broadcast or snapshot;
 * nothing is fabricated client side.
 */

import { AckMsg, FieldSnapshot, StateMsg } from "./protocol.js";

export const TRAIL_LIMIT = 300;
export type InputMode = "correct" | "mark-goal";

export interface Cue {
  kind: "correct" | "append" | "goal";
  until: number;   // wall-clock ms
}

export class ViewState {
  session: string | null = null;
  latest: StateMsg | null = null;
  field: FieldSnapshot | null = null;
  mode: InputMode = "correct";
  trail: Array<[number, number, number]> = [];
  cue: Cue | null = null;
  banner: string | null = null;

  pushState(msg: StateMsg): void {
    this.latest = msg;
    this.trail.push([msg.x[0], msg.x[1], msg.x[2]]);
    if (this.trail.length > TRAIL_LIMIT) {
      this.trail.splice(0, this.trail.length - TRAIL_LIMIT);
    }
  }

  pushAck(msg: AckMsg, now: number, holdMs = 400): Cue {
    const cue: Cue = { kind: msg.applied_as, until: now + holdMs };
    this.cue = cue;
    return cue;
  }

  activeCue(now: number): Cue | null {
    if (this.cue !== null && now <= this.cue.until) return this.cue;
    return null;
  }
}

/** Σ/Σ_max in [0,1] -> heatmap color (dark furrow floor, bright unknown). */
export function heatColor(rel: number): string {
  const v = Math.max(0, Math.min(1, rel));
  const r = Math.round(30 + 190 * v);
  const g = Math.round(30 + 40 * v);
  const b = Math.round(70 + 120 * (1 - v));
  return `rgb(${r},${g},${b})`;
}

export const CUE_COLORS: Record<Cue["kind"], string> = {
  correct: "#36d06c",   // absorbed by the database: green pulse
  append: "#f2a02e",    // grew the database: orange pulse
  goal: "#4aa3ff",
};

export interface Mapper {
  toPx(g0: number, g1: number): [number, number];
  scale: number;   // px per meter
}

export function makeMapper(snapshot: FieldSnapshot, width: number, height: number): Mapper {
  const g0 = snapshot.grid0;
  const g1 = snapshot.grid1;
  const span0 = Math.max(g0[g0.length - 1] - g0[0], 1e-9);
  const span1 = Math.max(g1[g1.length - 1] - g1[0], 1e-9);
  const scale = Math.min(width / span0, height / span1) * 0.92;
  const off0 = (width - span0 * scale) / 2;
  const off1 = (height - span1 * scale) / 2;
  return {
    toPx: (a, b) => [off0 + (a - g0[0]) * scale, height - off1 - (b - g1[0]) * scale],
    scale,
  };
}

type Ctx2D = CanvasRenderingContext2D;

export function drawField(ctx: Ctx2D, snapshot: FieldSnapshot, map: Mapper): void {
  const n0 = snapshot.grid0.length;
  const n1 = snapshot.grid1.length;
  const cell0 = (map.scale * (snapshot.grid0[n0 - 1] - snapshot.grid0[0])) / Math.max(n0 - 1, 1);
  const cell1 = (map.scale * (snapshot.grid1[n1 - 1] - snapshot.grid1[0])) / Math.max(n1 - 1, 1);
  for (let i = 0; i < n0; i++) {
    for (let j = 0; j < n1; j++) {
      const k = i * n1 + j;
      const [px, py] = map.toPx(snapshot.grid0[i], snapshot.grid1[j]);
      ctx.fillStyle = heatColor(snapshot.sigma_rel[k]);
      ctx.fillRect(px - cell0 / 2, py - cell1 / 2, cell0 + 1, cell1 + 1);
    }
  }
  // quiver: commanded spring force, subsampled for readability
  const maxF = snapshot.force0.reduce(
    (m, v, k) => Math.max(m, Math.hypot(v, snapshot.force1[k])), 1e-9);
  const strideI = Math.max(1, Math.floor(n0 / 24));
  const strideJ = Math.max(1, Math.floor(n1 / 24));
  const arrow = Math.min(cell0, cell1) * Math.max(strideI, strideJ) * 0.9;
  ctx.strokeStyle = "#e8e8e8";
  ctx.lineWidth = 1;
  for (let i = 0; i < n0; i += strideI) {
    for (let j = 0; j < n1; j += strideJ) {
      const k = i * n1 + j;
      const f0 = snapshot.force0[k] / maxF;
      const f1 = snapshot.force1[k] / maxF;
      const [px, py] = map.toPx(snapshot.grid0[i], snapshot.grid1[j]);
      ctx.beginPath();
      ctx.moveTo(px, py);
      ctx.lineTo(px + f0 * arrow, py - f1 * arrow);
      ctx.stroke();
    }
  }
  // stabilization overlay, fainter
  ctx.strokeStyle = "rgba(120,220,255,0.6)";
  const maxS = snapshot.f_stable0.reduce(
    (m, v, k) => Math.max(m, Math.hypot(v, snapshot.f_stable1[k])), 1e-9);
  for (let i = 0; i < n0; i += strideI * 2) {
    for (let j = 0; j < n1; j += strideJ * 2) {
      const k = i * n1 + j;
      const [px, py] = map.toPx(snapshot.grid0[i], snapshot.grid1[j]);
      ctx.beginPath();
      ctx.moveTo(px, py);
      ctx.lineTo(px + (snapshot.f_stable0[k] / maxS) * arrow * 0.7,
                 py - (snapshot.f_stable1[k] / maxS) * arrow * 0.7);
      ctx.stroke();
    }
  }
}

export function drawRobot(ctx: Ctx2D, view: ViewState, map: Mapper, now: number): void {
  const snap = view.field;
  const latest = view.latest;
  if (snap === null || latest === null) return;
  const [a0, a1] = snap.axes;
  ctx.strokeStyle = "rgba(255,255,255,0.5)";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  view.trail.forEach((p, idx) => {
    const [px, py] = map.toPx(p[a0], p[a1]);
    if (idx === 0) ctx.moveTo(px, py);
    else ctx.lineTo(px, py);
  });
  ctx.stroke();

  const [rx, ry] = map.toPx(latest.x[a0], latest.x[a1]);
  const cue = view.activeCue(now);
  ctx.fillStyle = cue !== null ? CUE_COLORS[cue.kind] : "#ffffff";
  ctx.beginPath();
  ctx.arc(rx, ry, cue !== null ? 9 : 6, 0, 2 * Math.PI);
  ctx.fill();
}
