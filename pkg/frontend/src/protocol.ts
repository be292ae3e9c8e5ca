/** Wire types for teaching-service protocol v1 (see ../PROTOCOL.md). */

export const PROTOCOL_VERSION = "1";

export interface HelloMsg {
  type: "hello";
  protocol_version: string;
  session: string;
  status: string;
}

export interface StateMsg {
  type: "state";
  protocol_version: string;
  session: string;
  tick: number;
  t: number;
  x: [number, number, number];
  v: [number, number, number];
  dx: [number, number, number];
  k_s: [number, number, number];
  sigma_rel: number;
  f_stable: [number, number, number];
  status: string;
  error?: string;
}

export interface AckMsg {
  type: "ack";
  protocol_version: string;
  applied_as: "correct" | "append" | "goal";
  db_sizes: number[];
  at: [number, number, number];
}

export interface ErrorMsg {
  type: "error";
  protocol_version: string;
  detail: string;
}

export interface FieldSnapshot {
  type: "field";
  protocol_version: string;
  axes: [number, number];
  slice_axis: number;
  slice_value: number;
  grid0: number[];
  grid1: number[];
  force0: number[];
  force1: number[];
  sigma_rel: number[];
  f_stable0: number[];
  f_stable1: number[];
}

export type StreamMsg = HelloMsg | StateMsg | AckMsg | ErrorMsg;

export interface FeedbackOut {
  type: "feedback";
  increment: [number, number, number];
  goal_flag: boolean;
  timestamp: number;
}

function vec3(v: unknown): v is [number, number, number] {
  return Array.isArray(v) && v.length === 3 && v.every((c) => typeof c === "number");
}

/** Parse one stream frame; throws on anything malformed. */
export function parseStreamMsg(text: string): StreamMsg {
  const doc = JSON.parse(text) as Record<string, unknown>;
  const type = doc.type;
  if (typeof doc.protocol_version !== "string") {
    throw new Error("message lacks protocol_version");
  }
  if (type === "hello" && typeof doc.session === "string") return doc as unknown as HelloMsg;
  if (type === "state") {
    if (!vec3(doc.x) || !vec3(doc.dx) || !vec3(doc.k_s) || !vec3(doc.f_stable)) {
      throw new Error("state message malformed");
    }
    if (typeof doc.sigma_rel !== "number" || doc.sigma_rel < 0 || doc.sigma_rel > 1) {
      throw new Error("sigma_rel out of range");
    }
    return doc as unknown as StateMsg;
  }
  if (type === "ack" && typeof doc.applied_as === "string") return doc as unknown as AckMsg;
  if (type === "error" && typeof doc.detail === "string") return doc as unknown as ErrorMsg;
  if (type === "pong") return { type: "error", protocol_version: PROTOCOL_VERSION, detail: "pong" } as ErrorMsg;
  throw new Error(`unknown stream message type: ${String(type)}`);
}

export function versionCompatible(version: string): boolean {
  return version === PROTOCOL_VERSION;
}

/** Per-axis clamp into the device range [-1, 1]. */
export function clampIncrement(v: [number, number, number]): [number, number, number] {
  return [
    Math.max(-1, Math.min(1, v[0])),
    Math.max(-1, Math.min(1, v[1])),
    Math.max(-1, Math.min(1, v[2])),
  ];
}
