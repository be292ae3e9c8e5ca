/** HTTP + WebSocket client for teaching-service protocol v1.
 *
 * Transports are injectable so the same client runs in the browser (native
 * fetch/WebSocket) and under vitest (node fetch, `ws`).
 */

import {
  AckMsg,
  FeedbackOut,
  FieldSnapshot,
  PROTOCOL_VERSION,
  StreamMsg,
  clampIncrement,
  parseStreamMsg,
  versionCompatible,
} from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onopen: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;
export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClientEvents {
  onState?: (msg: StreamMsg) => void;
  onAck?: (msg: AckMsg) => void;
  onVersionMismatch?: (got: string) => void;
  onDisconnect?: () => void;
}

export class ServiceClient {
  readonly base: string;
  private fetchImpl: FetchLike;
  private socketFactory: SocketFactory;
  private socket: SocketLike | null = null;
  session: string | null = null;
  blocked = false;

  constructor(base: string, fetchImpl?: FetchLike, socketFactory?: SocketFactory) {
    this.base = base.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((url, init) => fetch(url, init));
    this.socketFactory =
      socketFactory ?? ((url) => new WebSocket(url) as unknown as SocketLike);
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await this.fetchImpl(`${this.base}${path}`, {
      method,
      headers: body !== undefined ? { "content-type": "application/json" } : undefined,
      body: body !== undefined ? JSON.stringify(body) : undefined,
    });
    const doc = (await res.json()) as T & { detail?: string };
    if (!res.ok) throw new Error(doc.detail ?? `${method} ${path} -> ${res.status}`);
    return doc;
  }

  async createSession(policy: Record<string, unknown> = {},
                      environment: Record<string, unknown> = {},
                      start?: [number, number, number]): Promise<string> {
    const doc = await this.request<{ session: string; protocol_version: string }>(
      "POST", "/sessions",
      { policy, environment, ...(start ? { start_position: start } : {}) });
    if (!versionCompatible(doc.protocol_version)) {
      this.blocked = true;
      throw new Error(`protocol version mismatch: ${doc.protocol_version}`);
    }
    this.session = doc.session;
    return doc.session;
  }

  async recordDemo(times: number[], positions: number[][]): Promise<number[]> {
    await this.request("POST", `/sessions/${this.session}/demo/begin`);
    await this.request("POST", `/sessions/${this.session}/demo/sample`,
      { times, positions });
    const doc = await this.request<{ db_sizes: number[] }>(
      "POST", `/sessions/${this.session}/demo/end`);
    return doc.db_sizes;
  }

  start(): Promise<unknown> {
    return this.request("POST", `/sessions/${this.session}/start`);
  }

  pause(): Promise<unknown> {
    return this.request("POST", `/sessions/${this.session}/pause`);
  }

  step(n = 1): Promise<unknown> {
    return this.request("POST", `/sessions/${this.session}/step?n=${n}`);
  }

  status(): Promise<{ status: string; tick: number; x: number[] }> {
    return this.request("GET", `/sessions/${this.session}`);
  }

  /** Submit one corrective input over HTTP; increments are clamped. */
  async sendFeedback(increment: [number, number, number],
                     goalFlag = false): Promise<AckMsg> {
    if (this.blocked) throw new Error("client blocked by protocol mismatch");
    const msg = {
      increment: clampIncrement(increment),
      goal_flag: goalFlag,
      timestamp: Date.now() / 1000,
    };
    return this.request<AckMsg>("POST", `/sessions/${this.session}/feedback`, msg);
  }

  async fetchField(bounds: [number, number, number, number],
                   resolution: [number, number],
                   sliceAxis: number, sliceValue: number): Promise<FieldSnapshot> {
    const [lo0, hi0, lo1, hi1] = bounds;
    const [n0, n1] = resolution;
    if (n0 > 120 || n1 > 120) throw new Error("field resolution capped at 120x120");
    const q = `lo0=${lo0}&hi0=${hi0}&lo1=${lo1}&hi1=${hi1}&n0=${n0}&n1=${n1}` +
      `&slice_axis=${sliceAxis}&slice_value=${sliceValue}`;
    return this.request<FieldSnapshot>("GET", `/sessions/${this.session}/field?${q}`);
  }

  /** Open the live stream; the returned promise resolves after the hello. */
  connectStream(events: ClientEvents): Promise<void> {
    const wsBase = this.base.replace(/^http/, "ws");
    const socket = this.socketFactory(`${wsBase}/sessions/${this.session}/stream`);
    this.socket = socket;
    return new Promise((resolve, reject) => {
      let greeted = false;
      socket.onmessage = (ev) => {
        let msg: StreamMsg;
        try {
          msg = parseStreamMsg(String(ev.data));
        } catch {
          return;
        }
        if (msg.type === "hello") {
          greeted = true;
          if (!versionCompatible(msg.protocol_version)) {
            this.blocked = true;
            events.onVersionMismatch?.(msg.protocol_version);
            socket.close();
            reject(new Error("protocol version mismatch"));
            return;
          }
          resolve();
          return;
        }
        if (msg.type === "ack") events.onAck?.(msg);
        else events.onState?.(msg);
      };
      socket.onclose = () => {
        events.onDisconnect?.();
        if (!greeted) reject(new Error("stream closed before hello"));
      };
    });
  }

  /** Submit feedback over the stream socket (acks arrive via onAck). */
  sendFeedbackOverStream(increment: [number, number, number], goalFlag = false): void {
    if (this.blocked || this.socket === null) {
      throw new Error("no usable stream");
    }
    const msg: FeedbackOut = {
      type: "feedback",
      increment: clampIncrement(increment),
      goal_flag: goalFlag,
      timestamp: Date.now() / 1000,
    };
    this.socket.send(JSON.stringify(msg));
  }

  closeStream(): void {
    this.socket?.close();
    this.socket = null;
  }
}

export { PROTOCOL_VERSION };
