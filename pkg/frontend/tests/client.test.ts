import { describe, expect, it } from "vitest";

import { ServiceClient, SocketLike } from "../src/client.js";
import { AckMsg } from "../src/protocol.js";

function jsonResponse(doc: unknown, status = 200): Response {
  return new Response(JSON.stringify(doc), {
    status,
    headers: { "content-type": "application/json" },
  });
}

class FakeSocket implements SocketLike {
  sent: string[] = [];
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: (() => void) | null = null;
  onopen: (() => void) | null = null;
  closed = false;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
    this.onclose?.();
  }

  push(doc: unknown): void {
    this.onmessage?.({ data: JSON.stringify(doc) });
  }
}

function makeClient(responses: Record<string, unknown>, socket: FakeSocket) {
  const calls: string[] = [];
  const client = new ServiceClient(
    "http://svc",
    async (url, init) => {
      const key = `${init?.method ?? "GET"} ${url.replace("http://svc", "")}`;
      calls.push(key);
      for (const [pattern, doc] of Object.entries(responses)) {
        if (key.startsWith(pattern)) return jsonResponse(doc);
      }
      return jsonResponse({ detail: "missing stub" }, 404);
    },
    () => socket,
  );
  return { client, calls };
}

describe("service client", () => {
  it("creates sessions and remembers the id", async () => {
    const { client } = makeClient(
      { "POST /sessions": { protocol_version: "1", session: "s7", status: "idle" } },
      new FakeSocket(),
    );
    expect(await client.createSession()).toBe("s7");
    expect(client.session).toBe("s7");
  });

  it("blocks on a protocol version mismatch and refuses inputs", async () => {
    const socket = new FakeSocket();
    const { client } = makeClient(
      { "POST /sessions": { protocol_version: "2", session: "s9", status: "idle" } },
      socket,
    );
    await expect(client.createSession()).rejects.toThrow(/mismatch/);
    expect(client.blocked).toBe(true);
    await expect(client.sendFeedback([1, 0, 0])).rejects.toThrow(/blocked/);
    expect(() => client.sendFeedbackOverStream([1, 0, 0])).toThrow();
    expect(socket.sent.length).toBe(0);
  });

  it("clamps increments before submitting", async () => {
    const bodies: unknown[] = [];
    const client = new ServiceClient(
      "http://svc",
      async (url, init) => {
        if (String(url).endsWith("/feedback")) {
          bodies.push(JSON.parse(String(init?.body)));
          return jsonResponse({
            type: "ack", protocol_version: "1", applied_as: "correct",
            db_sizes: [3, 3, 3, 3], at: [0, 0, 0],
          });
        }
        return jsonResponse({ protocol_version: "1", session: "s1", status: "idle" });
      },
      () => new FakeSocket(),
    );
    await client.createSession();
    await client.sendFeedback([4, -0.5, -9]);
    expect((bodies[0] as { increment: number[] }).increment).toEqual([1, -0.5, -1]);
  });

  it("routes stream messages and acks after the hello", async () => {
    const socket = new FakeSocket();
    const { client } = makeClient(
      { "POST /sessions": { protocol_version: "1", session: "s1", status: "idle" } },
      socket,
    );
    await client.createSession();
    const acks: AckMsg[] = [];
    const states: unknown[] = [];
    const connected = client.connectStream({
      onState: (m) => states.push(m),
      onAck: (m) => acks.push(m),
    });
    socket.push({ type: "hello", protocol_version: "1", session: "s1", status: "idle" });
    await connected;
    socket.push({
      type: "state", protocol_version: "1", session: "s1", tick: 1, t: 0.01,
      x: [0, 0, 0], v: [0, 0, 0], dx: [0, 0, 0], k_s: [1, 1, 1],
      sigma_rel: 0.2, f_stable: [0, 0, 0], status: "running",
    });
    socket.push({
      type: "ack", protocol_version: "1", applied_as: "append",
      db_sizes: [4, 4, 4, 4], at: [0, 0, 0],
    });
    expect(states.length).toBe(1);
    expect(acks[0].applied_as).toBe("append");
    client.sendFeedbackOverStream([0.4, 0, 0]);
    expect(JSON.parse(socket.sent[0]).type).toBe("feedback");
  });

  it("rejects oversized field requests before touching the network", async () => {
    const { client } = makeClient(
      { "POST /sessions": { protocol_version: "1", session: "s1", status: "idle" } },
      new FakeSocket(),
    );
    await client.createSession();
    await expect(client.fetchField([0, 1, 0, 1], [200, 200], 2, 0)).rejects.toThrow(/capped/);
  });
});
