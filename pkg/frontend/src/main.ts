/** Browser wiring: connect to a session, stream state over the heatmap and
 * quiver, jog with the keyboard, mark goals, watch append/correct cues.
 */

import { ServiceClient } from "./client.js";
import { Debounced, JogInput, Vec3 } from "./input.js";
import { FieldSnapshot, StateMsg } from "./protocol.js";
import { ViewState, drawField, drawRobot, makeMapper } from "./view.js";

const FIELD_RESOLUTION: [number, number] = [60, 48];

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

async function boot() {
  const canvas = el<HTMLCanvasElement>("field");
  const maybeCtx = canvas.getContext("2d");
  if (maybeCtx === null) throw new Error("no 2d context");
  const ctx: CanvasRenderingContext2D = maybeCtx;
  const statusLine = el<HTMLDivElement>("status");
  const banner = el<HTMLDivElement>("banner");
  const base = (document.body.dataset.service ?? "http://127.0.0.1:8075");

  const view = new ViewState();
  const client = new ServiceClient(base);

  const params = new URLSearchParams(location.search);
  const existing = params.get("session");
  if (existing !== null) {
    client.session = existing;
  } else {
    await client.createSession();
  }
  view.session = client.session;

  const sliceAxis = Number(params.get("slice_axis") ?? 1);
  const sliceValue = Number(params.get("slice_value") ?? 0);
  const bounds: [number, number, number, number] = [
    Number(params.get("lo0") ?? 0.1), Number(params.get("hi0") ?? 0.7),
    Number(params.get("lo1") ?? 0.0), Number(params.get("hi1") ?? 0.5),
  ];

  const refresher = new Debounced(async () => {
    try {
      view.field = await client.fetchField(bounds, FIELD_RESOLUTION, sliceAxis, sliceValue);
    } catch (err) {
      statusLine.textContent = `field: ${String(err)}`;
    }
  }, 500);

  const send = (direction: Vec3) => {
    if (client.blocked) return;
    try {
      if (view.mode === "mark-goal") {
        client.sendFeedbackOverStream([0, 0, 0], true);
        view.mode = "correct";
      } else {
        client.sendFeedbackOverStream(direction, false);
      }
    } catch (err) {
      statusLine.textContent = String(err);
    }
  };
  const jog = new JogInput(send);

  window.addEventListener("keydown", (ev) => {
    if (ev.key === "g") {
      view.mode = view.mode === "correct" ? "mark-goal" : "correct";
      return;
    }
    if (jog.keyDown(ev.key, performance.now())) ev.preventDefault();
  });
  window.addEventListener("keyup", (ev) => jog.keyUp(ev.key));

  try {
    await client.connectStream({
      onState: (msg) => view.pushState(msg as StateMsg),
      onAck: (msg) => {
        view.pushAck(msg, performance.now());
        refresher.request();
      },
      onVersionMismatch: (got) => {
        view.banner = `protocol version ${got} unsupported - inputs disabled`;
      },
      onDisconnect: () => {
        statusLine.textContent = "stream closed";
      },
    });
  } catch (err) {
    view.banner = view.banner ?? String(err);
  }

  if (view.banner !== null) {
    banner.textContent = view.banner;
    banner.style.display = "block";
    return;  // blocking banner: no inputs, no stream
  }

  // initial snapshot (sessions without a trained policy simply show a hint)
  refresher.request();

  function frame() {
    const now = performance.now();
    jog.poll(now);
    ctx.fillStyle = "#10131a";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    const snap: FieldSnapshot | null = view.field;
    if (snap !== null) {
      const map = makeMapper(snap, canvas.width, canvas.height);
      drawField(ctx, snap, map);
      drawRobot(ctx, view, map, now);
    } else {
      ctx.fillStyle = "#777";
      ctx.fillText("no field yet - record a demo and press R to refresh", 20, 24);
    }
    const latest = view.latest;
    if (latest !== null) {
      statusLine.textContent =
        `t=${latest.t.toFixed(2)}s x=[${latest.x.map((v) => v.toFixed(3)).join(", ")}] ` +
        `sigma=${latest.sigma_rel.toFixed(2)} mode=${view.mode}`;
    }
    requestAnimationFrame(frame);
  }
  window.addEventListener("keypress", (ev) => {
    if (ev.key === "r") refresher.request();
  });
  requestAnimationFrame(frame);
}

boot().catch((err) => {
  const banner = document.getElementById("banner");
  if (banner !== null) {
    banner.textContent = String(err);
    (banner as HTMLElement).style.display = "block";
  }
});
