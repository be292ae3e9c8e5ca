import { describe, expect, it, vi } from "vitest";

import { Debounced, JogInput, KEY_DIRECTIONS, REPEAT_MS } from "../src/input.js";
import { AckMsg, StateMsg } from "../src/protocol.js";
import { CUE_COLORS, TRAIL_LIMIT, ViewState, heatColor } from "../src/view.js";

function stateMsg(x: [number, number, number], tick = 0): StateMsg {
  return {
    type: "state", protocol_version: "1", session: "s1", tick, t: tick / 100,
    x, v: [0, 0, 0], dx: [0, 0, 0], k_s: [300, 300, 300],
    sigma_rel: 0.1, f_stable: [0, 0, 0], status: "running",
  };
}

describe("view state", () => {
  it("keeps the trail bounded", () => {
    const view = new ViewState();
    for (let i = 0; i < TRAIL_LIMIT + 50; i++) view.pushState(stateMsg([i, 0, 0], i));
    expect(view.trail.length).toBe(TRAIL_LIMIT);
    expect(view.latest?.tick).toBe(TRAIL_LIMIT + 49);
  });

  it("maps ack branches to the documented cue colors", () => {
    const view = new ViewState();
    const ack: AckMsg = {
      type: "ack", protocol_version: "1", applied_as: "correct",
      db_sizes: [4, 4, 4, 4], at: [0, 0, 0],
    };
    const cue = view.pushAck(ack, 1000);
    expect(cue.kind).toBe("correct");
    expect(CUE_COLORS[cue.kind]).toMatch(/^#?[0-9a-f#]+$/i);
    expect(CUE_COLORS.correct).not.toBe(CUE_COLORS.append);
    expect(view.activeCue(1200)).not.toBeNull();
    expect(view.activeCue(1600)).toBeNull();   // expired
  });

  it("renders sigma through a bounded color map", () => {
    expect(heatColor(-0.5)).toBe(heatColor(0));
    expect(heatColor(1.5)).toBe(heatColor(1));
    expect(heatColor(0)).not.toBe(heatColor(1));
  });
});

describe("keyboard jog", () => {
  it("right arrow maps to one +x device unit", () => {
    expect(KEY_DIRECTIONS.ArrowRight).toEqual([1, 0, 0]);
    const sent: number[][] = [];
    const jog = new JogInput((d) => sent.push([...d]));
    jog.keyDown("ArrowRight", 0);
    expect(sent).toEqual([[1, 0, 0]]);
    expect(Math.max(...sent[0].map(Math.abs))).toBeLessThanOrEqual(1);
  });

  it("holding repeats at 10 Hz and stops on release", () => {
    const sent: number[][] = [];
    const jog = new JogInput((d) => sent.push([...d]));
    jog.keyDown("ArrowUp", 0);
    for (let t = 10; t <= 1000; t += 10) jog.poll(t);
    expect(sent.length).toBe(1 + Math.floor(1000 / REPEAT_MS));
    jog.keyUp("ArrowUp");
    for (let t = 1010; t <= 2000; t += 10) jog.poll(t);
    expect(sent.length).toBe(1 + Math.floor(1000 / REPEAT_MS));
  });

  it("ignores unmapped keys", () => {
    const jog = new JogInput(() => { throw new Error("should not emit"); });
    expect(jog.keyDown("q", 0)).toBe(false);
  });
});

describe("field refresh debounce", () => {
  it("coalesces rapid bursts into at most two fetches", async () => {
    vi.useFakeTimers();
    const deb = new Debounced(() => undefined, 500);
    for (let i = 0; i < 10; i++) {
      deb.request(Date.now());
      await vi.advanceTimersByTimeAsync(30);
    }
    await vi.advanceTimersByTimeAsync(600);
    expect(deb.calls).toBeLessThanOrEqual(2);
    expect(deb.calls).toBeGreaterThan(0);
    vi.useRealTimers();
  });

  it("spaces consecutive refreshes by the debounce interval", async () => {
    vi.useFakeTimers();
    const stamps: number[] = [];
    const deb = new Debounced(() => stamps.push(Date.now()), 500);
    deb.request(Date.now());
    await vi.advanceTimersByTimeAsync(520);
    deb.request(Date.now());
    await vi.advanceTimersByTimeAsync(520);
    expect(stamps.length).toBe(2);
    expect(stamps[1] - stamps[0]).toBeGreaterThanOrEqual(500);
    vi.useRealTimers();
  });
});
