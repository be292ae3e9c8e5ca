/** Keyboard jog: arrows and page keys map to one device unit per press on
 * the slice axes; holding a key repeats at 10 Hz (jog-dial feel).
 */

export type Vec3 = [number, number, number];

export const KEY_DIRECTIONS: Record<string, Vec3> = {
  ArrowRight: [1, 0, 0],
  ArrowLeft: [-1, 0, 0],
  ArrowUp: [0, 1, 0],
  ArrowDown: [0, -1, 0],
  PageUp: [0, 0, 1],
  PageDown: [0, 0, -1],
};

export const REPEAT_MS = 100;

export class JogInput {
  private held = new Map<string, number>();  // key -> last emit wall-clock ms
  constructor(private emit: (direction: Vec3) => void) {}

  keyDown(key: string, now: number): boolean {
    const dir = KEY_DIRECTIONS[key];
    if (dir === undefined) return false;
    if (!this.held.has(key)) {
      this.held.set(key, now);
      this.emit(dir);
    }
    return true;
  }

  keyUp(key: string): void {
    this.held.delete(key);
  }

  /** Drive from the render loop; re-emits held keys at 10 Hz. */
  poll(now: number): void {
    for (const [key, last] of this.held) {
      if (now - last >= REPEAT_MS) {
        this.held.set(key, now);
        this.emit(KEY_DIRECTIONS[key]);
      }
    }
  }
}

/** Trailing-edge debounce with a minimum spacing, for field refreshes. */
export class Debounced {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private lastRun = -Infinity;
  calls = 0;

  constructor(private fn: () => void, private waitMs = 500) {}

  request(now: number = Date.now()): void {
    if (this.timer !== null) return;    // already scheduled: coalesce
    const due = Math.max(0, this.waitMs - (now - this.lastRun));
    this.timer = setTimeout(() => {
      this.timer = null;
      this.lastRun = Date.now();
      this.calls += 1;
      this.fn();
    }, due);
  }

  cancel(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }
}
