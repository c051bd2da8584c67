/**
 * Pointer/keyboard to leader-input mapping.
 *
 * The pointer button *is* the clutch: press-and-hold engages, release (or a
 * window blur, as a safety) disengages.  Drag maps to x/y translation at a
 * configurable mm-per-pixel scale, the scroll wheel to z, and modifier-drag
 * to rotation.  Outgoing input messages are coalesced to at most `maxRateHz`
 * and, while the clutch is held, a zero-delta keepalive is emitted so the
 * server-side watchdog keeps seeing the stream even when the hand is still.
 *
 * Nothing is ever sent while disconnected.
 */

import { ClientMsg, clutchMessage, holdMessage, inputMessage } from "./protocol";

export interface InputMapperOptions {
  /** translation scale, millimeters of device motion per screen pixel */
  mmPerPx?: number;
  /** z translation per wheel delta unit, meters */
  scrollScale?: number;
  /** rotation per pixel of modifier-drag, radians */
  radPerPx?: number;
  /** outgoing input message rate cap */
  maxRateHz?: number;
  /** zero-delta keepalive period while clutched, seconds */
  keepaliveS?: number;
}

export interface InputSink {
  send(msg: ClientMsg): boolean;
  readonly connected: boolean;
}

export class InputMapper {
  readonly mmPerPx: number;
  readonly scrollScale: number;
  readonly radPerPx: number;
  readonly minSendInterval: number;
  readonly keepaliveS: number;

  clutched = false;
  holding = false;

  private lastX = 0;
  private lastY = 0;
  private accDp: [number, number, number] = [0, 0, 0];
  private accDrot: [number, number, number] = [0, 0, 0];
  private lastSendT = -Infinity;

  constructor(
    private readonly sink: InputSink,
    private readonly now: () => number,
    opts: InputMapperOptions = {},
  ) {
    this.mmPerPx = opts.mmPerPx ?? 1.0;
    this.scrollScale = opts.scrollScale ?? 1e-4;
    this.radPerPx = opts.radPerPx ?? 0.005;
    this.minSendInterval = 1.0 / (opts.maxRateHz ?? 60.0);
    this.keepaliveS = opts.keepaliveS ?? 0.05;
  }

  pointerDown(x: number, y: number): void {
    if (!this.sink.connected) return;
    this.lastX = x;
    this.lastY = y;
    this.clutched = true;
    this.sink.send(clutchMessage(true));
    this.lastSendT = this.now();
  }

  pointerMove(x: number, y: number, rotateModifier = false): void {
    if (!this.clutched) return;
    const dx = x - this.lastX;
    const dy = y - this.lastY;
    this.lastX = x;
    this.lastY = y;
    if (!this.sink.connected) return;
    if (rotateModifier) {
      // horizontal drag yaws, vertical drag pitches
      this.accDrot[2] += dx * this.radPerPx;
      this.accDrot[0] += -dy * this.radPerPx;
    } else {
      const s = this.mmPerPx / 1000.0;
      this.accDp[0] += dx * s;
      this.accDp[1] += -dy * s; // screen y grows downward
    }
    this.maybeFlush();
  }

  wheel(deltaY: number): void {
    if (!this.clutched || !this.sink.connected) return;
    this.accDp[2] += -deltaY * this.scrollScale;
    this.maybeFlush();
  }

  pointerUp(): void {
    this.releaseClutch();
  }

  /** Safety: losing window focus while clutched must release the robot. */
  windowBlur(): void {
    if (this.clutched) this.releaseClutch();
  }

  /** A disconnect drops the local press state without emitting anything. */
  connectionLost(): void {
    this.clutched = false;
    this.holding = false;
    this.accDp = [0, 0, 0];
    this.accDrot = [0, 0, 0];
  }

  holdDown(): void {
    if (!this.sink.connected || this.holding) return;
    this.holding = true;
    this.sink.send(holdMessage(true));
  }

  holdUp(): void {
    if (!this.holding) return;
    this.holding = false;
    if (this.sink.connected) this.sink.send(holdMessage(false));
  }

  /** Called from the render loop: flushes pending deltas and keepalives. */
  tick(): void {
    if (!this.sink.connected) return;
    const t = this.now();
    if (this.pendingMagnitude() > 0 && t - this.lastSendT >= this.minSendInterval) {
      this.flush(t);
    } else if (this.clutched && t - this.lastSendT >= this.keepaliveS) {
      this.sink.send(inputMessage([0, 0, 0]));
      this.lastSendT = t;
    }
  }

  private releaseClutch(): void {
    if (!this.clutched) return;
    this.clutched = false;
    if (this.sink.connected) {
      this.flush(this.now());
      this.sink.send(clutchMessage(false));
    }
    this.accDp = [0, 0, 0];
    this.accDrot = [0, 0, 0];
  }

  private pendingMagnitude(): number {
    return (
      Math.abs(this.accDp[0]) +
      Math.abs(this.accDp[1]) +
      Math.abs(this.accDp[2]) +
      Math.abs(this.accDrot[0]) +
      Math.abs(this.accDrot[1]) +
      Math.abs(this.accDrot[2])
    );
  }

  private maybeFlush(): void {
    const t = this.now();
    if (t - this.lastSendT >= this.minSendInterval) this.flush(t);
  }

  private flush(t: number): void {
    if (this.pendingMagnitude() === 0) return;
    const rot = this.accDrot.some((v) => v !== 0)
      ? ([...this.accDrot] as [number, number, number])
      : undefined;
    this.sink.send(inputMessage([...this.accDp] as [number, number, number], rot));
    this.accDp = [0, 0, 0];
    this.accDrot = [0, 0, 0];
    this.lastSendT = t;
  }
}
