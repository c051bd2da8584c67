/**
 * Point-cloud viewport.
 *
 * Keeps the latest strided cloud per camera and projects it orthographically
 * onto a canvas-like 2D context.  An empty cloud payload keeps the previous
 * frame on screen rather than blanking the view.
 */

import { CloudMsg } from "./protocol";

/** The minimal 2D drawing surface the view needs (fakeable in tests). */
export interface Draw2D {
  fillStyle: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
}

export interface SceneViewOptions {
  width?: number;
  height?: number;
  /** meters of world space mapped across the viewport width */
  span?: number;
  pointSizePx?: number;
}

export class SceneView {
  readonly width: number;
  readonly height: number;
  readonly span: number;
  readonly pointSizePx: number;

  framesKept = 0;
  emptySkipped = 0;

  private clouds = new Map<number, CloudMsg>();

  constructor(opts: SceneViewOptions = {}) {
    this.width = opts.width ?? 640;
    this.height = opts.height ?? 480;
    this.span = opts.span ?? 2.0;
    this.pointSizePx = opts.pointSizePx ?? 2;
  }

  onCloud(msg: CloudMsg): void {
    if (msg.points.length === 0) {
      this.emptySkipped += 1;
      return;
    }
    this.clouds.set(msg.camera, msg);
    this.framesKept += 1;
  }

  cloudFor(camera: number): CloudMsg | undefined {
    return this.clouds.get(camera);
  }

  get totalPoints(): number {
    let n = 0;
    for (const c of this.clouds.values()) n += c.points.length;
    return n;
  }

  /** Project x (right) and z (up) of every cached point onto the surface. */
  render(ctx: Draw2D): number {
    ctx.clearRect(0, 0, this.width, this.height);
    ctx.fillStyle = "#7fd4ff";
    const scale = this.width / this.span;
    let drawn = 0;
    for (const cloud of this.clouds.values()) {
      for (const [x, , z] of cloud.points) {
        const px = this.width / 2 + x * scale;
        const py = this.height / 2 - z * scale;
        if (px < 0 || px >= this.width || py < 0 || py >= this.height) continue;
        ctx.fillRect(px, py, this.pointSizePx, this.pointSizePx);
        drawn += 1;
      }
    }
    return drawn;
  }
}
