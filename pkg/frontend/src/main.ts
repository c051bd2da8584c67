/**
 * Browser entry point: binds real DOM events onto the console controller.
 * All behavior lives in the DOM-free modules; this file only translates
 * events and paints state.
 */

import { OperatorConsole } from "./console";
import { Draw2D } from "./scene";
import { Transport } from "./socket";

function webSocketTransport(url: string): Transport {
  const ws = new WebSocket(url);
  const t: Transport = {
    send: (d) => ws.send(d),
    close: () => ws.close(),
    onopen: null,
    onclose: null,
    onmessage: null,
  };
  ws.onopen = () => t.onopen?.();
  ws.onclose = () => t.onclose?.();
  ws.onmessage = (ev) => t.onmessage?.({ data: String(ev.data) });
  return t;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

export function boot(): void {
  const canvas = el<HTMLCanvasElement>("scene");
  const statusEl = el<HTMLElement>("status");
  const meterEl = el<HTMLElement>("haptic-fill");
  const poseEl = el<HTMLElement>("pose");
  const forceEl = el<HTMLElement>("force");
  const connectBtn = el<HTMLButtonElement>("connect");
  const disconnectBtn = el<HTMLButtonElement>("disconnect");

  const url = `ws://${location.host}/ws`;
  const console_ = new OperatorConsole(url, webSocketTransport, {
    onState: (s) => {
      statusEl.textContent = s.status + (s.clutched ? " · clutched" : "");
      statusEl.className = s.status;
      meterEl.style.width = `${(s.hapticLevel * 100).toFixed(0)}%`;
      if (s.robot !== null) {
        const p = s.robot.tool_p;
        poseEl.textContent = p.map((v) => v.toFixed(3)).join("  ");
      }
      if (s.wrench !== null) {
        const f = s.wrench.force;
        const mag = Math.hypot(f[0], f[1], f[2]);
        forceEl.textContent = `${mag.toFixed(1)} N${s.wrench.in_contact ? " (contact)" : ""}`;
      }
      connectBtn.disabled = s.status !== "disconnected";
      disconnectBtn.disabled = s.status === "disconnected";
    },
  });

  connectBtn.addEventListener("click", () => console_.connect());
  disconnectBtn.addEventListener("click", () => console_.disconnect());

  canvas.addEventListener("pointerdown", (e) => {
    canvas.setPointerCapture(e.pointerId);
    console_.input.pointerDown(e.clientX, e.clientY);
  });
  canvas.addEventListener("pointermove", (e) =>
    console_.input.pointerMove(e.clientX, e.clientY, e.shiftKey),
  );
  canvas.addEventListener("pointerup", () => console_.input.pointerUp());
  canvas.addEventListener("pointercancel", () => console_.input.pointerUp());
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    console_.input.wheel(e.deltaY);
  });
  window.addEventListener("blur", () => console_.input.windowBlur());
  window.addEventListener("keydown", (e) => {
    if (e.key === " " && !e.repeat) console_.input.holdDown();
  });
  window.addEventListener("keyup", (e) => {
    if (e.key === " ") console_.input.holdUp();
  });

  const ctx = canvas.getContext("2d") as unknown as Draw2D;
  const frame = () => {
    console_.tick();
    console_.scene.render(ctx);
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

if (typeof document !== "undefined" && document.getElementById("scene") !== null) {
  boot();
}
