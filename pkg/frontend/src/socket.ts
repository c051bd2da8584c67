/**
 * Thin connection wrapper with deliberately *manual* lifecycle.
 *
 * There is no automatic reconnect: a dropped link leaves the console in the
 * "disconnected" state until the user explicitly connects again, so the
 * robot can never resume moving by surprise.
 */

import { ClientMsg, parseServerMessage, ServerMsg } from "./protocol";

export type ConnectionStatus = "disconnected" | "connecting" | "connected";

/** The subset of the WebSocket API the console relies on (fakeable in tests). */
export interface Transport {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onmessage: ((ev: { data: string }) => void) | null;
}

export type TransportFactory = (url: string) => Transport;

export interface SocketEvents {
  status?: (s: ConnectionStatus) => void;
  message?: (m: ServerMsg) => void;
}

export class ConsoleSocket {
  status: ConnectionStatus = "disconnected";
  droppedOutbound = 0;
  badInbound = 0;

  private transport: Transport | null = null;

  constructor(
    private readonly url: string,
    private readonly factory: TransportFactory,
    private readonly events: SocketEvents = {},
  ) {}

  /** Explicit user action; never called automatically. */
  connect(): void {
    if (this.status !== "disconnected") return;
    this.setStatus("connecting");
    const t = this.factory(this.url);
    this.transport = t;
    t.onopen = () => this.setStatus("connected");
    t.onclose = () => this.handleClosed();
    t.onmessage = (ev) => this.handleMessage(ev.data);
  }

  disconnect(): void {
    this.transport?.close();
    // onclose may or may not fire synchronously depending on the transport
    if (this.status !== "disconnected") this.handleClosed();
  }

  /** Returns false (and drops the message) unless connected. */
  send(msg: ClientMsg): boolean {
    if (this.status !== "connected" || this.transport === null) {
      this.droppedOutbound += 1;
      return false;
    }
    this.transport.send(JSON.stringify(msg));
    return true;
  }

  private handleClosed(): void {
    this.transport = null;
    this.setStatus("disconnected");
  }

  private handleMessage(data: string): void {
    let raw: unknown;
    try {
      raw = JSON.parse(data);
    } catch {
      this.badInbound += 1;
      return;
    }
    const msg = parseServerMessage(raw);
    if (msg === null) {
      this.badInbound += 1;
      return;
    }
    this.events.message?.(msg);
  }

  private setStatus(s: ConnectionStatus): void {
    if (s === this.status) return;
    this.status = s;
    this.events.status?.(s);
  }
}
