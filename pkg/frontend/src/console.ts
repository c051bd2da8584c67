/**
 * Operator console controller: wires the socket, input mapper, haptic meter
 * and scene view together behind a DOM-free API so the whole stack can be
 * driven synthetically in tests.
 *
 * Safety posture: the clutch is press-and-hold only, any disconnect drops it
 * locally at once, and reconnecting always takes an explicit user action.
 */

import { ConnectionStatus, ConsoleSocket, TransportFactory } from "./socket";
import { InputMapper, InputMapperOptions } from "./input";
import { HapticMeter } from "./haptics";
import { SceneView } from "./scene";
import { MetricsMsg, RobotMsg, ServerMsg, WrenchMsg } from "./protocol";

export interface ConsoleState {
  status: ConnectionStatus;
  robot: RobotMsg | null;
  wrench: WrenchMsg | null;
  metrics: MetricsMsg | null;
  hapticLevel: number;
  clutched: boolean;
  holding: boolean;
}

export interface OperatorConsoleOptions {
  input?: InputMapperOptions;
  now?: () => number;
  onState?: (s: ConsoleState) => void;
}

export class OperatorConsole {
  readonly socket: ConsoleSocket;
  readonly input: InputMapper;
  readonly meter: HapticMeter;
  readonly scene: SceneView;

  private robot: RobotMsg | null = null;
  private wrench: WrenchMsg | null = null;
  private metrics: MetricsMsg | null = null;
  private readonly now: () => number;
  private readonly onState?: (s: ConsoleState) => void;

  constructor(url: string, factory: TransportFactory, opts: OperatorConsoleOptions = {}) {
    this.now = opts.now ?? (() => performance.now() / 1000);
    this.onState = opts.onState;
    this.socket = new ConsoleSocket(url, factory, {
      status: (s) => this.handleStatus(s),
      message: (m) => this.handleMessage(m),
    });
    const socket = this.socket;
    this.input = new InputMapper(
      {
        send: (m) => socket.send(m),
        get connected() {
          return socket.status === "connected";
        },
      },
      this.now,
      opts.input,
    );
    this.meter = new HapticMeter();
    this.scene = new SceneView();
  }

  /** Explicit user action; the console never reconnects on its own. */
  connect(): void {
    this.socket.connect();
  }

  disconnect(): void {
    this.socket.disconnect();
  }

  /** One render-loop step: flush input, recompute derived state. */
  tick(): void {
    this.input.tick();
    this.emitState();
  }

  state(): ConsoleState {
    return {
      status: this.socket.status,
      robot: this.robot,
      wrench: this.wrench,
      metrics: this.metrics,
      hapticLevel: this.meter.level(this.now()),
      clutched: this.input.clutched,
      holding: this.input.holding,
    };
  }

  private handleStatus(s: ConnectionStatus): void {
    if (s === "disconnected") {
      // local disengage: no message can or should be sent on a dead link
      this.input.connectionLost();
    }
    this.emitState();
  }

  private handleMessage(m: ServerMsg): void {
    switch (m.type) {
      case "robot":
        this.robot = m;
        break;
      case "wrench":
        this.wrench = m;
        break;
      case "haptic":
        this.meter.onEvent(m, this.now());
        break;
      case "cloud":
        this.scene.onCloud(m);
        break;
      case "metrics":
        this.metrics = m;
        break;
    }
    this.emitState();
  }

  private emitState(): void {
    this.onState?.(this.state());
  }
}
