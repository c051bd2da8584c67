/**
 * On-screen stand-in for a vibrotactile actuator.
 *
 * Impulse events show up as an immediate spike that decays away in well under
 * 300 ms; cyclic events sustain their level as long as they keep arriving.
 * With no events for a second the meter reads exactly zero.
 */

import { HapticMsg } from "./protocol";

export interface HapticMeterOptions {
  /** exponential decay time constant for impulse spikes, seconds */
  impulseDecayS?: number;
  /** a cyclic level is held this long past the last cyclic event, seconds */
  cyclicHoldS?: number;
  /** any activity older than this reads as zero, seconds */
  silenceS?: number;
}

export class HapticMeter {
  readonly impulseDecayS: number;
  readonly cyclicHoldS: number;
  readonly silenceS: number;

  eventsSeen = 0;

  private impulsePeak = 0;
  private impulseT = -Infinity;
  private cyclicLevel = 0;
  private cyclicT = -Infinity;

  constructor(opts: HapticMeterOptions = {}) {
    this.impulseDecayS = opts.impulseDecayS ?? 0.05;
    this.cyclicHoldS = opts.cyclicHoldS ?? 0.25;
    this.silenceS = opts.silenceS ?? 1.0;
  }

  /** Feed one haptic event, stamped with the local clock in seconds. */
  onEvent(msg: HapticMsg, now: number): void {
    this.eventsSeen += 1;
    if (msg.pattern === "impulse") {
      this.impulsePeak = Math.max(msg.intensity, this.level(now));
      this.impulseT = now;
    } else {
      this.cyclicLevel = msg.intensity;
      this.cyclicT = now;
    }
  }

  /** Current meter reading in [0, 1] for the given local time. */
  level(now: number): number {
    let out = 0;
    const dtImp = now - this.impulseT;
    if (dtImp >= 0 && dtImp < this.silenceS) {
      out = this.impulsePeak * Math.exp(-dtImp / this.impulseDecayS);
      // a spike 5 time constants old contributes <1% and just looks like noise
      if (dtImp > 5 * this.impulseDecayS) out = 0;
    }
    const dtCyc = now - this.cyclicT;
    if (dtCyc >= 0 && dtCyc < Math.min(this.cyclicHoldS, this.silenceS)) {
      out = Math.max(out, this.cyclicLevel);
    }
    return Math.min(1, Math.max(0, out));
  }
}
