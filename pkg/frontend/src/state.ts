// The console's mirror of the rig. Everything displayed derives from
// received frames; nothing is simulated locally.

import { ChartRing, summarizeBatch } from "./buffers.js";
import { StateFrame, TelemetryFrame } from "./protocol.js";

export const N_CHANNELS = 5;

export interface ChannelNumbers {
  last: number;
  min: number;
  max: number;
  mean: number;
}

export class ConsoleState {
  rig: StateFrame | null = null;
  rings: ChartRing[] = [];
  stats: ChannelNumbers[] = [];
  framesSeen = 0;

  constructor(readonly nChannels: number = N_CHANNELS) {
    for (let i = 0; i < nChannels; i++) {
      this.rings.push(new ChartRing());
      this.stats.push({ last: 0, min: 0, max: 0, mean: 0 });
    }
  }

  applyState(frame: StateFrame): void {
    this.rig = frame;
  }

  applyTelemetry(frame: TelemetryFrame): void {
    if (frame.rows.length === 0) {
      return;
    }
    this.framesSeen += 1;
    const points = summarizeBatch(frame.t0, frame.rows, this.nChannels);
    for (let ch = 0; ch < this.nChannels; ch++) {
      this.rings[ch].push(points[ch]);
      this.stats[ch] = windowNumbers(this.rings[ch]);
    }
  }

  clearPlots(): void {
    for (const ring of this.rings) {
      ring.clear();
    }
  }
}

function windowNumbers(ring: ChartRing): ChannelNumbers {
  const points = ring.snapshot();
  let lo = Infinity;
  let hi = -Infinity;
  let sum = 0;
  for (const p of points) {
    if (p.min < lo) lo = p.min;
    if (p.max > hi) hi = p.max;
    sum += p.last;
  }
  const last = points.length > 0 ? points[points.length - 1].last : 0;
  return {
    last,
    min: points.length > 0 ? lo : 0,
    max: points.length > 0 ? hi : 0,
    mean: points.length > 0 ? sum / points.length : 0,
  };
}
