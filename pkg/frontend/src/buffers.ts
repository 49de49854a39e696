// Bounded plot buffers. Each telemetry batch collapses to one point per
// channel (min/max envelope plus last value), so 30 s of history at the
// 20 Hz batch cadence is only 600 entries however long the run gets.

export interface EnvelopePoint {
  t: number;
  min: number;
  max: number;
  last: number;
}

export class ChartRing {
  private points: EnvelopePoint[] = [];

  constructor(
    readonly windowSeconds: number = 30,
    readonly maxPoints: number = 600,
  ) {}

  push(point: EnvelopePoint): void {
    this.points.push(point);
    if (this.points.length > this.maxPoints) {
      this.points.splice(0, this.points.length - this.maxPoints);
    }
    const horizon = point.t - this.windowSeconds;
    let firstKept = 0;
    while (firstKept < this.points.length && this.points[firstKept].t < horizon) {
      firstKept += 1;
    }
    if (firstKept > 0) {
      this.points.splice(0, firstKept);
    }
  }

  get length(): number {
    return this.points.length;
  }

  latest(): EnvelopePoint | null {
    return this.points.length > 0 ? this.points[this.points.length - 1] : null;
  }

  snapshot(): readonly EnvelopePoint[] {
    return this.points;
  }

  clear(): void {
    this.points = [];
  }
}

/** Collapse one telemetry batch into per-channel envelope points. */
export function summarizeBatch(
  t0: number,
  rows: number[][],
  nChannels: number,
): EnvelopePoint[] {
  const out: EnvelopePoint[] = [];
  for (let ch = 0; ch < nChannels; ch++) {
    let lo = Infinity;
    let hi = -Infinity;
    let last = 0;
    for (const row of rows) {
      const v = row[ch];
      if (v < lo) lo = v;
      if (v > hi) hi = v;
      last = v;
    }
    out.push({ t: t0, min: lo, max: hi, last });
  }
  return out;
}
