// Hand-rolled canvas strip charts: min/max envelope bars plus a line through
// the batch last-values, y axis in kPa. No chart library so the compiled
// modules load straight into the browser.

import { ChartRing } from "./buffers.js";

const PAD_LEFT = 42;
const PAD_BOTTOM = 18;
const PAD_TOP = 8;
const PAD_RIGHT = 8;

export class StripChart {
  private ctx: CanvasRenderingContext2D;

  constructor(
    private canvas: HTMLCanvasElement,
    private ring: ChartRing,
    private label: string,
    private color = "#2f81f7",
  ) {
    const ctx = canvas.getContext("2d");
    if (ctx === null) {
      throw new Error("canvas 2d context unavailable");
    }
    this.ctx = ctx;
  }

  paint(): void {
    const { ctx, canvas } = this;
    const w = canvas.width;
    const h = canvas.height;
    ctx.clearRect(0, 0, w, h);
    ctx.fillStyle = "#11161d";
    ctx.fillRect(0, 0, w, h);

    const points = this.ring.snapshot();
    const plotW = w - PAD_LEFT - PAD_RIGHT;
    const plotH = h - PAD_TOP - PAD_BOTTOM;

    let yMax = 5;
    for (const p of points) {
      if (p.max > yMax) yMax = p.max;
    }
    yMax = Math.ceil(yMax * 1.15);

    const tEnd = points.length > 0 ? points[points.length - 1].t : 0;
    const tStart = tEnd - this.ring.windowSeconds;
    const x = (t: number) => PAD_LEFT + ((t - tStart) / this.ring.windowSeconds) * plotW;
    const y = (v: number) => PAD_TOP + plotH - (v / yMax) * plotH;

    // Grid and axis labels
    ctx.strokeStyle = "#2a3038";
    ctx.fillStyle = "#8b949e";
    ctx.font = "10px sans-serif";
    ctx.textAlign = "right";
    for (let i = 0; i <= 4; i++) {
      const v = (yMax * i) / 4;
      const yy = y(v);
      ctx.beginPath();
      ctx.moveTo(PAD_LEFT, yy);
      ctx.lineTo(w - PAD_RIGHT, yy);
      ctx.stroke();
      ctx.fillText(v.toFixed(0), PAD_LEFT - 4, yy + 3);
    }
    ctx.textAlign = "left";
    ctx.fillText(`${this.label} (kPa)`, PAD_LEFT + 4, PAD_TOP + 10);
    if (points.length > 0) {
      ctx.textAlign = "center";
      ctx.fillText(`${tStart.toFixed(0)} s`, PAD_LEFT, h - 5);
      ctx.fillText(`${tEnd.toFixed(0)} s`, w - PAD_RIGHT, h - 5);
    }
    if (points.length === 0) {
      return;
    }

    // Envelope bars, then the last-value line on top.
    ctx.strokeStyle = this.color + "55";
    ctx.beginPath();
    for (const p of points) {
      const xx = x(p.t);
      ctx.moveTo(xx, y(p.min));
      ctx.lineTo(xx, y(p.max));
    }
    ctx.stroke();

    ctx.strokeStyle = this.color;
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    points.forEach((p, i) => {
      const xx = x(p.t);
      const yy = y(p.last);
      if (i === 0) {
        ctx.moveTo(xx, yy);
      } else {
        ctx.lineTo(xx, yy);
      }
    });
    ctx.stroke();
    ctx.lineWidth = 1;
  }
}
