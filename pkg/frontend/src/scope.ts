// Canvas scope: 16 stacked lanes with montage labels, microvolt gridlines,
// and min/max-decimated traces. Gap buckets break the stroke; nothing is
// interpolated across missing data. Pausing freezes the view's right edge
// while the store keeps filling.

import { decimateMinMax, type TraceStore } from "./traces";

export interface ScopeOptions {
  windowSeconds: number; // 2..30
  uvPerDivision: number;
  visibleChannels: boolean[];
  montage: string[];
}

// The drawing surface subset the scope needs; tests substitute a recorder.
export interface Surface {
  canvasWidth: number;
  canvasHeight: number;
  clear(): void;
  line(x0: number, y0: number, x1: number, y1: number, style: string, width: number): void;
  polyline(points: { x: number; y: number }[], style: string, width: number): void;
  text(value: string, x: number, y: number, style: string): void;
}

export const DEFAULT_MONTAGE = [
  "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3",
  "C3", "Cz", "C4", "T4", "P3", "Pz", "P4", "O1",
];

const LABEL_GUTTER_PX = 44;
const GRID_STYLE = "#2a3142";
const LANE_STYLE = "#3a4156";
const TRACE_STYLE = "#6fe3a5";
const GAP_STYLE = "#e05b5b";
const TEXT_STYLE = "#9aa4bd";

export class Scope {
  paused = false;
  private frozenT: number | null = null;

  constructor(
    private readonly surface: Surface,
    readonly options: ScopeOptions,
  ) {}

  setPaused(paused: boolean, store: TraceStore): void {
    this.paused = paused;
    this.frozenT = paused ? store.latestT : null;
  }

  draw(store: TraceStore): void {
    const surface = this.surface;
    surface.clear();
    const lanes = this.options.visibleChannels
      .map((visible, ch) => (visible ? ch : -1))
      .filter((ch) => ch >= 0);
    if (lanes.length === 0) return;

    const laneHeight = surface.canvasHeight / lanes.length;
    const plotWidth = Math.max(surface.canvasWidth - LABEL_GUTTER_PX, 10);
    const t1 = this.paused && this.frozenT !== null ? this.frozenT : (store.latestT ?? 0);
    const uvHalfRange = (this.options.uvPerDivision * 4) / 2; // 4 divisions per lane

    for (let row = 0; row < lanes.length; row++) {
      const ch = lanes[row];
      const yMid = laneHeight * row + laneHeight / 2;
      surface.line(LABEL_GUTTER_PX, laneHeight * (row + 1), surface.canvasWidth,
        laneHeight * (row + 1), LANE_STYLE, 1);
      surface.line(LABEL_GUTTER_PX, yMid, surface.canvasWidth, yMid, GRID_STYLE, 1);
      surface.text(this.options.montage[ch] ?? `ch${ch + 1}`, 4, yMid, TEXT_STYLE);

      const samples = store.window(ch, this.options.windowSeconds, t1);
      const points = decimateMinMax(samples, Math.floor(plotWidth));
      let run: { x: number; y: number }[] = [];
      for (const point of points) {
        if (point.gap || Number.isNaN(point.min)) {
          if (run.length > 1) surface.polyline(run, TRACE_STYLE, 1.2);
          run = [];
          if (point.gap) {
            surface.line(LABEL_GUTTER_PX + point.x, laneHeight * row + 2,
              LABEL_GUTTER_PX + point.x, laneHeight * (row + 1) - 2, GAP_STYLE, 1);
          }
          continue;
        }
        const x = LABEL_GUTTER_PX + point.x;
        const yLo = yMid + (point.min / uvHalfRange) * (laneHeight / 2) * -1;
        const yHi = yMid + (point.max / uvHalfRange) * (laneHeight / 2) * -1;
        run.push({ x, y: yLo });
        if (yHi !== yLo) run.push({ x, y: yHi });
      }
      if (run.length > 1) surface.polyline(run, TRACE_STYLE, 1.2);
    }
    surface.text(`${this.options.windowSeconds}s window  ${this.options.uvPerDivision}uV/div`,
      LABEL_GUTTER_PX + 6, 12, TEXT_STYLE);
  }
}

/** Surface over a real 2D canvas context. */
export function canvasSurface(canvas: HTMLCanvasElement): Surface {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2D canvas context unavailable");
  return {
    get canvasWidth() {
      return canvas.width;
    },
    get canvasHeight() {
      return canvas.height;
    },
    clear() {
      ctx.fillStyle = "#151926";
      ctx.fillRect(0, 0, canvas.width, canvas.height);
    },
    line(x0, y0, x1, y1, style, width) {
      ctx.strokeStyle = style;
      ctx.lineWidth = width;
      ctx.beginPath();
      ctx.moveTo(x0, y0);
      ctx.lineTo(x1, y1);
      ctx.stroke();
    },
    polyline(points, style, width) {
      if (points.length < 2) return;
      ctx.strokeStyle = style;
      ctx.lineWidth = width;
      ctx.beginPath();
      ctx.moveTo(points[0].x, points[0].y);
      for (let i = 1; i < points.length; i++) ctx.lineTo(points[i].x, points[i].y);
      ctx.stroke();
    },
    text(value, x, y, style) {
      ctx.fillStyle = style;
      ctx.font = "10px monospace";
      ctx.fillText(value, x, y);
    },
  };
}
