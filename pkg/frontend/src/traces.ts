// Rolling per-channel sample storage for the scope. Batches append in seq
// order; a seq discontinuity (skipped batches) is stored as NaN samples so
// the renderer draws a break instead of interpolating across missing data.

import type { SamplesMessage } from "./messages";

export const N_CHANNELS = 16;

export class TraceStore {
  readonly sps: number;
  readonly capacity: number; // samples per channel
  private ring: Float64Array[];
  private nextSeq: number | null = null; // seq the next appended sample should have
  gapCount = 0;

  constructor(sps = 250, windowSeconds = 60) {
    this.sps = sps;
    this.capacity = Math.round(sps * windowSeconds);
    this.ring = Array.from({ length: N_CHANNELS }, () => {
      const buffer = new Float64Array(this.capacity);
      buffer.fill(Number.NaN);
      return buffer;
    });
  }

  /** Latest stored time in seconds, or null before any data. */
  get latestT(): number | null {
    return this.nextSeq === null ? null : this.nextSeq / this.sps;
  }

  append(batch: SamplesMessage): void {
    if (batch.channels.length !== N_CHANNELS) {
      throw new Error(`expected ${N_CHANNELS} channels, got ${batch.channels.length}`);
    }
    if (this.nextSeq !== null && batch.seq0 > this.nextSeq) {
      const missing = Math.min(batch.seq0 - this.nextSeq, this.capacity);
      for (let k = batch.seq0 - missing; k < batch.seq0; k++) {
        const slot = k % this.capacity;
        for (let ch = 0; ch < N_CHANNELS; ch++) this.ring[ch][slot] = Number.NaN;
      }
      this.gapCount += 1;
    }
    const n = batch.channels[0].length;
    for (let i = 0; i < n; i++) {
      const slot = (batch.seq0 + i) % this.capacity;
      for (let ch = 0; ch < N_CHANNELS; ch++) {
        this.ring[ch][slot] = batch.channels[ch][i];
      }
    }
    this.nextSeq = batch.seq0 + n;
  }

  /**
   * Samples of one channel (0-based) covering [t1 - seconds, t1), oldest
   * first. Times outside stored history come back as NaN.
   */
  window(channel: number, seconds: number, t1?: number): Float64Array {
    const end = t1 ?? this.latestT ?? 0;
    const n = Math.round(seconds * this.sps);
    const out = new Float64Array(n);
    out.fill(Number.NaN);
    if (this.nextSeq === null) return out;
    const endSeq = Math.round(end * this.sps);
    const startSeq = endSeq - n;
    const oldest = this.nextSeq - this.capacity;
    for (let i = 0; i < n; i++) {
      const seq = startSeq + i;
      if (seq < 0 || seq < oldest || seq >= this.nextSeq) continue;
      out[i] = this.ring[channel][seq % this.capacity];
    }
    return out;
  }
}

export interface DecimatedPoint {
  x: number; // pixel column
  min: number;
  max: number;
  gap: boolean;
}

/**
 * Min/max decimation to at most 2 points per horizontal pixel. A bucket
 * containing any NaN becomes a gap point so breaks stay visible at every
 * zoom level.
 */
export function decimateMinMax(values: ArrayLike<number>, pixels: number): DecimatedPoint[] {
  const n = values.length;
  if (pixels <= 0 || n === 0) return [];
  const out: DecimatedPoint[] = [];
  const perBucket = n / pixels;
  for (let px = 0; px < pixels; px++) {
    const start = Math.floor(px * perBucket);
    const end = Math.max(start + 1, Math.floor((px + 1) * perBucket));
    let lo = Number.POSITIVE_INFINITY;
    let hi = Number.NEGATIVE_INFINITY;
    let gap = false;
    for (let i = start; i < end && i < n; i++) {
      const v = values[i];
      if (Number.isNaN(v)) {
        gap = true;
      } else {
        if (v < lo) lo = v;
        if (v > hi) hi = v;
      }
    }
    if (lo > hi) {
      out.push({ x: px, min: Number.NaN, max: Number.NaN, gap: true });
    } else {
      out.push({ x: px, min: lo, max: hi, gap });
    }
  }
  return out;
}
