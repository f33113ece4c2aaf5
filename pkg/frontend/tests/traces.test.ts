import { describe, expect, it } from "vitest";

import type { SamplesMessage } from "../src/messages";
import { decimateMinMax, TraceStore } from "../src/traces";

function batch(seq0: number, n = 250, value?: (i: number, ch: number) => number): SamplesMessage {
  const make = value ?? ((i: number) => i + seq0);
  return {
    type: "samples",
    seq0,
    t0_s: seq0 / 250,
    sps: 250,
    channels: Array.from({ length: 16 }, (_, ch) =>
      Array.from({ length: n }, (_, i) => make(i, ch)),
    ),
    raw_available: true,
  };
}

describe("TraceStore", () => {
  it("appends contiguous batches and reports the latest time", () => {
    const store = new TraceStore(250, 10);
    store.append(batch(0));
    store.append(batch(250));
    expect(store.latestT).toBe(2.0);
    expect(store.gapCount).toBe(0);
    const view = store.window(0, 1.0);
    expect(view.length).toBe(250);
    expect(view[0]).toBe(250);
    expect(view[249]).toBe(499);
  });

  it("marks skipped batches as NaN gaps, never interpolating", () => {
    const store = new TraceStore(250, 10);
    store.append(batch(0));
    store.append(batch(500)); // one batch missing
    expect(store.gapCount).toBe(1);
    const view = store.window(0, 3.0);
    const middle = view.slice(250, 500);
    expect(Array.from(middle).every((v) => Number.isNaN(v))).toBe(true);
    expect(view[0]).toBe(0);
    expect(view[500]).toBe(500);
  });

  it("returns NaN for times before recorded history", () => {
    const store = new TraceStore(250, 10);
    store.append(batch(250));
    const view = store.window(0, 2.0);
    expect(Number.isNaN(view[0])).toBe(true);
    expect(view[250]).toBe(250);
  });

  it("wraps its ring without mixing old and new data", () => {
    const store = new TraceStore(250, 2); // 500-sample capacity
    for (let k = 0; k < 5; k++) store.append(batch(k * 250));
    const view = store.window(0, 2.0);
    expect(view[0]).toBe(750);
    expect(view[499]).toBe(1249);
  });

  it("rejects malformed channel counts", () => {
    const store = new TraceStore(250, 2);
    const bad = batch(0);
    bad.channels = bad.channels.slice(0, 3);
    expect(() => store.append(bad)).toThrow(/16 channels/);
  });
});

describe("decimateMinMax", () => {
  it("emits at most two points per pixel", () => {
    const values = Array.from({ length: 1000 }, (_, i) => Math.sin(i / 10));
    const points = decimateMinMax(values, 100);
    expect(points.length).toBe(100);
    for (const point of points) {
      expect(point.min).toBeLessThanOrEqual(point.max);
    }
  });

  it("preserves extremes within each bucket", () => {
    const values = new Array(100).fill(0);
    values[37] = 42;
    values[62] = -17;
    const points = decimateMinMax(values, 10);
    expect(points[3].max).toBe(42);
    expect(points[6].min).toBe(-17);
  });

  it("flags buckets containing NaN as gaps", () => {
    const values = new Array(100).fill(1.0);
    values[50] = Number.NaN;
    const points = decimateMinMax(values, 10);
    expect(points[5].gap).toBe(true);
    expect(points[4].gap).toBe(false);
  });

  it("handles fewer samples than pixels", () => {
    const points = decimateMinMax([1, 2, 3], 10);
    expect(points.length).toBe(10);
    expect(points.some((p) => p.max === 3)).toBe(true);
  });
});
