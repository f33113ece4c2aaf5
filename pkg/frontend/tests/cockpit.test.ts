import { beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient } from "../src/api";
import { Cockpit, renderSummaryTable, requiredElements } from "../src/cockpit";
import { DEFAULT_MONTAGE } from "../src/scope";
import { ConsoleState } from "../src/state";
import type { StatusDoc } from "../src/messages";

const PAGE = `
  <span id="status-line"></span><span id="error-line"></span>
  <select id="scenario-select"><option value="alpha_test">alpha_test</option></select>
  <button id="stream-button"></button>
  <input id="cycles-input" value="3" />
  <button id="session-button"></button>
  <select id="band-select"><option value="artifact_band">1-40</option></select>
  <div id="cue-banner"></div><div id="cue-countdown"></div>
  <div id="power-bars"></div><div id="event-ticker"></div>
  <div id="session-summary"></div>
`;

function statusDoc(overrides: Partial<StatusDoc> = {}): StatusDoc {
  return {
    mode: "idle",
    sps: null,
    gain: null,
    backend: null,
    scenario: null,
    frames: 0,
    dropped_total: 0,
    batches: 0,
    session: null,
    filters: { band: [1, 40], notch: false },
    subscribers: 0,
    ...overrides,
  };
}

describe("Cockpit", () => {
  beforeEach(() => {
    document.body.innerHTML = PAGE;
  });

  function make() {
    const api = new ApiClient("");
    const elements = requiredElements(document);
    const cockpit = new Cockpit(api, elements, [...DEFAULT_MONTAGE]);
    const state = new ConsoleState();
    return { api, cockpit, state, elements };
  }

  it("reflects confirmed state only: session button disabled until streaming", () => {
    const { cockpit, state, elements } = make();
    state.applySnapshot(statusDoc());
    cockpit.render(state);
    expect(elements.sessionButton.disabled).toBe(true);
    expect(elements.streamButton.textContent).toBe("Start stream");

    state.applySnapshot(statusDoc({ mode: "streaming", scenario: "alpha_test", sps: 250 }));
    cockpit.render(state);
    expect(elements.sessionButton.disabled).toBe(false);
    expect(elements.streamButton.textContent).toBe("Stop stream");
    expect(elements.statusLine.textContent).toContain("alpha_test");
  });

  it("shows the cue banner text for the active cue", () => {
    const { cockpit, state, elements } = make();
    state.applySnapshot(
      statusDoc({
        mode: "streaming",
        session: {
          name: "alpha_x1",
          record_id: "r",
          active: true,
          steps: [{ label: "eyes_closed", duration_s: 5 }],
          cue: {
            step_index: 0, label: "eyes_closed", step_remaining_s: 4.0,
            frames_fed: 250, total_frames: 2500,
          },
        },
      }),
    );
    cockpit.render(state);
    expect(elements.cueBanner.textContent).toBe("CLOSE EYES");
    expect(elements.countdown.textContent).toBe("4 s");
    state.apply({ type: "cue", label: "eyes_open", t_s: 5.0 });
    cockpit.render(state);
    expect(elements.cueBanner.textContent).toBe("OPEN EYES");
  });

  it("surfaces the service's conflict reason verbatim on illegal actions", async () => {
    const { cockpit, state, elements } = make();
    vi.stubGlobal(
      "fetch",
      vi.fn(async () => ({
        ok: false,
        status: 409,
        statusText: "Conflict",
        json: async () => ({ detail: "no stream running; start one first" }),
      })),
    );
    try {
      state.applySnapshot(statusDoc({ mode: "streaming" })); // let the click through
      cockpit.bind(state, async () => {});
      cockpit.render(state);
      elements.sessionButton.click();
      await vi.waitFor(() =>
        expect(elements.errorLine.textContent).toBe("no stream running; start one first"),
      );
    } finally {
      vi.unstubAllGlobals();
    }
  });

  it("renders alpha power bars scaled per channel", () => {
    const { cockpit, state, elements } = make();
    state.applySnapshot(statusDoc({ mode: "streaming" }));
    state.apply({
      type: "samples",
      seq0: 0,
      t0_s: 0,
      sps: 250,
      channels: Array.from({ length: 16 }, () => [0]),
      raw_available: true,
      alpha_power: Array.from({ length: 16 }, (_, i) => (i === 4 ? 750 : 0)),
    });
    cockpit.render(state);
    const bar = elements.powerBars.querySelector<HTMLElement>("#bar-4");
    expect(parseFloat(bar?.style.width ?? "0")).toBeCloseTo(50.0);
  });

  it("loads the post-session summary once per finished record", async () => {
    const { cockpit, state, elements } = make();
    const fetchMock = vi.fn(async () => ({
      ok: true,
      status: 200,
      statusText: "OK",
      json: async () => ({
        report: "alpha",
        header: ["channel", "label", "closed_power_uV2", "open_power_uV2", "ratio"],
        rows: [[1, "Fp1", 1250.5, 3.25, 384.77]],
      }),
    }));
    vi.stubGlobal("fetch", fetchMock);
    try {
      state.applySnapshot(
        statusDoc({ session: { name: "alpha_x1", record_id: "0001-alpha_x1", active: false } }),
      );
      cockpit.render(state);
      await vi.waitFor(() => expect(elements.summary.innerHTML).toContain("0001-alpha_x1"));
      expect(elements.summary.innerHTML).toContain("384.770");
      cockpit.render(state); // same finished record: no second fetch
      expect(fetchMock).toHaveBeenCalledTimes(1);
    } finally {
      vi.unstubAllGlobals();
    }
  });
});

describe("renderSummaryTable", () => {
  it("keeps the analysis numbers intact", () => {
    const html = renderSummaryTable("rec-1", {
      report: "alpha",
      header: ["channel", "ratio"],
      rows: [
        [1, 384.7701],
        [2, 2],
      ],
    });
    expect(html).toContain("<th>ratio</th>");
    expect(html).toContain("<td>384.770</td>");
    expect(html).toContain("<td>2</td>");
  });
});
