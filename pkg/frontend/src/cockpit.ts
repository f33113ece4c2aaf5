// Session cockpit: stream/session controls, the cue banner, per-channel
// alpha power bars, the artifact event ticker, and the post-session summary.
// Buttons reflect confirmed service state only; every action round-trips
// through the REST surface and errors surface the service's reason verbatim.

import { ApiError, type AnalysisTable, type ApiClient } from "./api";
import { cueBannerText } from "./messages";
import type { ConsoleState } from "./state";

export interface CockpitElements {
  streamButton: HTMLButtonElement;
  sessionButton: HTMLButtonElement;
  scenarioSelect: HTMLSelectElement;
  cyclesInput: HTMLInputElement;
  bandSelect: HTMLSelectElement;
  cueBanner: HTMLElement;
  countdown: HTMLElement;
  statusLine: HTMLElement;
  errorLine: HTMLElement;
  powerBars: HTMLElement;
  eventTicker: HTMLElement;
  summary: HTMLElement;
}

export function requiredElements(root: Document): CockpitElements {
  const get = <T extends HTMLElement>(id: string): T => {
    const el = root.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    streamButton: get<HTMLButtonElement>("stream-button"),
    sessionButton: get<HTMLButtonElement>("session-button"),
    scenarioSelect: get<HTMLSelectElement>("scenario-select"),
    cyclesInput: get<HTMLInputElement>("cycles-input"),
    bandSelect: get<HTMLSelectElement>("band-select"),
    cueBanner: get("cue-banner"),
    countdown: get("cue-countdown"),
    statusLine: get("status-line"),
    errorLine: get("error-line"),
    powerBars: get("power-bars"),
    eventTicker: get("event-ticker"),
    summary: get("session-summary"),
  };
}

const POWER_BAR_FULL_UV2 = 1500; // 50 uV alpha tone ~= 1250 uV^2

export class Cockpit {
  private summaryShownFor: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly el: CockpitElements,
    private readonly montage: string[],
  ) {
    this.el.powerBars.innerHTML = montage
      .map(
        (label, i) =>
          `<div class="bar-row"><span class="bar-label">${label}</span>` +
          `<div class="bar-track"><div class="bar-fill" id="bar-${i}"></div></div></div>`,
      )
      .join("");
  }

  bind(state: ConsoleState, refresh: () => Promise<void>): void {
    this.el.streamButton.addEventListener("click", () => {
      void this.guard(async () => {
        if (state.streaming) {
          await this.api.stopStream();
        } else {
          await this.api.startStream({
            backend: "simulated",
            scenario: this.el.scenarioSelect.value,
            pace: "realtime",
          });
        }
        await refresh();
      });
    });
    this.el.sessionButton.addEventListener("click", () => {
      void this.guard(async () => {
        if (state.sessionActive) {
          await this.api.stopSession();
        } else {
          await this.api.startSession("alpha", Number(this.el.cyclesInput.value) || 3);
        }
        await refresh();
      });
    });
    this.el.bandSelect.addEventListener("change", () => {
      void this.guard(async () => {
        await this.api.setFilters(this.el.bandSelect.value as "raw" | string);
        await refresh();
      });
    });
  }

  private async guard(action: () => Promise<void>): Promise<void> {
    this.el.errorLine.textContent = "";
    try {
      await action();
    } catch (error) {
      // the spec for this surface: show the service's reason, unedited
      this.el.errorLine.textContent =
        error instanceof ApiError ? error.detail : String(error);
    }
  }

  render(state: ConsoleState): void {
    const streaming = state.streaming;
    this.el.streamButton.textContent = streaming ? "Stop stream" : "Start stream";
    this.el.sessionButton.textContent = state.sessionActive ? "Stop session" : "Start session";
    this.el.sessionButton.disabled = !streaming;
    this.el.scenarioSelect.disabled = streaming;

    const status = state.status;
    this.el.statusLine.textContent = status
      ? `${status.mode}${status.scenario ? ` · ${status.scenario}` : ""}` +
        `${status.sps ? ` · ${status.sps} sps` : ""}` +
        (state.skippedBatches ? ` · ${state.skippedBatches} skipped` : "") +
        (state.connected ? "" : " · reconnecting…")
      : "connecting…";

    this.el.cueBanner.textContent = cueBannerText(state.cue.label);
    this.el.cueBanner.classList.toggle("cue-active", state.cue.label !== null);
    this.el.countdown.textContent =
      state.cue.remainingS !== null ? `${state.cue.remainingS.toFixed(0)} s` : "";

    for (let i = 0; i < this.montage.length; i++) {
      const fill = this.el.powerBars.querySelector<HTMLElement>(`#bar-${i}`);
      if (fill) {
        const fraction = Math.min((state.alphaPower[i] ?? 0) / POWER_BAR_FULL_UV2, 1);
        fill.style.width = `${(fraction * 100).toFixed(1)}%`;
      }
    }

    this.el.eventTicker.innerHTML = state.events
      .slice(-8)
      .reverse()
      .map(
        (event) =>
          `<div class="ticker-row">${event.kind} ch${event.channel} ` +
          `@${event.t_start_s.toFixed(2)}s (${event.magnitude_uv.toFixed(0)} uV)</div>`,
      )
      .join("");

    const finished = state.lastFinishedRecordId;
    if (finished && finished !== this.summaryShownFor) {
      this.summaryShownFor = finished;
      void this.loadSummary(finished);
    }
  }

  private async loadSummary(recordId: string): Promise<void> {
    try {
      const table = await this.api.recordAnalysis(recordId, "alpha");
      this.el.summary.innerHTML = renderSummaryTable(recordId, table);
    } catch (error) {
      this.el.summary.textContent =
        error instanceof ApiError ? error.detail : String(error);
    }
  }
}

/**
 * Post-session summary rendering. The numbers come straight from the
 * service's analysis endpoint (the same computation behind the CLI table);
 * the UI only formats them.
 */
export function renderSummaryTable(recordId: string, table: AnalysisTable): string {
  const head = table.header.map((h) => `<th>${h}</th>`).join("");
  const rows = table.rows
    .map(
      (row) =>
        `<tr>${row
          .map((cell) =>
            typeof cell === "number" && !Number.isInteger(cell)
              ? `<td>${cell.toPrecision(6)}</td>`
              : `<td>${cell}</td>`,
          )
          .join("")}</tr>`,
    )
    .join("");
  return (
    `<div class="summary-title">session ${recordId} · ${table.report} report</div>` +
    `<table><thead><tr>${head}</tr></thead><tbody>${rows}</tbody></table>`
  );
}
