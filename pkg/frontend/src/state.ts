// Console state folded from GET /status snapshots and stream messages.
// Everything here must be reconstructable from a fresh snapshot plus the
// live stream, so a page refresh mid-session reattaches seamlessly.

import type {
  EventMessage,
  SessionStatus,
  StatusDoc,
  StatusMessage,
  StreamMessage,
} from "./messages";

export const EVENT_TICKER_LIMIT = 50;

export interface CueView {
  label: string | null;
  remainingS: number | null;
  stepIndex: number | null;
}

export class ConsoleState {
  status: StatusDoc | null = null;
  connected = false;
  cue: CueView = { label: null, remainingS: null, stepIndex: null };
  alphaPower: number[] = new Array(16).fill(0);
  events: EventMessage[] = [];
  skippedBatches = 0;
  lastFinishedRecordId: string | null = null;
  latestBatchT: number | null = null;
  private cueStartedAtT: number | null = null;

  /** Rebuild from a status snapshot (page load or refresh). */
  applySnapshot(doc: StatusDoc): void {
    this.status = doc;
    const session = doc.session;
    if (session?.active && session.cue && session.cue.label !== null) {
      this.cue = {
        label: session.cue.label,
        remainingS: session.cue.step_remaining_s,
        stepIndex: session.cue.step_index,
      };
      this.cueStartedAtT = null;
    } else if (!session?.active) {
      this.cue = { label: null, remainingS: null, stepIndex: null };
      if (session && !session.active) this.lastFinishedRecordId = session.record_id;
    }
  }

  apply(message: StreamMessage): void {
    switch (message.type) {
      case "samples": {
        const n = message.channels[0]?.length ?? 0;
        this.latestBatchT = message.t0_s + n / message.sps;
        if (message.alpha_power) this.alphaPower = message.alpha_power;
        this.tickCue();
        break;
      }
      case "cue": {
        const index = this.nextStepIndex(message.label);
        const steps = this.currentSteps();
        const step = index !== null && steps ? steps[index] : undefined;
        this.cue = {
          label: message.label,
          remainingS: step ? step.duration_s : null,
          stepIndex: index,
        };
        this.cueStartedAtT = message.t_s;
        break;
      }
      case "event": {
        this.events.push(message);
        if (this.events.length > EVENT_TICKER_LIMIT) {
          this.events.splice(0, this.events.length - EVENT_TICKER_LIMIT);
        }
        break;
      }
      case "status": {
        this.applyStatusMessage(message);
        break;
      }
    }
  }

  private applyStatusMessage(message: StatusMessage): void {
    if (message.skipped_batches) this.skippedBatches += message.skipped_batches;
    const { type: _type, skipped_batches: _s, skipped_total: _st, terminal: _t, ...doc } = message;
    this.applySnapshot(doc as StatusDoc);
  }

  private currentSteps(): SessionStatus["steps"] | undefined {
    return this.status?.session?.steps ?? undefined;
  }

  private nextStepIndex(label: string): number | null {
    const steps = this.currentSteps();
    if (!steps) return null;
    const from = this.cue.stepIndex === null ? 0 : this.cue.stepIndex + 1;
    for (let i = from; i < steps.length; i++) {
      if (steps[i].label === label) return i;
    }
    const first = steps.findIndex((s) => s.label === label);
    return first >= 0 ? first : null;
  }

  private tickCue(): void {
    if (this.cue.label === null || this.cueStartedAtT === null || this.latestBatchT === null) {
      return;
    }
    const steps = this.currentSteps();
    const index = this.cue.stepIndex;
    if (!steps || index === null || index >= steps.length) return;
    const elapsed = this.latestBatchT - this.cueStartedAtT;
    this.cue = {
      ...this.cue,
      remainingS: Math.max(steps[index].duration_s - elapsed, 0),
    };
  }

  get sessionActive(): boolean {
    return Boolean(this.status?.session?.active);
  }

  get streaming(): boolean {
    return this.status?.mode === "streaming";
  }
}
