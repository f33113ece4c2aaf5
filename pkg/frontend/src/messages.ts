// Message and status document shapes pushed by the acquisition service.

export interface SamplesMessage {
  type: "samples";
  seq0: number;
  t0_s: number;
  sps: number;
  channels: number[][]; // 16 arrays of display-filtered microvolts
  raw_available: boolean;
  alpha_power?: number[];
}

export interface CueMessage {
  type: "cue";
  label: string;
  t_s: number;
}

export interface EventMessage {
  type: "event";
  kind: string;
  channel: number;
  t_start_s: number;
  t_end_s: number;
  magnitude_uv: number;
}

export interface SessionStatus {
  name: string;
  record_id: string;
  active: boolean;
  total_frames?: number;
  incomplete?: boolean;
  steps?: { label: string; duration_s: number }[];
  cue?: {
    step_index: number;
    label: string | null;
    step_remaining_s: number;
    frames_fed: number;
    total_frames: number;
  };
}

export interface StatusDoc {
  mode: "idle" | "streaming";
  sps: number | null;
  gain: number | null;
  backend: string | null;
  scenario: string | null;
  frames: number;
  dropped_total: number;
  batches: number;
  session: SessionStatus | null;
  filters: { band: "raw" | number[]; notch: boolean };
  subscribers: number;
  last_stream?: {
    frames: number;
    batches: number;
    dropped_total: number;
    terminal: { clean: boolean; reason: string; error: string | null };
  } | null;
}

export interface StatusMessage extends StatusDoc {
  type: "status";
  skipped_batches?: number;
  skipped_total?: number;
  terminal?: { clean: boolean; reason: string; error: string | null };
}

export type StreamMessage = SamplesMessage | CueMessage | EventMessage | StatusMessage;

export function parseMessage(raw: string): StreamMessage {
  const data = JSON.parse(raw) as { type?: string };
  if (
    data.type === "samples" ||
    data.type === "cue" ||
    data.type === "event" ||
    data.type === "status"
  ) {
    return data as StreamMessage;
  }
  throw new Error(`unknown stream message type: ${String(data.type)}`);
}

export function cueBannerText(label: string | null): string {
  if (label === null) return "";
  if (label === "eyes_closed") return "CLOSE EYES";
  if (label === "eyes_open") return "OPEN EYES";
  return label.replace(/_/g, " ").toUpperCase();
}
