export const PHASES = [
  "Drafting",
  "Finalized",
  "Generated",
  "Running",
  "Fixing",
  "Closed",
] as const;

export type Phase = (typeof PHASES)[number];

export const EVENT_KINDS = [
  "user_msg",
  "agent_msg",
  "tool_call",
  "tool_result",
  "artifact_saved",
  "phase_change",
  "error",
] as const;

export type EventKind = (typeof EVENT_KINDS)[number];

export type SessionEvent = {
  seq: number;
  kind: string;
  at: string;
  payload: Record<string, unknown>;
};

export function isPhase(value: unknown): value is Phase {
  return typeof value === "string" && (PHASES as readonly string[]).includes(value);
}

export function parseEvent(value: unknown): SessionEvent {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    throw new Error("event must be a JSON object");
  }
  const record = value as Record<string, unknown>;
  const { seq, kind, at, payload } = record;
  if (typeof seq !== "number" || !Number.isInteger(seq) || seq < 1) {
    throw new Error(`event seq must be a positive integer, got ${String(seq)}`);
  }
  if (typeof kind !== "string" || kind === "") {
    throw new Error(`event ${seq} has no kind`);
  }
  if (typeof at !== "string") {
    throw new Error(`event ${seq} has no timestamp`);
  }
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) {
    throw new Error(`event ${seq} payload must be an object`);
  }
  return { seq, kind, at, payload: payload as Record<string, unknown> };
}

export function parseEventLine(line: string): SessionEvent {
  let value: unknown;
  try {
    value = JSON.parse(line);
  } catch {
    throw new Error(`stream line is not JSON: ${line.slice(0, 80)}`);
  }
  return parseEvent(value);
}
