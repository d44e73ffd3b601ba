import { isPhase, type Phase, type SessionEvent } from "./events.js";

export const ACTIONS = [
  "finalize",
  "generate",
  "run",
  "probe",
  "fix",
  "close",
] as const;

export type ActionName = (typeof ACTIONS)[number];

const ACTION_PHASES: Record<ActionName, readonly Phase[]> = {
  finalize: ["Drafting", "Finalized"],
  generate: ["Finalized", "Generated"],
  run: ["Generated", "Running", "Fixing"],
  probe: ["Running"],
  fix: ["Running", "Fixing"],
  close: ["Drafting", "Finalized", "Generated", "Running", "Fixing"],
};

export function allowedActions(phase: Phase): Record<ActionName, boolean> {
  const allowed = {} as Record<ActionName, boolean>;
  for (const action of ACTIONS) {
    allowed[action] = ACTION_PHASES[action].includes(phase);
  }
  return allowed;
}

export type ChatLine = {
  seq: number;
  who: string;
  text: string;
};

export type ActivityLine = {
  seq: number;
  text: string;
};

export type ArtifactRef = {
  kind: string;
  version: number | null;
  path: string;
  digest: string | null;
};

export type ProbeSummary = {
  allOk: boolean;
  path: string;
};

export type ViewModel = {
  phase: Phase;
  lastSeq: number;
  chat: ChatLine[];
  activity: ActivityLine[];
  specs: ArtifactRef[];
  trees: ArtifactRef[];
  probe: ProbeSummary | null;
  fixAttempts: number;
  errors: ActivityLine[];
  actions: Record<ActionName, boolean>;
};

export function initialViewModel(): ViewModel {
  return {
    phase: "Drafting",
    lastSeq: 0,
    chat: [],
    activity: [],
    specs: [],
    trees: [],
    probe: null,
    fixAttempts: 0,
    errors: [],
    actions: allowedActions("Drafting"),
  };
}

function str(value: unknown): string {
  return typeof value === "string" ? value : "";
}

function describeToolResult(payload: Record<string, unknown>): string {
  const name = str(payload["name"]);
  const result = payload["result"];
  const ok =
    typeof result === "object" && result !== null
      ? (result as Record<string, unknown>)["ok"] === true
      : false;
  return `${ok ? "ok" : "failed"} ${name}`;
}

function asArtifact(payload: Record<string, unknown>): ArtifactRef {
  return {
    kind: str(payload["artifact"]),
    version: typeof payload["version"] === "number" ? payload["version"] : null,
    path: str(payload["path"]),
    digest: typeof payload["digest"] === "string" ? payload["digest"] : null,
  };
}

/** Fold one event into the view. Pure: the input model is not touched.
 *
 * Events must arrive gapless and in order; the stream client deduplicates
 * on reconnect, so a regression or gap here is a real bug upstream and is
 * loud rather than absorbed. */
export function applyEvent(model: ViewModel, event: SessionEvent): ViewModel {
  if (event.seq !== model.lastSeq + 1) {
    throw new Error(
      `event log out of order: expected seq ${model.lastSeq + 1}, got ${event.seq}`,
    );
  }
  const next: ViewModel = {
    ...model,
    lastSeq: event.seq,
    chat: model.chat,
    activity: model.activity,
    specs: model.specs,
    trees: model.trees,
    errors: model.errors,
  };
  const payload = event.payload;
  switch (event.kind) {
    case "user_msg": {
      next.chat = [...model.chat, { seq: event.seq, who: "you", text: str(payload["text"]) }];
      break;
    }
    case "agent_msg": {
      next.chat = [
        ...model.chat,
        { seq: event.seq, who: str(payload["role"]) || "agent", text: str(payload["text"]) },
      ];
      break;
    }
    case "tool_call": {
      const actor = str(payload["actor"]);
      const name = str(payload["name"]);
      next.activity = [...model.activity, { seq: event.seq, text: `${actor} -> ${name}` }];
      if (actor === "fix_loop" && name === "update_json") {
        next.fixAttempts = model.fixAttempts + 1;
      }
      break;
    }
    case "tool_result": {
      next.activity = [
        ...model.activity,
        { seq: event.seq, text: describeToolResult(payload) },
      ];
      break;
    }
    case "artifact_saved": {
      const artifact = asArtifact(payload);
      if (artifact.kind === "spec") {
        next.specs = [...model.specs, artifact];
      } else if (artifact.kind === "tree") {
        next.trees = [...model.trees, artifact];
      } else if (artifact.kind === "probe_report") {
        next.probe = { allOk: payload["all_ok"] === true, path: artifact.path };
      }
      next.activity = [
        ...model.activity,
        { seq: event.seq, text: `saved ${artifact.kind} ${artifact.path}` },
      ];
      break;
    }
    case "phase_change": {
      const target = payload["to"];
      if (!isPhase(target)) {
        throw new Error(`event ${event.seq} names unknown phase ${String(target)}`);
      }
      next.phase = target;
      next.actions = allowedActions(target);
      next.activity = [
        ...model.activity,
        { seq: event.seq, text: `phase ${str(payload["from"])} -> ${target}` },
      ];
      break;
    }
    case "error": {
      next.errors = [
        ...model.errors,
        { seq: event.seq, text: `${str(payload["type"])}: ${str(payload["message"])}` },
      ];
      break;
    }
    default: {
      next.activity = [...model.activity, { seq: event.seq, text: `[${event.kind}]` }];
      break;
    }
  }
  return next;
}

export function reduceLog(
  events: readonly SessionEvent[],
  start?: ViewModel,
): ViewModel {
  let model = start ?? initialViewModel();
  for (const event of events) {
    model = applyEvent(model, event);
  }
  return model;
}
