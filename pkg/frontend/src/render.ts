import { ACTIONS, type ActionName, type ViewModel } from "./viewmodel.js";

export function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;")
    .replaceAll('"', "&quot;")
    .replaceAll("'", "&#39;");
}

const ACTION_LABELS: Record<ActionName, string> = {
  finalize: "Finalize spec",
  generate: "Generate code",
  run: "Launch",
  probe: "Probe endpoints",
  fix: "Fix",
  close: "Close",
};

export function renderActions(model: ViewModel): string {
  const buttons = ACTIONS.map((action) => {
    const disabled = model.actions[action] ? "" : " disabled";
    return (
      `<button type="button" data-action="${action}"${disabled}>` +
      `${escapeHtml(ACTION_LABELS[action])}</button>`
    );
  });
  return `<nav class="actions">${buttons.join("")}</nav>`;
}

export function renderChat(model: ViewModel): string {
  const lines = model.chat.map(
    (line) =>
      `<p class="chat-line" data-seq="${line.seq}">` +
      `<b>${escapeHtml(line.who)}</b> ${escapeHtml(line.text)}</p>`,
  );
  return `<section class="chat">${lines.join("")}</section>`;
}

export function renderActivity(model: ViewModel): string {
  const lines = model.activity.map(
    (line) => `<li data-seq="${line.seq}">${escapeHtml(line.text)}</li>`,
  );
  return `<ul class="activity">${lines.join("")}</ul>`;
}

export function renderArtifacts(model: ViewModel): string {
  const refs = [...model.specs, ...model.trees].map(
    (ref) =>
      `<li>${escapeHtml(ref.kind)} v${ref.version ?? "?"} ` +
      `<code>${escapeHtml(ref.path)}</code></li>`,
  );
  const probe =
    model.probe === null
      ? ""
      : `<p class="probe ${model.probe.allOk ? "ok" : "bad"}">` +
        `probe: ${model.probe.allOk ? "all endpoints conform" : "findings"}</p>`;
  return `<section class="artifacts"><ul>${refs.join("")}</ul>${probe}</section>`;
}

export function renderErrors(model: ViewModel): string {
  if (model.errors.length === 0) {
    return "";
  }
  const lines = model.errors.map(
    (line) => `<li data-seq="${line.seq}">${escapeHtml(line.text)}</li>`,
  );
  return `<ul class="errors">${lines.join("")}</ul>`;
}

export function renderApp(model: ViewModel): string {
  return (
    `<header><span class="phase">${escapeHtml(model.phase)}</span>` +
    `<span class="fixes">fix attempts: ${model.fixAttempts}</span></header>` +
    renderActions(model) +
    renderChat(model) +
    renderActivity(model) +
    renderArtifacts(model) +
    renderErrors(model)
  );
}
