import { ApiClient } from "./api.js";
import { renderApp } from "./render.js";
import { streamEvents, type StreamHandle } from "./stream.js";
import {
  applyEvent,
  initialViewModel,
  type ActionName,
  type ViewModel,
} from "./viewmodel.js";

/** Browser glue: everything interesting lives in the pure modules. */
export function mount(rootEl: HTMLElement, baseUrl: string): void {
  const api = new ApiClient(baseUrl);
  let model: ViewModel = initialViewModel();
  let sessionId: string | null = null;
  let stream: StreamHandle | null = null;

  const paint = () => {
    rootEl.querySelector(".app")!.innerHTML = renderApp(model);
  };

  rootEl.innerHTML =
    '<div class="app"></div>' +
    '<form class="say"><input name="text" placeholder="Describe the service">' +
    "<button>Send</button></form>";
  paint();

  const attach = (id: string) => {
    sessionId = id;
    stream = streamEvents({
      baseUrl,
      sessionId: id,
      after: model.lastSeq,
      follow: true,
      onEvent: (event) => {
        model = applyEvent(model, event);
        paint();
      },
    });
    stream.done.catch((error) => {
      console.error("event stream lost", error);
    });
  };

  const act: Record<ActionName, () => Promise<unknown>> = {
    finalize: () => api.finalize(sessionId!),
    generate: () => api.generate(sessionId!),
    run: () => api.run(sessionId!),
    probe: () => api.probe(sessionId!),
    fix: () => api.fix(sessionId!, "see the latest logs"),
    close: () => api.close(sessionId!),
  };

  rootEl.addEventListener("click", (event) => {
    const button = (event.target as HTMLElement).closest("[data-action]");
    if (button === null || sessionId === null) {
      return;
    }
    const action = button.getAttribute("data-action") as ActionName;
    act[action]().catch((error) => console.error(`${action} failed`, error));
  });

  rootEl.querySelector(".say")!.addEventListener("submit", (event) => {
    event.preventDefault();
    const input = rootEl.querySelector<HTMLInputElement>("input[name=text]")!;
    const text = input.value.trim();
    if (text === "") {
      return;
    }
    input.value = "";
    const send = async () => {
      if (sessionId === null) {
        const created = await api.createSession();
        attach(created.session_id);
      }
      await api.sendMessage(sessionId!, text);
    };
    send().catch((error) => console.error("send failed", error));
  });

  window.addEventListener("beforeunload", () => stream?.stop());
}
