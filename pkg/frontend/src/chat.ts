// Chat panel: one reply bubble per turn, inspector refreshed after every
// exchange. Input stays disabled while a turn is in flight so a session
// never has two concurrent turns.

import { ApiError, BotlineClient, StateSnapshot } from "./api.js";
import { renderInspector } from "./inspector.js";

export type ChatPanel = {
  root: HTMLElement;
  send(text: string): Promise<void>;
  sessionId(): string | null;
};

export function createChatPanel(
  client: BotlineClient,
  opts: { userId: string; clock?: string; inspectorHost?: HTMLElement },
): ChatPanel {
  const root = document.createElement("div");
  root.className = "chat-panel";

  const transcript = document.createElement("div");
  transcript.className = "transcript";
  root.appendChild(transcript);

  const banner = document.createElement("div");
  banner.className = "banner";
  banner.hidden = true;
  root.appendChild(banner);

  const form = document.createElement("form");
  form.className = "composer";
  const input = document.createElement("input");
  input.type = "text";
  input.placeholder = "Describe the problem...";
  const button = document.createElement("button");
  button.type = "submit";
  button.textContent = "Send";
  form.appendChild(input);
  form.appendChild(button);
  root.appendChild(form);

  let sessionId: string | null = null;
  let inFlight = false;

  function bubble(text: string, who: "user" | "system"): void {
    const el = document.createElement("div");
    el.className = `bubble ${who}`;
    el.dataset.who = who;
    el.textContent = text;
    transcript.appendChild(el);
    transcript.scrollTop = transcript.scrollHeight;
  }

  function endSession(message: string): void {
    banner.hidden = false;
    banner.textContent = message;
    input.disabled = true;
    button.disabled = true;
  }

  async function refreshInspector(): Promise<void> {
    if (!sessionId || !opts.inspectorHost) return;
    const snapshot: StateSnapshot = await client.getState(sessionId);
    opts.inspectorHost.replaceChildren(renderInspector(snapshot));
  }

  async function ensureSession(): Promise<void> {
    if (sessionId) return;
    const info = await client.openSession(opts.userId, opts.clock);
    sessionId = info.session_id;
    bubble(info.greeting, "system");
    await refreshInspector();
  }

  async function send(text: string): Promise<void> {
    const trimmed = text.trim();
    if (!trimmed || inFlight) return;
    inFlight = true;
    input.disabled = true;
    button.disabled = true;
    try {
      await ensureSession();
      bubble(trimmed, "user");
      const reply = await client.sendMessage(sessionId!, trimmed);
      bubble(reply.reply, "system");
      await refreshInspector();
      if (reply.closed) {
        endSession("The dialogue has ended.");
        return;
      }
    } catch (err) {
      if (err instanceof ApiError && (err.status === 404 || err.status === 409)) {
        endSession("This session has ended. Reload to start a new one.");
        return;
      }
      bubble("Something went wrong talking to the service.", "system");
    } finally {
      inFlight = false;
      if (banner.hidden) {
        input.disabled = false;
        button.disabled = false;
      }
    }
  }

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const text = input.value;
    input.value = "";
    void send(text);
  });

  return { root, send, sessionId: () => sessionId };
}
