// Page wiring: chat + inspector on the left, customization form on the right.

import { BotlineClient } from "./api.js";
import { createBotForm } from "./botform.js";
import { createChatPanel } from "./chat.js";

export function mountApp(host: HTMLElement, baseUrl?: string): void {
  const params = new URLSearchParams(window.location.search);
  const client = new BotlineClient(baseUrl ?? params.get("api") ?? "");

  const layout = document.createElement("div");
  layout.className = "layout";

  const left = document.createElement("div");
  left.className = "pane chat-pane";
  const inspectorHost = document.createElement("aside");
  inspectorHost.className = "pane inspector-pane";
  const right = document.createElement("div");
  right.className = "pane form-pane";

  const chat = createChatPanel(client, {
    userId: params.get("user") ?? "web-user",
    clock: params.get("clock") ?? undefined,
    inspectorHost,
  });
  left.appendChild(chat.root);

  const form = createBotForm(client);
  right.appendChild(form.root);
  void form.refreshTree().catch(() => {
    // the tree pane stays empty until the service is reachable
  });

  layout.appendChild(left);
  layout.appendChild(inspectorHost);
  layout.appendChild(right);
  host.replaceChildren(layout);
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  mountApp(document.getElementById("app")!);
}
