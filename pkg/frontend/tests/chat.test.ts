// Chat-panel conformance: driving the opening turns renders the service's
// replies and keeps the inspector equal to the state endpoint document.

import { beforeEach, describe, expect, it } from "vitest";

import { BotlineClient, StateSnapshot } from "../src/api.js";
import { createChatPanel } from "../src/chat.js";
import { flush, installFetchStub, recorded } from "./helpers.js";

function systemBubbles(root: HTMLElement): string[] {
  return Array.from(root.querySelectorAll(".bubble.system")).map((el) => el.textContent ?? "");
}

describe("chat panel", () => {
  let inspectorHost: HTMLElement;

  beforeEach(() => {
    document.body.innerHTML = "";
    inspectorHost = document.createElement("aside");
    document.body.appendChild(inspectorHost);
  });

  it("renders the brand question after the first report", async () => {
    installFetchStub();
    const panel = createChatPanel(new BotlineClient(""), {
      userId: "ui-user", clock: "2019-10-14 10:00", inspectorHost,
    });
    document.body.appendChild(panel.root);

    await panel.send("Air conditioner is not cooled.");
    const bubbles = systemBubbles(panel.root);
    expect(bubbles[0]).toBe("Hello, what can I do for you?");
    expect(bubbles[1]).toBe("OK. What brand is the air conditioner?");
  });

  it("keeps the inspector equal to the state document after each turn", async () => {
    installFetchStub();
    const panel = createChatPanel(new BotlineClient(""), {
      userId: "ui-user", clock: "2019-10-14 10:00", inspectorHost,
    });
    document.body.appendChild(panel.root);

    await panel.send("Air conditioner is not cooled.");
    let doc = recorded.state_after_u2 as StateSnapshot;
    doc.active_bots.forEach((name, i) => {
      expect(inspectorHost.querySelector(`[data-field='active_bots.${i}']`)!.textContent)
        .toBe(name);
    });

    await panel.send(
      "there are two air conditioners out of refrigeration. One is Hisense and the other is Haier.");
    doc = recorded.state_after_u4 as StateSnapshot;
    doc.active_bots.forEach((name, i) => {
      expect(inspectorHost.querySelector(`[data-field='active_bots.${i}']`)!.textContent)
        .toBe(name);
    });
    doc.device_memories.forEach((memory, i) => {
      for (const [attr, value] of Object.entries(memory)) {
        const el = inspectorHost.querySelector(`[data-field='device_memories.${i}.${attr}']`);
        expect(el, `device_memories.${i}.${attr}`).not.toBeNull();
        expect(el!.textContent).toBe(Array.isArray(value) ? value.join(" or ") : value);
      }
    });
    expect(inspectorHost.querySelectorAll(".memory-card").length)
      .toBe(doc.device_memories.length);
  });

  it("disables input while a turn is in flight", async () => {
    installFetchStub();
    const panel = createChatPanel(new BotlineClient(""), {
      userId: "ui-user", clock: "2019-10-14 10:00", inspectorHost,
    });
    document.body.appendChild(panel.root);
    const input = panel.root.querySelector("input")!;

    const pending = panel.send("Air conditioner is not cooled.");
    expect(input.disabled).toBe(true);
    await pending;
    expect(input.disabled).toBe(false);
  });

  it("shows the session-ended banner on 404", async () => {
    installFetchStub();
    const panel = createChatPanel(new BotlineClient(""), {
      userId: "ui-user", clock: "2019-10-14 10:00", inspectorHost,
    });
    document.body.appendChild(panel.root);
    await panel.send("Air conditioner is not cooled.");

    // the server forgot the session: next turn must surface the banner
    globalThis.fetch = (async () =>
      new Response(JSON.stringify({ detail: "unknown or expired session" }),
        { status: 404 })) as typeof fetch;
    await panel.send("hello?");
    await flush();
    const banner = panel.root.querySelector(".banner") as HTMLElement;
    expect(banner.hidden).toBe(false);
    expect(panel.root.querySelector("input")!.disabled).toBe(true);
  });
});
