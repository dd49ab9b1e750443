// The inspector is a pure projection of the state document: every field the
// server sends appears verbatim, and nothing else appears.

import { describe, expect, it } from "vitest";

import type { StateSnapshot } from "../src/api.js";
import { renderInspector } from "../src/inspector.js";
import { recorded } from "./helpers.js";

function joined(value: string | string[]): string {
  return Array.isArray(value) ? value.join(" or ") : value;
}

function assertFieldByField(root: HTMLElement, snapshot: StateSnapshot): void {
  snapshot.active_bots.forEach((name, i) => {
    const el = root.querySelector(`[data-field='active_bots.${i}']`);
    expect(el, `active_bots.${i}`).not.toBeNull();
    expect(el!.textContent).toBe(name);
  });
  expect(root.querySelectorAll("[data-field^='active_bots.']").length)
    .toBe(snapshot.active_bots.length);

  snapshot.device_memories.forEach((memory, i) => {
    for (const [attr, value] of Object.entries(memory)) {
      const el = root.querySelector(`[data-field='device_memories.${i}.${attr}']`);
      expect(el, `device_memories.${i}.${attr}`).not.toBeNull();
      expect(el!.textContent).toBe(joined(value));
    }
  });
  expect(root.querySelectorAll(".memory-card").length)
    .toBe(snapshot.device_memories.length);

  for (const [attr, value] of Object.entries(snapshot.user_memory)) {
    const el = root.querySelector(`[data-field='user_memory.${attr}']`);
    expect(el, `user_memory.${attr}`).not.toBeNull();
    expect(el!.textContent).toBe(joined(value));
  }
  expect(root.querySelectorAll("[data-field^='user_memory.']").length)
    .toBe(Object.keys(snapshot.user_memory).length);
}

describe("inspector", () => {
  it("renders the recorded post-U2 state verbatim", () => {
    const snapshot = recorded.state_after_u2 as StateSnapshot;
    const root = renderInspector(snapshot);
    assertFieldByField(root, snapshot);
    expect(root.dataset.closingState).toBe("open");
  });

  it("renders the recorded post-U4 state verbatim (two instances)", () => {
    const snapshot = recorded.state_after_u4 as StateSnapshot;
    const root = renderInspector(snapshot);
    assertFieldByField(root, snapshot);
    const bots = Array.from(root.querySelectorAll("[data-field^='active_bots.']"))
      .map((el) => el.textContent);
    expect(bots).toEqual([
      "Hisense air conditioner reports failure",
      "Haier air conditioner reports failure",
    ]);
  });

  it("renders multi-value attributes with their markers intact", () => {
    const snapshot = {
      ...(recorded.state_after_u4 as StateSnapshot),
      user_memory: { phone: ["12345678910", "12345678911 (standby)"] },
    } as StateSnapshot;
    const root = renderInspector(snapshot);
    const el = root.querySelector("[data-field='user_memory.phone']");
    expect(el!.textContent).toBe("12345678910 or 12345678911 (standby)");
  });
});
