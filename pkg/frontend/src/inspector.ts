// Session-state inspector: a pure projection of GET /sessions/{id}/state.
// Every rendered value carries data attributes so tests (and humans with
// devtools) can compare the DOM against the server document field by field.

import type { StateSnapshot } from "./api.js";

function joinValue(value: string | string[]): string {
  return Array.isArray(value) ? value.join(" or ") : value;
}

export function renderInspector(snapshot: StateSnapshot): HTMLElement {
  const root = document.createElement("div");
  root.className = "inspector";
  root.dataset.sessionId = snapshot.session_id;
  root.dataset.closingState = snapshot.closing_state;

  const queue = document.createElement("section");
  queue.className = "inspector-queue";
  const qh = document.createElement("h3");
  qh.textContent = "Active-bot queue";
  queue.appendChild(qh);
  const ql = document.createElement("ol");
  snapshot.active_bots.forEach((name, i) => {
    const li = document.createElement("li");
    li.dataset.field = `active_bots.${i}`;
    li.dataset.botId = snapshot.active_bot_ids[i] ?? "";
    li.textContent = name;
    ql.appendChild(li);
  });
  queue.appendChild(ql);
  root.appendChild(queue);

  const devices = document.createElement("section");
  devices.className = "inspector-devices";
  const dh = document.createElement("h3");
  dh.textContent = "Device memories";
  devices.appendChild(dh);
  snapshot.device_memories.forEach((memory, i) => {
    const card = document.createElement("dl");
    card.className = "memory-card";
    card.dataset.memoryIndex = String(i);
    for (const [attr, value] of Object.entries(memory)) {
      const dt = document.createElement("dt");
      dt.textContent = attr;
      const dd = document.createElement("dd");
      dd.dataset.field = `device_memories.${i}.${attr}`;
      dd.textContent = joinValue(value);
      card.appendChild(dt);
      card.appendChild(dd);
    }
    devices.appendChild(card);
  });
  root.appendChild(devices);

  const user = document.createElement("section");
  user.className = "inspector-user";
  const uh = document.createElement("h3");
  uh.textContent = "User memory";
  user.appendChild(uh);
  const ul = document.createElement("dl");
  for (const [attr, value] of Object.entries(snapshot.user_memory)) {
    const dt = document.createElement("dt");
    dt.textContent = attr;
    const dd = document.createElement("dd");
    dd.dataset.field = `user_memory.${attr}`;
    dd.textContent = joinValue(value);
    ul.appendChild(dt);
    ul.appendChild(dd);
  }
  user.appendChild(ul);
  root.appendChild(user);

  const fsm = document.createElement("section");
  fsm.className = "inspector-fsm";
  const fh = document.createElement("h3");
  fh.textContent = "Appointments";
  fsm.appendChild(fh);
  for (const [provider, st] of Object.entries(snapshot.appointments)) {
    const row = document.createElement("div");
    row.dataset.field = `appointments.${provider}`;
    row.dataset.phase = st.phase;
    row.textContent = `${provider}: ${st.phase}${st.time ? " @ " + st.time : ""}`;
    fsm.appendChild(row);
  }
  root.appendChild(fsm);
  return root;
}

// Read the rendered DOM back into the snapshot's shape (used by conformance
// tests to prove the inspector adds or infers nothing).
export function inspectorToDocument(root: HTMLElement): {
  active_bots: string[];
  device_memories: Record<string, string | string[]>[];
  user_memory: Record<string, string | string[]>;
} {
  const bots = Array.from(root.querySelectorAll<HTMLElement>("[data-field^='active_bots.']"))
    .map((el) => el.textContent ?? "");

  const memories: Record<string, string | string[]>[] = [];
  for (const card of root.querySelectorAll<HTMLElement>(".memory-card")) {
    const memory: Record<string, string | string[]> = {};
    for (const dd of card.querySelectorAll<HTMLElement>("dd[data-field]")) {
      const field = dd.dataset.field!;
      const attr = field.split(".").pop()!;
      const text = dd.textContent ?? "";
      memory[attr] = text.includes(" or ") ? text.split(" or ") : text;
    }
    memories.push(memory);
  }

  const user: Record<string, string | string[]> = {};
  for (const dd of root.querySelectorAll<HTMLElement>("dd[data-field^='user_memory.']")) {
    const attr = dd.dataset.field!.split(".").pop()!;
    const text = dd.textContent ?? "";
    user[attr] = text.includes(" or ") ? text.split(" or ") : text;
  }
  return { active_bots: bots, device_memories: memories, user_memory: user };
}
