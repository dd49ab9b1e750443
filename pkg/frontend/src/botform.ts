// Enterprise customization form: submit a bot spec, show the created ids
// (leaf plus generated ancestors) and refresh the catalog tree.

import { ApiError, BotlineClient, BotNode, BotSubmission } from "./api.js";

export type BotForm = {
  root: HTMLElement;
  submit(doc: BotSubmission): Promise<string[]>;
  refreshTree(): Promise<void>;
};

function depthOf(botId: string): number {
  return botId.split("_").filter((c) => c !== "0").length;
}

export function renderTree(nodes: BotNode[]): HTMLElement {
  const list = document.createElement("ul");
  list.className = "bot-tree";
  for (const node of nodes) {
    const li = document.createElement("li");
    li.dataset.botId = node.bot_id;
    li.dataset.origin = node.origin;
    li.style.marginLeft = `${depthOf(node.bot_id)}em`;
    li.textContent = `${node.bot_id}  ${node.display_name}`;
    list.appendChild(li);
  }
  return list;
}

export function createBotForm(client: BotlineClient): BotForm {
  const root = document.createElement("div");
  root.className = "bot-form";

  const form = document.createElement("form");
  const fields: Record<string, HTMLInputElement> = {};
  for (const name of ["service_type", "device_type", "brand", "display_name", "trigger_phrases"]) {
    const label = document.createElement("label");
    label.textContent = name.split("_").join(" ");
    const input = document.createElement("input");
    input.name = name;
    input.type = "text";
    label.appendChild(input);
    form.appendChild(label);
    fields[name] = input;
  }
  const requirements = document.createElement("textarea");
  requirements.name = "requirements";
  requirements.placeholder = '[{"attr": "phone", "code": 1}]';
  form.appendChild(requirements);

  const submitButton = document.createElement("button");
  submitButton.type = "submit";
  submitButton.textContent = "Register bot";
  form.appendChild(submitButton);
  root.appendChild(form);

  const error = document.createElement("div");
  error.className = "form-error";
  error.hidden = true;
  root.appendChild(error);

  const created = document.createElement("div");
  created.className = "created-ids";
  root.appendChild(created);

  const treeHost = document.createElement("div");
  treeHost.className = "tree-host";
  root.appendChild(treeHost);

  async function refreshTree(): Promise<void> {
    const listing = await client.listBots();
    treeHost.replaceChildren(renderTree(listing.bots));
  }

  async function submit(doc: BotSubmission): Promise<string[]> {
    error.hidden = true;
    error.textContent = "";
    try {
      const result = await client.registerBot(doc);
      created.replaceChildren();
      for (const id of result.created) {
        const chip = document.createElement("span");
        chip.className = "created-id";
        chip.dataset.botId = id;
        chip.textContent = id;
        created.appendChild(chip);
      }
      await refreshTree();
      return result.created;
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        const detail = (err.body as { detail?: { field?: string; message?: string } }).detail;
        error.hidden = false;
        error.textContent = detail?.field
          ? `${detail.field}: ${detail.message ?? "invalid"}`
          : "invalid submission";
        return [];
      }
      throw err;
    }
  }

  form.addEventListener("submit", (ev) => {
    ev.preventDefault();
    let reqs: BotSubmission["requirements"] = [];
    if (requirements.value.trim()) {
      try {
        reqs = JSON.parse(requirements.value);
      } catch {
        error.hidden = false;
        error.textContent = "requirements: not valid JSON";
        return;
      }
    }
    void submit({
      service_type: fields.service_type.value,
      device_type: fields.device_type.value,
      brand: fields.brand.value,
      display_name: fields.display_name.value || undefined,
      trigger_phrases: fields.trigger_phrases.value
        .split(",")
        .map((p) => p.trim())
        .filter(Boolean),
      requirements: reqs,
      metadata: {},
    });
  });

  return { root, submit, refreshTree };
}
