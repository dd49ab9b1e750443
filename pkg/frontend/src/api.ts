// Typed client for the botline HTTP API.

export type SessionInfo = {
  session_id: string;
  greeting: string;
};

export type MessageReply = {
  reply: string;
  closed: boolean;
};

export type DeviceMemory = Record<string, string | string[]>;

export type StateSnapshot = {
  session_id: string;
  user_id: string;
  clock: string;
  active_bots: string[];
  active_bot_ids: string[];
  device_memories: DeviceMemory[];
  user_memory: Record<string, string | string[]>;
  appointments: Record<string, { phase: string; time: string | null }>;
  closing_state: string;
};

export type BotNode = {
  bot_id: string;
  display_name: string;
  origin: string;
  parent: string | null;
  children: string[];
};

export type BotSubmission = {
  service_type: string;
  device_type: string;
  brand: string;
  display_name?: string;
  type_display_name?: string;
  trigger_phrases: string[];
  requirements: { attr: string; code: number; restrict?: { exact: string } }[];
  metadata: Record<string, unknown>;
};

export class ApiError extends Error {
  constructor(public status: number, public body: unknown) {
    super(`api error ${status}`);
  }
}

async function request<T>(base: string, method: string, path: string, body?: unknown): Promise<T> {
  const resp = await fetch(base + path, {
    method,
    headers: body !== undefined ? { "Content-Type": "application/json" } : undefined,
    body: body !== undefined ? JSON.stringify(body) : undefined,
  });
  const text = await resp.text();
  const parsed = text ? JSON.parse(text) : {};
  if (!resp.ok) throw new ApiError(resp.status, parsed);
  return parsed as T;
}

export class BotlineClient {
  constructor(private base: string = "") {}

  openSession(userId: string, clock?: string): Promise<SessionInfo> {
    const body: Record<string, string> = { user_id: userId };
    if (clock) body.clock = clock;
    return request<SessionInfo>(this.base, "POST", "/sessions", body);
  }

  sendMessage(sessionId: string, text: string): Promise<MessageReply> {
    return request<MessageReply>(this.base, "POST", `/sessions/${sessionId}/messages`, { text });
  }

  getState(sessionId: string): Promise<StateSnapshot> {
    return request<StateSnapshot>(this.base, "GET", `/sessions/${sessionId}/state`);
  }

  closeSession(sessionId: string): Promise<{ closed: boolean }> {
    return request<{ closed: boolean }>(this.base, "DELETE", `/sessions/${sessionId}`);
  }

  registerBot(doc: BotSubmission): Promise<{ created: string[] }> {
    return request<{ created: string[] }>(this.base, "POST", "/bots", doc);
  }

  listBots(): Promise<{ bots: BotNode[] }> {
    return request<{ bots: BotNode[] }>(this.base, "GET", "/bots");
  }
}
