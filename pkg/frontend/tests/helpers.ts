// Fetch stub backed by responses recorded from the real service
// (tests/fixtures/recorded.json). Routes are matched like the server would.

import recorded from "./fixtures/recorded.json";

export { recorded };

type Handler = (body: unknown) => { status: number; body: unknown };

export function installFetchStub(): { calls: { method: string; path: string }[] } {
  const sessionId: string = (recorded.open_session as { session_id: string }).session_id;
  const calls: { method: string; path: string }[] = [];
  let turn = 0;

  const routes: Record<string, Handler> = {
    "POST /sessions": () => ({ status: 201, body: recorded.open_session }),
    [`POST /sessions/${sessionId}/messages`]: (body) => {
      const text = (body as { text: string }).text.toLowerCase();
      if (text.includes("not cooled")) {
        turn = 1;
        return { status: 200, body: recorded.message_u2 };
      }
      turn = 2;
      return { status: 200, body: recorded.message_u4 };
    },
    [`GET /sessions/${sessionId}/state`]: () => ({
      status: 200,
      body: turn <= 1 ? recorded.state_after_u2 : recorded.state_after_u4,
    }),
    "POST /bots": (body) => {
      const doc = body as { requirements?: { attr: string }[] };
      const bad = (doc.requirements ?? []).find(
        (r) => !["brand", "purchase_time", "phenomenon", "phone", "address",
                 "appointment_time", "name", "type"].includes(r.attr),
      );
      if (bad) {
        const idx = (doc.requirements ?? []).indexOf(bad);
        return {
          status: 422,
          body: { detail: { field: `requirements[${idx}].attr`, message: `unknown attribute '${bad.attr}'` } },
        };
      }
      return { status: recorded.bots_created_status as number, body: recorded.bots_created };
    },
    "GET /bots": () => ({ status: 200, body: recorded.bots_tree }),
  };

  globalThis.fetch = (async (url: RequestInfo | URL, init?: RequestInit) => {
    const method = init?.method ?? "GET";
    const path = String(url);
    calls.push({ method, path });
    const handler = routes[`${method} ${path}`];
    if (!handler) {
      return new Response(JSON.stringify({ detail: "unknown or expired session" }), { status: 404 });
    }
    const parsed = init?.body ? JSON.parse(String(init.body)) : undefined;
    const result = handler(parsed);
    return new Response(JSON.stringify(result.body), {
      status: result.status,
      headers: { "Content-Type": "application/json" },
    });
  }) as typeof fetch;

  return { calls };
}

export function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}
