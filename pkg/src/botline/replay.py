"""Deterministic replay: run a scripted conversation against the engine and
compare replies and state snapshots.

The same script can be driven in-process or over HTTP; both clients expose
open/send/state/close so assertion results are directly comparable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from importlib import resources
from typing import Optional

from . import nlu
from .dialog import DialogSession, Engine
from .neurons import default_neuron_store
from .registry import BotRegistry
from .storage import UserStore


def load_schedule(doc: dict) -> dict:
    if doc.get("schema_version") != "v1":
        raise ValueError("unsupported schedule schema version")
    return doc["providers"]


def build_engine(bot_docs: Optional[list[dict]] = None,
                 schedule: Optional[dict] = None,
                 store_path=None,
                 max_optional_asks: int = 1,
                 closing_timeout_s: int = 120) -> Engine:
    """Assemble an engine from fixture documents (golden defaults)."""
    neurons = default_neuron_store()
    registry = BotRegistry(neuron_store=neurons)
    if bot_docs is None:
        raw = resources.files("botline.fixtures").joinpath("bots_golden.json").read_text("utf-8")
        bot_docs = json.loads(raw)["bots"]
    for doc in bot_docs:
        registry.register_bot(doc)
    if schedule is None:
        raw = resources.files("botline.fixtures").joinpath("schedule.json").read_text("utf-8")
        schedule = load_schedule(json.loads(raw))
    store = UserStore(store_path) if store_path else None
    return Engine(neurons, registry, user_store=store, schedule=schedule,
                  max_optional_asks=max_optional_asks,
                  closing_timeout_s=closing_timeout_s)


def golden_script() -> dict:
    raw = resources.files("botline.fixtures").joinpath("replay_golden.json").read_text("utf-8")
    return json.loads(raw)


class InProcessClient:
    """Drives the engine directly; zero network dependencies."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.session: Optional[DialogSession] = None

    def open(self, user_id: str, clock: str) -> str:
        session, greeting = self.engine.open_session(
            user_id, datetime.strptime(clock, "%Y-%m-%d %H:%M"))
        self.session = session
        return greeting

    def send(self, text: str) -> tuple[str, bool]:
        reply = self.engine.handle_turn(self.session, text)
        return reply, self.session.closing == "closed"

    def state(self) -> dict:
        return self.engine.snapshot(self.session)

    def close(self) -> None:
        if self.session is not None:
            self.engine.close_session(self.session)


class HttpClient:
    """Drives a running service over its HTTP API."""

    def __init__(self, base_url: str, http=None):
        import urllib.request

        self.base = base_url.rstrip("/")
        if http is None:
            def http(method: str, path: str, body: Optional[dict] = None):
                req = urllib.request.Request(
                    self.base + path, method=method,
                    data=json.dumps(body).encode() if body is not None else None,
                    headers={"Content-Type": "application/json"})
                with urllib.request.urlopen(req) as resp:
                    return json.loads(resp.read().decode() or "{}")
        self.http = http
        self.session_id: Optional[str] = None

    def open(self, user_id: str, clock: str) -> str:
        doc = self.http("POST", "/sessions", {"user_id": user_id, "clock": clock})
        self.session_id = doc["session_id"]
        return doc["greeting"]

    def send(self, text: str) -> tuple[str, bool]:
        doc = self.http("POST", f"/sessions/{self.session_id}/messages", {"text": text})
        return doc["reply"], bool(doc.get("closed"))

    def state(self) -> dict:
        return self.http("GET", f"/sessions/{self.session_id}/state")

    def close(self) -> None:
        if self.session_id:
            self.http("DELETE", f"/sessions/{self.session_id}")


@dataclass
class TurnOutcome:
    user: str
    reply: str
    closed: bool = False
    state: Optional[dict] = None
    failures: list[str] = field(default_factory=list)


@dataclass
class ReplayResult:
    turns: list[TurnOutcome] = field(default_factory=list)
    greeting: str = ""

    @property
    def ok(self) -> bool:
        return not any(t.failures for t in self.turns)

    def failures(self) -> list[str]:
        out = []
        for i, t in enumerate(self.turns):
            out.extend(f"turn {i + 1}: {f}" for f in t.failures)
        return out

    def transcript(self) -> str:
        lines = [f"S: {self.greeting}"]
        for t in self.turns:
            lines.append(f"U: {t.user}")
            lines.append(f"S: {t.reply}")
        return "\n".join(lines)


def _norm_text(s: str) -> str:
    return nlu.preprocess(s)


def _check_state(expected: dict, actual: dict) -> list[str]:
    """Subset comparison: every expected key must match the snapshot exactly
    (lists of scalars compare as sets where order is not meaningful)."""
    failures = []

    def norm(value):
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return sorted(_norm_text(v) for v in value)
        if isinstance(value, str):
            return _norm_text(value)
        return value

    for key, want in expected.items():
        got = actual.get(key)
        if key == "active_bots":
            if sorted(map(_norm_text, want)) != sorted(map(_norm_text, got or [])):
                failures.append(f"active_bots: expected {want}, got {got}")
            continue
        if key in ("device_memories",):
            got = got or []
            if len(want) != len(got):
                failures.append(f"{key}: expected {len(want)} memories, got {len(got)}")
                continue
            for i, (w, g) in enumerate(zip(want, got)):
                for attr, val in w.items():
                    if norm(g.get(attr)) != norm(val):
                        failures.append(
                            f"{key}[{i}].{attr}: expected {val!r}, got {g.get(attr)!r}")
                extra = set(g) - set(w)
                if extra:
                    failures.append(f"{key}[{i}]: unexpected attributes {sorted(extra)}")
            continue
        if key == "user_memory":
            got = got or {}
            for attr, val in want.items():
                if norm(got.get(attr)) != norm(val):
                    failures.append(f"user_memory.{attr}: expected {val!r}, got {got.get(attr)!r}")
            extra = set(got) - set(want)
            if extra:
                failures.append(f"user_memory: unexpected attributes {sorted(extra)}")
            continue
        if norm(got) != norm(want):
            failures.append(f"{key}: expected {want!r}, got {got!r}")
    return failures


def run_script(client, script: dict, check: bool = False) -> ReplayResult:
    result = ReplayResult()
    result.greeting = client.open(script.get("user_id", "replay-user"),
                                  script.get("clock", "2019-10-14 10:00"))
    for turn in script.get("turns", []):
        reply, closed = client.send(turn["user"])
        outcome = TurnOutcome(user=turn["user"], reply=reply, closed=closed)
        if check:
            if "expect_reply" in turn and _norm_text(reply) != _norm_text(turn["expect_reply"]):
                outcome.failures.append(
                    f"reply mismatch:\n  expected: {turn['expect_reply']}\n  actual:   {reply}")
            for fragment in turn.get("expect_reply_contains", []):
                if _norm_text(fragment) not in _norm_text(reply):
                    outcome.failures.append(
                        f"reply missing fragment {fragment!r}: {reply!r}")
            if turn.get("expect_closed") is not None and closed != turn["expect_closed"]:
                outcome.failures.append(
                    f"closed: expected {turn['expect_closed']}, got {closed}")
            if "expect_state" in turn and not closed:
                outcome.state = client.state()
                outcome.failures.extend(_check_state(turn["expect_state"], outcome.state))
        result.turns.append(outcome)
        if closed:
            break
    return result
