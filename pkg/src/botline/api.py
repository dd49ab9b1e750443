"""HTTP boundary: enterprise customization and user chat over JSON.

One lock per dialog session serializes its turns; different sessions run
concurrently. A clock override on session creation exists solely for
deterministic replay.
"""
from __future__ import annotations

import json
import logging
import os
import secrets
import threading
import time as time_mod
from datetime import datetime
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, HTTPException, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from .dialog import DialogSession, Engine, SessionClosed
from .registry import BotId, ValidationError
from .replay import build_engine, load_schedule

log = logging.getLogger("botline.api")

DEFAULT_CONFIG = {
    "bind_host": "127.0.0.1",
    "bind_port": 8700,
    "store_path": None,
    "bots_path": None,
    "schedule_path": None,
    "api_key": None,
    "session_idle_s": 3600,
}

ENV_OVERRIDES = {
    "BOTLINE_BIND_HOST": "bind_host",
    "BOTLINE_BIND_PORT": "bind_port",
    "BOTLINE_STORE": "store_path",
    "BOTLINE_BOTS": "bots_path",
    "BOTLINE_SCHEDULE": "schedule_path",
    "BOTLINE_API_KEY": "api_key",
}


def load_config(path: Optional[str] = None) -> dict:
    config = dict(DEFAULT_CONFIG)
    if path:
        with open(path, "r", encoding="utf-8") as f:
            config.update(json.load(f))
    for env, key in ENV_OVERRIDES.items():
        if os.environ.get(env):
            config[key] = os.environ[env]
    config["bind_port"] = int(config["bind_port"])
    return config


def engine_from_config(config: dict) -> Engine:
    bot_docs = None
    if config.get("bots_path"):
        with open(config["bots_path"], "r", encoding="utf-8") as f:
            bot_docs = json.load(f)["bots"]
    schedule = None
    if config.get("schedule_path"):
        with open(config["schedule_path"], "r", encoding="utf-8") as f:
            schedule = load_schedule(json.load(f))
    store_path = config.get("store_path")
    if store_path:
        Path(store_path).mkdir(parents=True, exist_ok=True)
    return build_engine(bot_docs=bot_docs, schedule=schedule, store_path=store_path)


class BotSubmission(BaseModel):
    service_type: str
    device_type: str
    brand: str
    display_name: Optional[str] = None
    type_display_name: Optional[str] = None
    trigger_phrases: list[str] = Field(default_factory=list)
    device_type_phrases: list[str] = Field(default_factory=list)
    requirements: list[dict] = Field(default_factory=list)
    metadata: dict = Field(default_factory=dict)


class SessionRequest(BaseModel):
    user_id: str
    clock: Optional[str] = None  # "YYYY-MM-DD HH:MM", replay determinism only


class MessageRequest(BaseModel):
    text: str


class ApiSession:
    """Server-side session handle: unguessable token, idle deadline, and a
    lock that serializes this session's requests."""

    def __init__(self, session: DialogSession, idle_s: int):
        self.token = secrets.token_urlsafe(16)
        self.session = session
        self.lock = threading.Lock()
        self.idle_s = idle_s
        self.deadline = time_mod.monotonic() + idle_s

    def touch(self) -> None:
        self.deadline = time_mod.monotonic() + self.idle_s

    @property
    def expired(self) -> bool:
        return time_mod.monotonic() > self.deadline


def create_app(engine: Optional[Engine] = None, config: Optional[dict] = None) -> FastAPI:
    config = config or dict(DEFAULT_CONFIG)
    engine = engine or engine_from_config(config)
    app = FastAPI(title="botline", version="0.1.0")
    # the web console is served as a separate static bundle
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    sessions: dict[str, ApiSession] = {}
    sessions_lock = threading.Lock()
    registry_lock = threading.Lock()

    def require_key(request: Request) -> None:
        expected = config.get("api_key")
        if expected and request.headers.get("x-api-key") != expected:
            raise HTTPException(status_code=401, detail="invalid api key")

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        started = time_mod.monotonic()
        response = await call_next(request)
        log.info(json.dumps({
            "method": request.method,
            "path": request.url.path,
            "status": response.status_code,
            "ms": round((time_mod.monotonic() - started) * 1000, 1),
        }))
        return response

    def get_session(session_id: str) -> ApiSession:
        with sessions_lock:
            handle = sessions.get(session_id)
            if handle is not None and handle.expired:
                sessions.pop(session_id, None)
                handle = None
        if handle is None:
            raise HTTPException(status_code=404, detail="unknown or expired session")
        return handle

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "bots": len(engine.registry.nodes)}

    @app.post("/bots", status_code=201)
    def register_bot(doc: BotSubmission, response: Response,
                     _=Depends(require_key)) -> dict:
        payload = doc.model_dump(exclude_none=True)
        with registry_lock:
            existing = engine.registry.peek_bot_id(
                doc.service_type, doc.device_type, doc.brand)
            known = existing is not None and str(existing) in engine.registry.nodes
            try:
                created = engine.registry.register_bot(payload)
            except ValidationError as exc:
                raise HTTPException(status_code=422, detail={
                    "field": exc.field_path, "message": exc.message})
        if known:
            # idempotent replace of an existing leaf
            response.status_code = 200
            return {"created": [str(existing)]}
        return {"created": [str(b) for b in created]}

    @app.get("/bots")
    def list_bots(_=Depends(require_key)) -> dict:
        return {"bots": [
            {
                "bot_id": str(spec.bot_id),
                "display_name": spec.display_name,
                "origin": spec.origin,
                "parent": str(spec.bot_id.parent()) if spec.bot_id.parent() else None,
                "children": [str(c) for c in engine.registry.children(spec.bot_id)],
            }
            for spec in engine.registry.tree()
        ]}

    @app.get("/bots/{bot_id}")
    def get_bot(bot_id: str, _=Depends(require_key)) -> dict:
        try:
            spec = engine.registry.get(BotId.parse(bot_id))
        except (KeyError, ValueError):
            raise HTTPException(status_code=404, detail="unknown bot id")
        return {
            "bot_id": str(spec.bot_id),
            "display_name": spec.display_name,
            "origin": spec.origin,
            "version": spec.version,
            "service_type": spec.service_type,
            "device_type": spec.device_type,
            "brand": spec.brand,
            "requirements": [
                {"attr": r.attr, "code": r.code, "expect_kind": r.expect.kind,
                 "expect_values": list(r.expect.values)}
                for r in spec.requirements
            ],
            "metadata": {
                "warranty_years": spec.metadata.warranty_years,
                "visit_fee_text": spec.metadata.visit_fee_text,
                "in_warranty_fee_text": spec.metadata.in_warranty_fee_text,
                "out_of_warranty_fee_text": spec.metadata.out_of_warranty_fee_text,
                "provider_id": spec.metadata.provider_id,
                "faq": [{"pattern": f.pattern, "answer": f.answer}
                        for f in spec.metadata.faq],
            },
        }

    @app.post("/sessions", status_code=201)
    def open_session(doc: SessionRequest, _=Depends(require_key)) -> dict:
        clock = (datetime.strptime(doc.clock, "%Y-%m-%d %H:%M")
                 if doc.clock else datetime.now().replace(second=0, microsecond=0))
        session, greeting = engine.open_session(doc.user_id, clock)
        handle = ApiSession(session, int(config.get("session_idle_s", 3600)))
        with sessions_lock:
            sessions[handle.token] = handle
        return {"session_id": handle.token, "greeting": greeting}

    @app.post("/sessions/{session_id}/messages")
    def send_message(session_id: str, doc: MessageRequest,
                     _=Depends(require_key)) -> dict:
        handle = get_session(session_id)
        with handle.lock:
            handle.touch()
            try:
                reply = engine.handle_turn(handle.session, doc.text)
            except SessionClosed:
                raise HTTPException(status_code=409, detail="session is closed")
        return {"reply": reply, "closed": handle.session.closing == "closed"}

    @app.get("/sessions/{session_id}/state")
    def session_state(session_id: str, _=Depends(require_key)) -> dict:
        handle = get_session(session_id)
        with handle.lock:
            return engine.snapshot(handle.session)

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str, _=Depends(require_key)) -> dict:
        handle = get_session(session_id)
        with handle.lock:
            engine.close_session(handle.session)
        with sessions_lock:
            sessions.pop(session_id, None)
        return {"closed": True}

    app.state.engine = engine
    app.state.config = config
    return app
