"""Durable user history: one JSON document per user id.

Writes go through a temp file and an atomic rename, so readers only ever see
the old or the new document, never a hybrid.
"""
from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

SCHEMA_VERSION = "v1"


class LoadError(RuntimeError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"cannot load {path}: {reason}")
        self.path = path


class SaveError(RuntimeError):
    pass


@dataclass
class UserRecord:
    user_id: str
    profile: dict[str, list[str]] = field(default_factory=dict)
    reports: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "user_id": self.user_id,
            "profile": {k: list(v) for k, v in self.profile.items()},
            "reports": list(self.reports),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "UserRecord":
        return cls(
            user_id=doc["user_id"],
            profile={k: list(v) for k, v in doc.get("profile", {}).items()},
            reports=list(doc.get("reports", [])),
        )


class UserStore:
    """Document-per-user file store; per-user write serialization."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, user_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(user_id, threading.Lock())

    def _path(self, user_id: str) -> Path:
        safe = "".join(c if c.isalnum() or c in "-_." else "_" for c in user_id)
        return self.root / f"{safe}.json"

    def load(self, user_id: str) -> Optional[UserRecord]:
        """Read a user record; None is the normal not-found outcome."""
        path = self._path(user_id)
        if not path.exists():
            return None
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except (json.JSONDecodeError, OSError) as exc:
            raise LoadError(str(path), str(exc)) from exc
        if doc.get("schema_version") != SCHEMA_VERSION:
            raise LoadError(str(path), f"unsupported schema version {doc.get('schema_version')!r}")
        return UserRecord.from_dict(doc)

    def save(self, record: UserRecord) -> None:
        path = self._path(record.user_id)
        with self._lock(record.user_id):
            try:
                fd, tmp = tempfile.mkstemp(dir=self.root, prefix=path.name, suffix=".tmp")
                with os.fdopen(fd, "w", encoding="utf-8") as f:
                    json.dump(record.to_dict(), f, indent=2, sort_keys=True)
                    f.write("\n")
                os.replace(tmp, path)
            except OSError as exc:
                raise SaveError(str(exc)) from exc

    def append_report(self, user_id: str, report: dict) -> UserRecord:
        """Append one failure report, preserving order; a report id already
        present makes this a no-op (idempotent retry)."""
        with self._lock(user_id):
            record = self._load_unlocked(user_id) or UserRecord(user_id=user_id)
            rid = report.get("report_id")
            if rid is None or all(r.get("report_id") != rid for r in record.reports):
                record.reports.append(report)
                self._save_unlocked(record)
            return record

    def _load_unlocked(self, user_id: str) -> Optional[UserRecord]:
        path = self._path(user_id)
        if not path.exists():
            return None
        with open(path, "r", encoding="utf-8") as f:
            return UserRecord.from_dict(json.load(f))

    def _save_unlocked(self, record: UserRecord) -> None:
        path = self._path(record.user_id)
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=path.name, suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(record.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        os.replace(tmp, path)

    def user_ids(self) -> list[str]:
        return sorted(p.stem for p in self.root.glob("*.json"))
