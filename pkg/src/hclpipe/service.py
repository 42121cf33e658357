"""HTTP service exposing discrepancy queues to a human corrector.

Sessions live on disk as append-only JSON Lines journals; the in-memory
state is always reconstructible by replay, so a crash between journal
append and acknowledgment loses at most an unacknowledged correction and
never an acknowledged one.  Responses never contain ground-truth labels:
the corrector must not be primed.
"""

from __future__ import annotations

import json
import os
import shutil
import threading
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.responses import PlainTextResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import fileformats as ff
from .annotation import (
    AnnotationRun,
    CorrectionConflictError,
    CorrectionQueue,
    UnknownSampleError,
    apply_correction,
)


class SessionError(ValueError):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


@dataclass
class Session:
    session_id: str
    journal_path: Path
    run: AnnotationRun
    queue: CorrectionQueue
    class_names: list[str]
    metas: dict[str, dict]
    created: str
    updated: str
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def total(self) -> int:
        return self.run.n

    def progress(self) -> dict:
        resolved_corrections = len(self.queue.resolved)
        pending = self.queue.n_pending
        n_consensus = self.run.n - pending - resolved_corrections
        return {
            "pending": pending,
            "resolved": resolved_corrections,
            "total": self.run.n,
            "consistency_rate": n_consensus / self.run.n if self.run.n else 0.0,
            "complete": pending == 0,
        }

    def queue_items(self, offset: int = 0, limit: int = 50) -> dict:
        ids = self.queue.pending_slice(offset, limit)
        items = []
        for pos, sid in enumerate(ids, start=offset):
            preds = [
                {
                    "annotator": a,
                    "label": self.run.predictions[sid][a],
                    "class_name": self._class_name(self.run.predictions[sid][a]),
                }
                for a in self.run.annotator_ids
            ]
            items.append(
                {
                    "sample_id": sid,
                    "position": pos,
                    "predictions": preds,
                    "meta": self.metas.get(sid, {}),
                }
            )
        return {"items": items, "total_pending": self.queue.n_pending, "offset": offset}

    def _class_name(self, label: int) -> str:
        if 0 <= label < len(self.class_names):
            return self.class_names[label]
        return str(label)


class SessionStore:
    """Disk-backed sessions; one journal per session, one writer at a time."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._store_lock = threading.Lock()

    def _session_dir(self, session_id: str) -> Path:
        return self.root / session_id

    def create_session(self, journal_path: str | Path) -> str:
        """Register a run journal as a new correction session (copied in)."""
        src = Path(journal_path)
        if not src.exists():
            raise SessionError(f"journal not found: {src}")
        # validate before copying so malformed artifacts are rejected early
        ff.replay_journal(src)
        session_id = uuid.uuid4().hex[:12]
        sdir = self._session_dir(session_id)
        sdir.mkdir(parents=True)
        shutil.copyfile(src, sdir / "journal.jsonl")
        ff.write_json(
            sdir / "meta.json",
            {"session_id": session_id, "source": str(src), "created": _now()},
        )
        with self._store_lock:
            self._sessions[session_id] = self._load(session_id)
        return session_id

    def _load(self, session_id: str) -> Session:
        sdir = self._session_dir(session_id)
        journal = sdir / "journal.jsonl"
        if not journal.exists():
            raise SessionError(f"unknown session {session_id!r}")
        ff.repair_torn_tail(journal)
        run, queue, class_names, metas = ff.replay_journal(journal)
        meta = ff.read_json(sdir / "meta.json") if (sdir / "meta.json").exists() else {}
        created = meta.get("created", _now())
        return Session(
            session_id=session_id,
            journal_path=journal,
            run=run,
            queue=queue,
            class_names=class_names,
            metas=metas,
            created=created,
            updated=created,
        )

    def get(self, session_id: str) -> Session:
        with self._store_lock:
            if session_id not in self._sessions:
                self._sessions[session_id] = self._load(session_id)
            return self._sessions[session_id]

    def list_sessions(self) -> list[dict]:
        found = sorted(p.name for p in self.root.iterdir() if (p / "journal.jsonl").exists())
        out = []
        for sid in found:
            session = self.get(sid)
            out.append({"session_id": sid, **session.progress()})
        return out

    def apply(self, session_id: str, sample_id: str, label: int) -> str:
        """Apply one correction; returns "applied" or "duplicate".

        The journal append is flushed and fsynced before state is updated
        or the caller is acknowledged.
        """
        session = self.get(session_id)
        with session.lock:
            label = int(label)
            if not 0 <= label < session.run.k:
                raise ValueError(f"label {label} outside [0, {session.run.k})")
            if sample_id in session.queue.resolved:
                if session.queue.resolved[sample_id] == label:
                    return "duplicate"
                raise CorrectionConflictError(
                    f"sample {sample_id!r} already corrected to {session.queue.resolved[sample_id]}"
                )
            if not session.queue.is_pending(sample_id):
                raise UnknownSampleError(f"sample {sample_id!r} is not awaiting correction")
            event = ff.correction_event(sample_id, label, "human", ts=_now())
            with open(session.journal_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(event, sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
            apply_correction(session.run, session.queue, sample_id, label, "human")
            session.updated = _now()
            return "applied"

    def export_corrections(self, session_id: str, path: str | Path | None = None) -> list[dict]:
        """Corrections as replayable rows; optionally written to ``path``."""
        session = self.get(session_id)
        with session.lock:
            rows = []
            for sid in session.run.order:
                rec = session.run.records.get(sid)
                if rec is not None and rec.s == 1:
                    rows.append(
                        {
                            "sample_id": sid,
                            "label": rec.label,
                            "provenance": rec.provenance,
                            "ts": session.updated,
                        }
                    )
        if path is not None:
            ff.write_corrections_export(Path(path), rows)
        return rows

    def drop_cached(self) -> None:
        """Forget in-memory state (crash simulation; disk is the truth)."""
        with self._store_lock:
            self._sessions.clear()


class CorrectionIn(BaseModel):
    sample_id: str
    label: int


class SessionIn(BaseModel):
    journal: str


def create_app(
    store: SessionStore, ui_dir: str | Path | None = None, dev_cors: bool = False
) -> FastAPI:
    app = FastAPI(title="correction service")

    if dev_cors:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
        )

    def _session_or_404(session_id: str) -> Session:
        try:
            return store.get(session_id)
        except (SessionError, ff.JournalError):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")

    @app.get("/api/sessions")
    def list_sessions():
        return store.list_sessions()

    @app.post("/api/sessions", status_code=201)
    def create_session(body: SessionIn):
        try:
            session_id = store.create_session(body.journal)
        except (SessionError, ff.JournalError) as e:
            raise HTTPException(status_code=400, detail=str(e))
        return {"session_id": session_id}

    @app.get("/api/sessions/{session_id}/queue")
    def get_queue(session_id: str, offset: int = 0, limit: int = 50):
        session = _session_or_404(session_id)
        with session.lock:
            return session.queue_items(offset=max(offset, 0), limit=max(min(limit, 500), 0))

    @app.get("/api/sessions/{session_id}/progress")
    def get_progress(session_id: str):
        session = _session_or_404(session_id)
        with session.lock:
            return session.progress()

    @app.get("/api/sessions/{session_id}/classes")
    def get_classes(session_id: str):
        session = _session_or_404(session_id)
        return list(session.class_names)

    @app.post("/api/sessions/{session_id}/corrections")
    def post_correction(session_id: str, body: CorrectionIn):
        _session_or_404(session_id)
        try:
            status = store.apply(session_id, body.sample_id, body.label)
        except CorrectionConflictError as e:
            raise HTTPException(status_code=409, detail=str(e))
        except UnknownSampleError as e:
            raise HTTPException(status_code=404, detail=str(e))
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e))
        return {"status": status, "sample_id": body.sample_id, "label": body.label}

    @app.get("/api/sessions/{session_id}/export", response_class=PlainTextResponse)
    def export(session_id: str):
        _session_or_404(session_id)
        rows = store.export_corrections(session_id)
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows)

    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
