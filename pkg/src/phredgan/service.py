"""HTTP chat service over trained snapshots.

Sessions are in-memory; each holds an append-only transcript and a lock
so concurrent requests against one session serialize. Snapshots load
lazily from --snapshot-dir (one checkpoint directory per snapshot id)
and are immutable, so they are shared freely across sessions.

Seed modes: "fixed" derives every generation seed from the session's
ordinal and its transcript, so replaying the same call sequence on a
fresh server reproduces the same responses; "entropy" draws fresh seeds
per request.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .checkpoint import MANIFEST, Snapshot, load_checkpoint
from .corpus import tokenize
from .inference import generate
from .rng import hash_seed

DEFAULT_CANDIDATES = 8
MAX_CANDIDATES = 64


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    id: str
    seq: int
    snapshot_id: str
    created: float
    turns: list[dict] = field(default_factory=list)
    messages_handled: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)


class SnapshotRegistry:
    def __init__(self, snapshot_dir: Path):
        self.dir = Path(snapshot_dir)
        self._cache: dict[str, Snapshot] = {}
        self._lock = threading.Lock()

    def list(self) -> list[dict]:
        rows = []
        if not self.dir.is_dir():
            return rows
        for child in sorted(self.dir.iterdir()):
            mpath = child / MANIFEST
            if not mpath.is_file():
                continue
            try:
                m = json.loads(mpath.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError):
                continue
            rows.append({
                "id": child.name,
                "variant": m.get("config", {}).get("variant"),
                "attributes": m.get("attributes", []),
                "step": m.get("step"),
            })
        return rows

    def get(self, snapshot_id: str) -> Snapshot | None:
        with self._lock:
            if snapshot_id in self._cache:
                return self._cache[snapshot_id]
        path = self.dir / snapshot_id
        try:
            snap = load_checkpoint(path)
        except (FileNotFoundError, ValueError, OSError):
            return None
        with self._lock:
            self._cache.setdefault(snapshot_id, snap)
            return self._cache[snapshot_id]


class CreateSessionBody(BaseModel):
    snapshot_id: str


class MessageBody(BaseModel):
    speaker: str
    text: str
    respond_as: str
    num_candidates: int | None = None


class WhatIfBody(BaseModel):
    text: str | None = None
    speaker: str | None = None
    num_candidates: int | None = None


def _check_candidates(n: int | None) -> int:
    if n is None:
        return DEFAULT_CANDIDATES
    if not (1 <= n <= MAX_CANDIDATES):
        raise ApiError(400, "bad_request",
                       f"num_candidates must lie in [1, {MAX_CANDIDATES}]")
    return n


def build_app(snapshot_dir, seed_mode: str = "fixed", persist_dir=None,
              ui_dir=None) -> FastAPI:
    if seed_mode not in ("fixed", "entropy"):
        raise ValueError("seed_mode must be 'fixed' or 'entropy'")
    registry = SnapshotRegistry(Path(snapshot_dir))
    persist = Path(persist_dir) if persist_dir else None
    if persist:
        persist.mkdir(parents=True, exist_ok=True)

    app = FastAPI(title="phredgan chat service")
    sessions: dict[str, Session] = {}
    create_lock = threading.Lock()
    counter = {"n": 0}
    app.state.registry = registry
    app.state.sessions = sessions

    @app.exception_handler(ApiError)
    async def _api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400,
                            content={"code": "bad_request", "message": str(exc.errors())})

    def _session(session_id: str) -> Session:
        sess = sessions.get(session_id)
        if sess is None:
            raise ApiError(404, "not_found", f"unknown session {session_id!r}")
        return sess

    def _snapshot(sess: Session) -> Snapshot:
        snap = registry.get(sess.snapshot_id)
        if snap is None:
            raise ApiError(409, "snapshot_unloaded",
                           f"snapshot {sess.snapshot_id!r} is no longer loadable")
        return snap

    def _attr_id(snap: Snapshot, label: str, field_name: str) -> int:
        if label not in snap.attr_vocab:
            raise ApiError(400, "unknown_attribute",
                           f"{field_name} {label!r} is not one of {snap.attr_vocab.labels}")
        return snap.attr_vocab.index(label)

    def _context_ids(snap: Snapshot, turns: list[dict]) -> list[tuple[int, list[int]]]:
        out = []
        for turn in turns:
            toks = snap.vocab.encode(tokenize(turn["text"]))
            if toks:
                out.append((snap.attr_vocab.index(turn["speaker"]), toks))
        if not out:
            raise ApiError(400, "bad_request", "context is empty after tokenization")
        return out

    def _seed(sess: Session, purpose: str, *parts) -> int:
        if seed_mode == "entropy":
            return secrets.randbits(63)
        return hash_seed("service", sess.seq, purpose, *parts)

    def _persist_turn(sess: Session, turn: dict):
        if persist is None:
            return
        with open(persist / f"{sess.id}.jsonl", "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"ts": time.time(), **turn}) + "\n")

    # -- endpoints -----------------------------------------------------------

    @app.get("/v1/snapshots")
    def list_snapshots():
        return {"snapshots": registry.list()}

    @app.post("/v1/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        snap = registry.get(body.snapshot_id)
        if snap is None:
            raise ApiError(404, "not_found", f"unknown snapshot {body.snapshot_id!r}")
        with create_lock:
            counter["n"] += 1
            seq = counter["n"]
            sid = f"session-{seq:06d}" if seed_mode == "fixed" else secrets.token_hex(8)
            sessions[sid] = Session(id=sid, seq=seq, snapshot_id=body.snapshot_id,
                                    created=time.time())
        return {"session_id": sid, "attributes": snap.attr_vocab.labels}

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str):
        sess = _session(session_id)
        with sess.lock:
            return {
                "session_id": sess.id,
                "snapshot_id": sess.snapshot_id,
                "created": sess.created,
                "turns": list(sess.turns),
            }

    @app.post("/v1/sessions/{session_id}/message")
    def post_message(session_id: str, body: MessageBody):
        sess = _session(session_id)
        snap = _snapshot(sess)
        n_cands = _check_candidates(body.num_candidates)
        speaker_id = _attr_id(snap, body.speaker, "speaker")
        respond_id = _attr_id(snap, body.respond_as, "respond_as")
        del speaker_id  # label validity is what matters; ids derive from labels below
        if not tokenize(body.text):
            raise ApiError(400, "bad_request", "text is empty after tokenization")
        with sess.lock:
            user_turn = {"speaker": body.speaker, "text": body.text}
            sess.turns.append(user_turn)
            _persist_turn(sess, user_turn)
            context = _context_ids(snap, sess.turns[-snap.config.max_turns:])
            seed = _seed(sess, "message", len(sess.turns))
            cands = generate(snap, context, respond_id, n_candidates=n_cands, seed=seed)
            top = cands[0]
            model_turn = {"speaker": body.respond_as, "text": top.text}
            sess.turns.append(model_turn)
            _persist_turn(sess, model_turn)
            sess.messages_handled += 1
        return {
            "responses": [{"text": c.text, "score": c.rank_score} for c in cands],
            "ranked": True,
        }

    @app.post("/v1/sessions/{session_id}/whatif")
    def post_whatif(session_id: str, body: WhatIfBody):
        sess = _session(session_id)
        snap = _snapshot(sess)
        n_cands = _check_candidates(body.num_candidates)
        with sess.lock:
            turns = list(sess.turns)
            turns_before = len(sess.turns)
            if body.text:
                speaker = body.speaker if body.speaker is not None else snap.attr_vocab.labels[0]
                _attr_id(snap, speaker, "speaker")
                turns.append({"speaker": speaker, "text": body.text})
            if not turns:
                raise ApiError(400, "bad_request",
                               "session transcript is empty and no draft text was given")
            context = _context_ids(snap, turns[-snap.config.max_turns:])
            per_attribute = {}
            for label in snap.attr_vocab.labels:
                seed = _seed(sess, "whatif", len(turns), body.text or "", label)
                cands = generate(snap, context, snap.attr_vocab.index(label),
                                 n_candidates=n_cands, seed=seed)
                per_attribute[label] = {"text": cands[0].text, "score": cands[0].rank_score}
            assert len(sess.turns) == turns_before  # what-if must not touch history
        return {"per_attribute": per_attribute}

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
