"""Headless network-facing service: submit requests, browse topology,
stream lifecycle events, fetch stored measurements.

The control plane runs on a single worker thread that steps the event
engine; HTTP handlers only enqueue commands or read state under a lock, so
event streaming never blocks request processing.  Static bearer tokens
carry scopes (submit/read/admin); every authenticated call lands in an
append-only audit log.  Requests, lifecycle events, measurement records,
and the audit trail persist in one SQLite file; requests that were live
when the process died resume as Failed(interrupted) on restart.
"""

from __future__ import annotations

import json
import queue
import sqlite3
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import yaml
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse, StreamingResponse
from fastapi.staticfiles import StaticFiles

from .control_plane import RequestRecord, RequestState, Requirements
from .simulator import Simulation

SCOPES = ("submit", "read", "admin")


@dataclass(frozen=True)
class Session:
    token: str
    subject: str
    scopes: frozenset[str]


class TokenTable:
    def __init__(self, tokens: dict[str, dict]):
        self._sessions: dict[str, Session] = {}
        for token, info in tokens.items():
            scopes = frozenset(str(s) for s in info.get("scopes", []))
            unknown = scopes - set(SCOPES)
            if unknown:
                raise ValueError(f"unknown scopes {sorted(unknown)} for token")
            self._sessions[str(token)] = Session(
                token=str(token), subject=str(info.get("subject", "unknown")), scopes=scopes)

    @classmethod
    def from_file(cls, path: str | Path) -> "TokenTable":
        doc = yaml.safe_load(Path(path).read_text())
        if not isinstance(doc, dict) or "tokens" not in doc:
            raise ValueError(f"token file {path} needs a top-level 'tokens' map")
        return cls(doc["tokens"])

    def lookup(self, token: str) -> Session | None:
        return self._sessions.get(token)


class ServiceStore:
    """SQLite-backed persistence: requests, events, measurements, audit."""

    def __init__(self, path: str | Path):
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        self._lock = threading.Lock()
        with self._lock, self._conn:
            self._conn.executescript("""
                CREATE TABLE IF NOT EXISTS requests (
                    id TEXT PRIMARY KEY, doc TEXT NOT NULL);
                CREATE TABLE IF NOT EXISTS events (
                    seq INTEGER PRIMARY KEY AUTOINCREMENT,
                    request_id TEXT, type TEXT NOT NULL, body TEXT NOT NULL);
                CREATE TABLE IF NOT EXISTS measurements (
                    seq INTEGER PRIMARY KEY AUTOINCREMENT, doc TEXT NOT NULL);
                CREATE TABLE IF NOT EXISTS audit (
                    seq INTEGER PRIMARY KEY AUTOINCREMENT,
                    time REAL, subject TEXT, action TEXT, target TEXT, outcome TEXT);
                CREATE TABLE IF NOT EXISTS idempotency (
                    key TEXT PRIMARY KEY, request_id TEXT NOT NULL);
            """)

    # MeasurementStore interface used by the control plane.
    def save(self, record: dict) -> str:
        with self._lock, self._conn:
            cur = self._conn.execute("INSERT INTO measurements (doc) VALUES (?)",
                                     (json.dumps(record, sort_keys=True),))
            record_id = f"rec-{cur.lastrowid:04d}"
            self._conn.execute(
                "UPDATE measurements SET doc = ? WHERE seq = ?",
                (json.dumps(dict(record, record_id=record_id), sort_keys=True), cur.lastrowid))
            return record_id

    def get(self, record_id: str) -> dict:
        seq = int(record_id.split("-")[-1])
        with self._lock:
            row = self._conn.execute("SELECT doc FROM measurements WHERE seq = ?",
                                     (seq,)).fetchone()
        if row is None:
            raise KeyError(record_id)
        return json.loads(row[0])

    def ids(self) -> list[str]:
        with self._lock:
            rows = self._conn.execute("SELECT seq FROM measurements ORDER BY seq").fetchall()
        return [f"rec-{r[0]:04d}" for r in rows]

    # Service-level persistence.
    def upsert_request(self, doc: dict) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO requests (id, doc) VALUES (?, ?) "
                "ON CONFLICT(id) DO UPDATE SET doc = excluded.doc",
                (doc["id"], json.dumps(doc, sort_keys=True)))

    def request_docs(self) -> list[dict]:
        with self._lock:
            rows = self._conn.execute("SELECT doc FROM requests ORDER BY id").fetchall()
        return [json.loads(r[0]) for r in rows]

    def append_event(self, request_id: str, type_: str, body: dict) -> int:
        with self._lock, self._conn:
            cur = self._conn.execute(
                "INSERT INTO events (request_id, type, body) VALUES (?, ?, ?)",
                (request_id, type_, json.dumps(body, sort_keys=True)))
            return int(cur.lastrowid)

    def events_after(self, cursor: int, request_id: str | None = None,
                     limit: int = 500) -> list[dict]:
        q = "SELECT seq, request_id, type, body FROM events WHERE seq > ?"
        args: list = [cursor]
        if request_id:
            q += " AND request_id = ?"
            args.append(request_id)
        q += " ORDER BY seq LIMIT ?"
        args.append(limit)
        with self._lock:
            rows = self._conn.execute(q, args).fetchall()
        return [{"seq": r[0], "request_id": r[1], "type": r[2], **json.loads(r[3])}
                for r in rows]

    def last_event_seq(self) -> int:
        with self._lock:
            row = self._conn.execute("SELECT COALESCE(MAX(seq), 0) FROM events").fetchone()
        return int(row[0])

    def audit(self, subject: str, action: str, target: str, outcome: str) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT INTO audit (time, subject, action, target, outcome) "
                "VALUES (?, ?, ?, ?, ?)",
                (time.time(), subject, action, target, outcome))

    def audit_rows(self, limit: int = 200) -> list[dict]:
        with self._lock:
            rows = self._conn.execute(
                "SELECT seq, time, subject, action, target, outcome FROM audit "
                "ORDER BY seq DESC LIMIT ?", (limit,)).fetchall()
        return [dict(zip(("seq", "time", "subject", "action", "target", "outcome"), r))
                for r in rows]

    def idempotent_request(self, key: str) -> str | None:
        with self._lock:
            row = self._conn.execute("SELECT request_id FROM idempotency WHERE key = ?",
                                     (key,)).fetchone()
        return row[0] if row else None

    def remember_idempotency(self, key: str, request_id: str) -> None:
        with self._lock, self._conn:
            self._conn.execute(
                "INSERT OR IGNORE INTO idempotency (key, request_id) VALUES (?, ?)",
                (key, request_id))

    def close(self):
        with self._lock:
            self._conn.close()


def _record_doc(record: RequestRecord) -> dict:
    return {
        "id": record.id,
        "user": record.user,
        "qnode_a": record.qnode_a,
        "qnode_b": record.qnode_b,
        "qubit_type": record.requirements.qubit_type,
        "rate": record.requirements.rate,
        "duration": record.requirements.duration,
        "via_bsm": record.requirements.via_bsm,
        "state": record.state.value,
        "failure_reason": record.failure_reason,
        "transitions": list(record.transitions),
        "batches": len(record.measurements),
        "record_id": record.record_id,
        "data_loss": record.data_loss,
    }


class QnetService:
    """Wraps a live Simulation behind a worker thread and the wire protocol."""

    def __init__(self, topology_path: str | Path, tokens: TokenTable,
                 store: ServiceStore, profile: str | None = None,
                 pace: float = 0.0):
        config: dict = {"topology": str(topology_path), "duration_s": 0.0}
        if profile:
            config["profiles"] = {"default": profile}
        self.sim = Simulation(config, base_dir=Path.cwd(), seed=0)
        self.sim.server.store = store  # persistence behind the control plane
        self.store = store
        self.tokens = tokens
        self.pace = pace
        self.lock = threading.RLock()
        self._idem_lock = threading.Lock()
        self.commands: "queue.Queue[tuple]" = queue.Queue()
        self.new_event = threading.Condition()
        self._stop = threading.Event()
        self._worker: threading.Thread | None = None

        self._recover_interrupted()
        self.sim.server.transition_hooks.append(self._on_transition)
        self.sim.bus.subscribe("qnet/req/+/measurement", self._on_measurement)
        self.sim.bus.subscribe("qnet/req/+/stored", self._on_stored)

    # -- lifecycle ---------------------------------------------------------------

    def start(self):
        with self.lock:
            self.sim.start()
        self._worker = threading.Thread(target=self._run_worker, name="qnet-worker",
                                        daemon=True)
        self._worker.start()

    def stop(self):
        self._stop.set()
        if self._worker is not None:
            self._worker.join(timeout=5.0)
        self.store.close()

    def _recover_interrupted(self):
        for doc in self.store.request_docs():
            if doc.get("state") not in (RequestState.COMPLETED.value, RequestState.FAILED.value):
                doc["state"] = RequestState.FAILED.value
                doc["failure_reason"] = "interrupted"
                doc["transitions"] = doc.get("transitions", []) + [
                    {"t": None, "state": "Failed", "reason": "interrupted"}]
                self.store.upsert_request(doc)
                self.store.append_event(doc["id"], "transition",
                                        {"state": "Failed", "reason": "interrupted", "t": None})

    def _run_worker(self):
        while not self._stop.is_set():
            try:
                cmd = self.commands.get(timeout=0.02)
            except queue.Empty:
                cmd = None
            if cmd is not None:
                kind, args, reply = cmd
                with self.lock:
                    try:
                        if kind == "submit":
                            record = self.sim.server.submit(**args)
                            reply.put(("ok", record.id))
                        else:
                            reply.put(("error", f"unknown command {kind}"))
                    except Exception as exc:
                        reply.put(("error", str(exc)))
            # Advance simulated time, paced to wall time when configured.
            while not self._stop.is_set():
                with self.lock:
                    before = self.sim.engine.now
                    progressed = self.sim.engine.step()
                    dt = self.sim.engine.now - before
                if not progressed:
                    break
                if self.pace > 0 and dt > 0:
                    time.sleep(min(dt * self.pace, 0.5))
                if not self.commands.empty():
                    break

    # -- event capture -------------------------------------------------------------

    def _on_transition(self, record: RequestRecord):
        self.store.upsert_request(_record_doc(record))
        self.store.append_event(record.id, "transition", {
            "t": record.transitions[-1]["t"],
            "state": record.state.value,
            "reason": record.transitions[-1].get("reason", ""),
            "record_id": record.record_id,
        })
        with self.new_event:
            self.new_event.notify_all()

    def _on_stored(self, msg):
        # The record id lands on the record only after the terminal transition
        # persisted; refresh the stored doc so restarts can find the record.
        record = self.sim.server.requests.get(msg.correlation_id)
        if record is not None:
            self.store.upsert_request(_record_doc(record))
        self.store.append_event(msg.correlation_id, "stored", {
            "t": msg.t, "record_id": msg.payload.get("record_id"),
            "data_loss": msg.payload.get("data_loss", False)})
        with self.new_event:
            self.new_event.notify_all()

    def _on_measurement(self, msg):
        body = {"t": msg.t, "sender": msg.sender}
        for key in ("count", "accumulated", "car", "v_eff", "fidelity", "coincidences"):
            if key in msg.payload:
                value = msg.payload[key]
                body[key] = None if value == float("inf") else value
        self.store.append_event(msg.correlation_id, "measurement", body)
        with self.new_event:
            self.new_event.notify_all()

    # -- operations used by the HTTP layer ------------------------------------------

    def submit(self, user: str, qnode_a: str, qnode_b: str, requirements: Requirements,
               idempotency_key: str | None = None) -> str:
        # Concurrent duplicate submissions (rapid double-click) must collapse to
        # one request id, so check-and-reserve happens under one lock.
        with self._idem_lock:
            if idempotency_key:
                existing = self.store.idempotent_request(idempotency_key)
                if existing:
                    return existing
            reply: "queue.Queue" = queue.Queue()
            self.commands.put(("submit", {
                "user": user, "qnode_a": qnode_a, "qnode_b": qnode_b,
                "requirements": requirements}, reply))
            status, value = reply.get(timeout=10.0)
            if status != "ok":
                raise RuntimeError(value)
            if idempotency_key:
                self.store.remember_idempotency(idempotency_key, value)
            return value

    def topology_doc(self) -> dict:
        with self.lock:
            topo = self.sim.server.topology
            if topo is None:
                raise RuntimeError("discovery has not produced a topology yet")
            return {
                "version": topo.version,
                "nodes": [{
                    "id": n.id, "kind": n.kind.value, "site": n.site,
                    "insertion_loss_db": n.insertion_loss_db,
                } for n in topo.nodes.values()],
                "links": [{
                    "id": l.id, "a": {"node": l.a.node, "port": l.a.port},
                    "b": {"node": l.b.node, "port": l.b.port},
                    "length_km": l.length_km,
                    "total_wavelengths": l.total_wavelengths,
                    "bands": list(l.bands),
                    "occupied": sorted(str(ch) for ch in l.occupied),
                } for l in topo.links.values()],
            }

    def request_doc(self, request_id: str) -> dict | None:
        with self.lock:
            record = self.sim.server.requests.get(request_id)
            if record is not None:
                return _record_doc(record)
        for doc in self.store.request_docs():
            if doc["id"] == request_id:
                return doc
        return None

    def request_docs(self) -> list[dict]:
        docs = {doc["id"]: doc for doc in self.store.request_docs()}
        with self.lock:
            for rid, record in self.sim.server.requests.items():
                docs[rid] = _record_doc(record)
        return [docs[rid] for rid in sorted(docs)]

    def qnode_ids(self) -> set[str]:
        with self.lock:
            topo = self.sim.server.topology
            if topo is None:
                return set()
            return {nid for nid, n in topo.nodes.items() if n.kind.value == "QNode"}


# -- HTTP layer ---------------------------------------------------------------------


def create_app(service: QnetService) -> FastAPI:
    app = FastAPI(title="qnetsim service", version="0.1.0")
    app.state.service = service

    def authenticate(request: Request, scope: str) -> Session:
        auth = request.headers.get("authorization", "")
        token = auth.removeprefix("Bearer ").strip()
        session = service.tokens.lookup(token)
        if session is None:
            service.store.audit("?", request.method + " " + request.url.path, "", "denied")
            raise HTTPException(status_code=401, detail={"code": "bad_token",
                                                         "message": "unknown token"})
        if scope not in session.scopes and "admin" not in session.scopes:
            service.store.audit(session.subject, request.method + " " + request.url.path,
                                "", "forbidden")
            raise HTTPException(status_code=403, detail={"code": "missing_scope",
                                                         "message": f"need {scope}"})
        service.store.audit(session.subject, request.method + " " + request.url.path,
                            request.path_params.get("request_id", ""), "ok")
        return session

    def require(scope: str):
        def dep(request: Request) -> Session:
            return authenticate(request, scope)
        return Depends(dep)

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/v1/auth")
    def auth(body: dict):
        session = service.tokens.lookup(str(body.get("token", "")))
        if session is None:
            service.store.audit("?", "POST /v1/auth", "", "denied")
            raise HTTPException(status_code=401, detail={"code": "bad_token",
                                                         "message": "unknown token"})
        service.store.audit(session.subject, "POST /v1/auth", "", "ok")
        return {"subject": session.subject, "scopes": sorted(session.scopes)}

    @app.get("/v1/topology")
    def topology(session: Session = require("read")):
        return service.topology_doc()

    @app.get("/v1/requests")
    def list_requests(session: Session = require("read")):
        return {"requests": service.request_docs()}

    @app.post("/v1/requests")
    def submit(body: dict, session: Session = require("submit")):
        qnode_a = str(body.get("qnode_a", ""))
        qnode_b = str(body.get("qnode_b", ""))
        known = service.qnode_ids()
        for q in (qnode_a, qnode_b):
            if q not in known:
                raise HTTPException(status_code=404, detail={
                    "code": "unknown_qnode", "message": f"no such Q-node: {q!r}"})
        try:
            requirements = Requirements(
                qubit_type=str(body.get("qubit_type", "TimeBin")),
                rate=float(body.get("rate", 0.0)),
                duration=float(body.get("duration", 0.0)),
                via_bsm=bool(body.get("via_bsm", False)),
            )
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=422, detail={
                "code": "invalid_requirements", "message": str(exc)})
        rid = service.submit(session.subject, qnode_a, qnode_b, requirements,
                             idempotency_key=body.get("idempotency_key"))
        return JSONResponse(status_code=201, content={"request_id": rid})

    @app.get("/v1/requests/{request_id}")
    def request_status(request_id: str, session: Session = require("read")):
        doc = service.request_doc(request_id)
        if doc is None:
            raise HTTPException(status_code=404, detail={
                "code": "unknown_request", "message": request_id})
        return doc

    @app.get("/v1/requests/{request_id}/measurements")
    def measurements(request_id: str, session: Session = require("read")):
        doc = service.request_doc(request_id)
        if doc is None:
            raise HTTPException(status_code=404, detail={
                "code": "unknown_request", "message": request_id})
        if doc["state"] not in ("Completed", "Failed"):
            raise HTTPException(status_code=409, detail={
                "code": "not_terminal", "message": f"request is {doc['state']}"})
        if not doc.get("record_id"):
            raise HTTPException(status_code=404, detail={
                "code": "no_record", "message": "no stored record (data loss?)"})
        return service.store.get(doc["record_id"])

    @app.get("/v1/audit")
    def audit_log(session: Session = require("admin")):
        return {"audit": service.store.audit_rows()}

    @app.get("/v1/events")
    def events(request: Request, cursor: int = 0, request_id: str | None = None,
               follow: bool = True, max_idle_s: float = 30.0,
               session: Session = require("read")):
        if cursor < 0:
            raise HTTPException(status_code=422, detail={
                "code": "invalid_cursor", "message": "cursor must be >= 0"})

        def stream():
            pos = cursor
            yield ": connected\n\n"
            idle = 0.0
            while True:
                batch = service.store.events_after(pos, request_id)
                if batch:
                    idle = 0.0
                    for event in batch:
                        pos = event["seq"]
                        yield f"id: {event['seq']}\nevent: {event['type']}\n" \
                              f"data: {json.dumps(event, sort_keys=True)}\n\n"
                elif not follow or idle >= max_idle_s:
                    return
                else:
                    with service.new_event:
                        service.new_event.wait(timeout=0.05)
                    idle += 0.05
                    if idle and int(idle * 20) % 40 == 0:
                        yield ": keepalive\n\n"

        return StreamingResponse(stream(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache"})

    return app


def build_service(topology_path: str | Path, tokens_path: str | Path,
                  db_path: str | Path, profile: str | None = None,
                  pace: float = 0.0, console_dir: str | Path | None = None
                  ) -> tuple[FastAPI, QnetService]:
    tokens = TokenTable.from_file(tokens_path)
    store = ServiceStore(db_path)
    service = QnetService(topology_path, tokens, store, profile=profile, pace=pace)
    app = create_app(service)
    if console_dir:
        app.mount("/console", StaticFiles(directory=str(console_dir), html=True),
                  name="console")
    service.start()
    return app, service
