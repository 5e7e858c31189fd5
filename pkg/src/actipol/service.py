"""HTTP front of the PEP.

Decisions are requested with GET, side effects included, the same way the
original prototype exposed them; administration uses PUT. Routing lives in
:meth:`DecisionService.dispatch` so it can be exercised without a socket.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlsplit

from . import default_fixture_path, default_policy_xml
from .activity import EXTERNAL_ACTIONS, ActionId, ActivityRecord, ActivityState, IllegalTransition
from .config import Config
from .orchestration import ContinuityConfig, Engine, RequestContext
from .policy import parse_policy_set
from .store import (
    DependencySpec,
    DependencyStore,
    InvariantViolation,
    Phase,
    TransitionDependency,
    UnknownActivity,
)

logger = logging.getLogger(__name__)


class HttpError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def build_engine(cfg: Config) -> Engine:
    if cfg.policy_path:
        with open(cfg.policy_path) as fh:
            policies = parse_policy_set(fh.read())
    else:
        policies = parse_policy_set(default_policy_xml())
    store = DependencyStore.load(cfg.fixture_path or default_fixture_path())
    return Engine(
        policies,
        store,
        ContinuityConfig(cfg.continuity_repetitions, cfg.continuity_interval_ms),
        cfg.chain_depth_limit,
    )


def _one(query: dict, name: str) -> str:
    values = query.get(name)
    if not values or not values[0].strip():
        raise HttpError(400, f"missing query parameter {name!r}")
    if len(values) > 1:
        raise HttpError(400, f"query parameter {name!r} given more than once")
    return values[0].strip()


class DecisionService:
    def __init__(self, engine: Engine):
        self.engine = engine

    def dispatch(self, method: str, target: str, body: bytes = b"") -> tuple[int, dict]:
        parts = urlsplit(target)
        path = parts.path.rstrip("/") or "/"
        query = parse_qs(parts.query, keep_blank_values=True)
        try:
            if method == "GET" and path == "/v1/decide":
                return 200, self.decide(query)
            if method == "GET" and path == "/healthz":
                return 200, {"status": "ok", "policies": len(self.engine.policies)}
            if method == "GET" and path.startswith("/v1/activities/"):
                return 200, self.engine.store.get_activity(path[len("/v1/activities/"):]).to_dict()
            if method == "GET" and path.startswith("/v1/reports/continuity/"):
                return 200, self.continuity_report(path[len("/v1/reports/continuity/"):])
            if method == "PUT" and path == "/v1/admin/activities":
                return 200, self.put_activities(self._json(body))
            if method == "PUT" and path == "/v1/admin/dependencies":
                return 200, self.put_dependencies(self._json(body))
            known = {"/v1/decide", "/healthz", "/v1/admin/activities", "/v1/admin/dependencies"}
            if path in known or path.startswith(("/v1/activities/", "/v1/reports/continuity/")):
                raise HttpError(405, f"{method} not allowed on {path}")
            raise HttpError(404, f"no route {path}")
        except HttpError as exc:
            return exc.status, {"error": str(exc)}
        except UnknownActivity as exc:
            return 404, {"error": str(exc)}
        except IllegalTransition as exc:
            return 409, {"error": "illegal transition", "reason": str(exc)}
        except InvariantViolation as exc:
            return 400, {"error": "InvariantViolation", "reason": str(exc)}

    @staticmethod
    def _json(body: bytes):
        try:
            return json.loads(body or b"null")
        except json.JSONDecodeError as exc:
            raise HttpError(400, f"invalid JSON body: {exc}") from None

    def decide(self, query: dict) -> dict:
        started = time.perf_counter()
        subject = _one(query, "subject")
        activity = _one(query, "activity")
        action_name = _one(query, "action")
        try:
            action = ActionId.parse(action_name)
        except ValueError:
            raise HttpError(400, f"unknown action {action_name!r}") from None
        if action not in EXTERNAL_ACTIONS:
            raise HttpError(400, f"{action.value} is internal and cannot be requested")
        response = self.engine.handle_request(RequestContext(subject, activity, action))
        body = response.to_dict()
        body["elapsed_ms"] = round((time.perf_counter() - started) * 1000.0, 3)
        return body

    def continuity_report(self, activity: str) -> dict:
        self.engine.store.get_activity(activity)
        report = self.engine.continuity_report(activity)
        if report is None:
            if self.engine.continuity_active(activity):
                return {"activity": activity, "status": "running"}
            raise HttpError(404, f"no continuity report for {activity!r}")
        return report.to_dict()

    def _guard(self, *activity_ids: str) -> None:
        for activity_id in activity_ids:
            if self.engine.store.is_busy(activity_id):
                raise HttpError(409, f"activity {activity_id!r} is being evaluated")

    def put_activities(self, payload) -> dict:
        items = payload if isinstance(payload, list) else [payload]
        records = []
        for item in items:
            try:
                records.append(ActivityRecord(
                    id=str(item["id"]),
                    current_state=ActivityState.parse(item.get("state", "inactive")),
                    mutable=bool(item.get("mutable", True)),
                ))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise HttpError(400, f"bad activity payload: {exc}") from None
        self._guard(*(r.id for r in records))
        for record in records:
            self.engine.store.admin_upsert(record)
        return {"updated": [r.id for r in records]}

    def put_dependencies(self, payload) -> dict:
        items = payload if isinstance(payload, list) else [payload]
        parsed = []
        for item in items:
            try:
                if "target_state" in item:
                    parsed.append(TransitionDependency(
                        activity=item["activity"],
                        target_state=ActivityState.parse(item["target_state"]),
                        requirements=tuple(
                            (r["activity"], ActivityState.parse(r["state"])) for r in item.get("requirements", [])
                        ),
                    ))
                else:
                    parsed.append(DependencySpec(
                        subject=item["subject"],
                        phase=Phase.parse(item["phase"]),
                        dependent=item["dependent"],
                        desired_state=ActivityState.parse(item["desired_state"]),
                    ))
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise HttpError(400, f"bad dependency payload: {exc}") from None
        for dep in parsed:
            ids = (dep.subject, dep.dependent) if isinstance(dep, DependencySpec) else (dep.activity,)
            self._guard(*ids)
            self.engine.store.admin_upsert(dep)
        return {"updated": len(parsed)}


class _Handler(BaseHTTPRequestHandler):
    service: DecisionService  # set on the subclass made by make_server
    protocol_version = "HTTP/1.1"
    # headers and body go out in separate writes; without this, delayed ACKs add ~40 ms
    disable_nagle_algorithm = True

    def _respond(self):
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        status, payload = self.service.dispatch(self.command, self.path, body)
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    do_GET = do_PUT = do_POST = do_DELETE = _respond

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)


def make_server(service: DecisionService, host: str = "127.0.0.1", port: int = 0) -> ThreadingHTTPServer:
    handler = type("Handler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


class BackgroundServer:
    """Run a server on a daemon thread; handy for tests and the benchmark."""

    def __init__(self, service: DecisionService, host: str = "127.0.0.1", port: int = 0):
        self.server = make_server(service, host, port)
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.server.server_address[:2]
        return f"http://{host}:{port}"

    def __enter__(self) -> "BackgroundServer":
        self._thread = threading.Thread(target=self.server.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join()


def serve(cfg: Config) -> None:
    engine = build_engine(cfg)
    server = make_server(DecisionService(engine), cfg.host, cfg.port)
    logger.info("serving %d policies on http://%s:%d", len(engine.policies), cfg.host, cfg.port)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        engine.shutdown()
        server.server_close()
