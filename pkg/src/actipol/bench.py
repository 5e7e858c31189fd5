"""Latency benchmarks: batched startActivity requests and full activity cycles.

Requests are issued one after another by default, so totals are comparable
with a sequential request collection. ``concurrency > 1`` overlaps start
requests and marks the report as not comparable.
"""

from __future__ import annotations

import csv
import http.client
import io
import json
import logging
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import urlencode, urlsplit

from .orchestration import ContinuityConfig, Engine, RequestContext
from .activity import ActionId, Decision
from .policy import PolicySet
from .store import DependencyStore

logger = logging.getLogger(__name__)

DEFAULT_COUNTS = (10, 20, 30, 40, 50)
DEFAULT_CONTINUITY = (
    ContinuityConfig(10, 5),
    ContinuityConfig(10, 10),
    ContinuityConfig(20, 5),
    ContinuityConfig(20, 10),
)


class BenchError(RuntimeError):
    pass


class FixtureTooSmall(BenchError):
    pass


@dataclass(frozen=True)
class BenchSpec:
    mode: str = "start"  # "start" | "full"
    request_counts: tuple[int, ...] = DEFAULT_COUNTS
    continuity: tuple[ContinuityConfig, ...] = DEFAULT_CONTINUITY
    warmup_runs: int = 1
    # >1 overlaps start requests; results are then not comparable to sequential runs
    concurrency: int = 1

    def __post_init__(self):
        if self.mode not in ("start", "full"):
            raise ValueError(f"unknown mode {self.mode!r}")
        counts = list(self.request_counts)
        if not counts or any(c <= 0 for c in counts) or counts != sorted(set(counts)):
            raise ValueError("request counts must be positive and strictly ascending")
        if self.warmup_runs < 0:
            raise ValueError("warmup_runs must be >= 0")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        if self.concurrency > 1 and self.mode != "start":
            raise ValueError("concurrent issue is only supported in start mode")


@dataclass
class RunResult:
    mode: str
    count: int
    continuity: str  # label like "10x5ms", or "-" in start mode
    total_ms: float
    samples_ms: list[float]
    stop_reasons: Counter = field(default_factory=Counter)

    @property
    def mean_ms(self) -> float:
        return statistics.fmean(self.samples_ms)

    @property
    def median_ms(self) -> float:
        return statistics.median(self.samples_ms)

    @property
    def p95_ms(self) -> float:
        if len(self.samples_ms) < 2:
            return self.samples_ms[0]
        return statistics.quantiles(self.samples_ms, n=20, method="inclusive")[18]


@dataclass
class BenchReport:
    results: list[RunResult] = field(default_factory=list)
    target: str = ""
    comparable: bool = True

    def rows(self) -> list[dict]:
        out = []
        for r in self.results:
            stats = [("total_ms", r.total_ms), ("mean_ms", r.mean_ms), ("median_ms", r.median_ms), ("p95_ms", r.p95_ms)]
            stats += [(f"stop_{reason}", float(n)) for reason, n in sorted(r.stop_reasons.items())]
            for name, value in stats:
                out.append({"mode": r.mode, "count": r.count, "continuity": r.continuity, "statistic": name, "value": round(value, 6)})
        return out

    def find(self, count: int, continuity: str = "-") -> RunResult:
        return next(r for r in self.results if r.count == count and r.continuity == continuity)


CSV_COLUMNS = ("mode", "count", "continuity", "statistic", "value")


def emit_report(report: BenchReport, fmt: str, path: Optional[str | Path] = None) -> str:
    """Render ``report`` as CSV or JSON; also write it to ``path`` when given."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(report.rows())
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(
            {
                "target": report.target,
                "comparable": report.comparable,
                "rows": report.rows(),
                "samples": [
                    {"mode": r.mode, "count": r.count, "continuity": r.continuity, "samples_ms": r.samples_ms}
                    for r in report.results
                ],
            },
            indent=2,
        ) + "\n"
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def bench_world(n: int) -> dict:
    """Fixture with ``n`` startable activities whose start always needs a provisional update.

    Each ``task{i}`` has a mutable pre-dependent that must be finished (and whose
    own transition has a satisfied requirement), a satisfied ongoing
    dependent, and a post-dependent that the post update finishes.
    """
    acts = [{"id": "base", "state": "finished", "mutable": False}]
    deps, chains = [], []
    for i in range(n):
        acts += [
            {"id": f"task{i}", "state": "inactive", "mutable": True},
            {"id": f"prep{i}", "state": "running", "mutable": True},
            {"id": f"feed{i}", "state": "running", "mutable": False},
            {"id": f"post{i}", "state": "running", "mutable": True},
        ]
        deps += [
            {"subject": f"task{i}", "phase": "pre", "dependent": f"prep{i}", "desired_state": "finished"},
            {"subject": f"task{i}", "phase": "ongoing", "dependent": f"feed{i}", "desired_state": "running"},
            {"subject": f"task{i}", "phase": "post", "dependent": f"post{i}", "desired_state": "finished"},
        ]
        chains.append({"activity": f"prep{i}", "target_state": "finished",
                       "requirements": [{"activity": "base", "state": "finished"}]})
    return {"activities": acts, "dependencies": deps, "transition_dependencies": chains}


# -- targets -------------------------------------------------------------------


class LocalTarget:
    """Calls the engine in-process."""

    name = "local"

    def __init__(self, policies: PolicySet, chain_depth_limit: int = 2):
        self.policies = policies
        self.chain_depth_limit = chain_depth_limit
        self.engine: Optional[Engine] = None

    def reset(self, world: dict, continuity: ContinuityConfig) -> None:
        self.close()
        self.engine = Engine(self.policies, DependencyStore.from_dict(world), continuity, self.chain_depth_limit)

    def request(self, activity: str, action: str) -> dict:
        return self.engine.handle_request(RequestContext("bench", activity, ActionId.parse(action))).to_dict()

    def wait_continuity(self, activity: str) -> dict:
        report = self.engine.wait_continuity(activity, timeout=60)
        if report is None:
            raise BenchError(f"no continuity report for {activity}")
        return report.to_dict()

    def close(self) -> None:
        if self.engine is not None:
            self.engine.shutdown()
            self.engine = None


class HttpTarget:
    """Talks to a decision service over keep-alive HTTP, one connection per thread."""

    name = "http"

    def __init__(self, base_url: str, timeout: float = 30.0):
        parts = urlsplit(base_url)
        self.host, self.port = parts.hostname, parts.port or 80
        self.timeout = timeout
        self._local = threading.local()
        self._conns: list[http.client.HTTPConnection] = []
        self._conns_lock = threading.Lock()

    def _connection(self) -> http.client.HTTPConnection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = self._local.conn = http.client.HTTPConnection(self.host, self.port, timeout=self.timeout)
            with self._conns_lock:
                self._conns.append(conn)
        return conn

    def _call(self, method: str, path: str, body: Optional[dict] = None) -> tuple[int, dict]:
        conn = self._connection()
        data = json.dumps(body).encode() if body is not None else None
        headers = {"Content-Type": "application/json"} if data else {}
        try:
            conn.request(method, path, body=data, headers=headers)
            resp = conn.getresponse()
            payload = json.loads(resp.read() or b"{}")
        except (http.client.HTTPException, ConnectionError):
            conn.close()
            self._local.conn = None
            raise
        return resp.status, payload

    def reset(self, world: dict, continuity: ContinuityConfig) -> None:
        # the remote store keeps its own continuity settings; only states are reset
        status, payload = self._call("PUT", "/v1/admin/activities", world["activities"])
        if status != 200:
            raise BenchError(f"reset failed: {status} {payload}")

    def request(self, activity: str, action: str) -> dict:
        status, payload = self._call("GET", "/v1/decide?" + urlencode({"subject": "bench", "activity": activity, "action": action}))
        if status != 200:
            raise BenchError(f"{action} {activity}: HTTP {status} {payload}")
        return payload

    def wait_continuity(self, activity: str, poll_s: float = 0.001) -> dict:
        deadline = time.monotonic() + 60
        while time.monotonic() < deadline:
            status, payload = self._call("GET", f"/v1/reports/continuity/{activity}")
            if status == 200 and "stop_reason" in payload:
                return payload
            time.sleep(poll_s)
        raise BenchError(f"continuity for {activity} did not finish")

    def close(self) -> None:
        with self._conns_lock:
            conns, self._conns = self._conns, []
        for conn in conns:
            conn.close()
        # connections are per thread; drop this thread's handle too
        self._local = threading.local()


class LoopbackTarget(HttpTarget):
    """Starts a fresh in-process HTTP server per configuration and benchmarks it over loopback."""

    name = "loopback"

    def __init__(self, policies: PolicySet, chain_depth_limit: int = 2):
        self.policies = policies
        self.chain_depth_limit = chain_depth_limit
        self._server = None
        self._engine: Optional[Engine] = None
        super().__init__("http://127.0.0.1:1")

    def reset(self, world: dict, continuity: ContinuityConfig) -> None:
        from .service import BackgroundServer, DecisionService

        self.close()
        self._engine = Engine(self.policies, DependencyStore.from_dict(world), continuity, self.chain_depth_limit)
        self._server = BackgroundServer(DecisionService(self._engine)).__enter__()
        self.host, self.port = self._server.server.server_address[:2]

    def close(self) -> None:
        super().close()
        if self._server is not None:
            self._server.__exit__(None, None, None)
            self._server = None
        if self._engine is not None:
            self._engine.shutdown()
            self._engine = None


# -- driver ---------------------------------------------------------------------


def _check_permit(payload: dict, action: str, activity: str) -> None:
    if payload.get("decision") != Decision.PERMIT.value.lower():
        raise BenchError(f"benchmark saw a deny on {action} {activity}: {payload}")


def _start_one(target, i: int) -> float:
    s = time.perf_counter()
    payload = target.request(f"task{i}", ActionId.START.value)
    elapsed = (time.perf_counter() - s) * 1000.0
    _check_permit(payload, "start", f"task{i}")
    return elapsed


def _start_pass(target, count: int, concurrency: int = 1) -> tuple[float, list[float]]:
    t0 = time.perf_counter()
    if concurrency == 1:
        samples = [_start_one(target, i) for i in range(count)]
    else:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            samples = list(pool.map(lambda i: _start_one(target, i), range(count)))
    return (time.perf_counter() - t0) * 1000.0, samples


def _full_pass(target, count: int) -> tuple[float, list[float], Counter]:
    samples, reasons = [], Counter()
    t0 = time.perf_counter()
    for i in range(count):
        activity = f"task{i}"
        s = time.perf_counter()
        _check_permit(target.request(activity, ActionId.START.value), "start", activity)
        report = target.wait_continuity(activity)
        reasons[report["stop_reason"]] += 1
        if report["final_state"] != "running":
            raise BenchError(f"{activity} left running during continuity: {report}")
        _check_permit(target.request(activity, ActionId.FINISH.value), "finish", activity)
        samples.append((time.perf_counter() - s) * 1000.0)
    return (time.perf_counter() - t0) * 1000.0, samples, reasons


def run_bench(
    spec: BenchSpec,
    target,
    world_factory: Callable[[int], dict] = bench_world,
    progress: Optional[Callable[[RunResult], None]] = None,
) -> BenchReport:
    report = BenchReport(target=getattr(target, "name", type(target).__name__), comparable=spec.concurrency == 1)
    need = max(spec.request_counts)
    world = world_factory(need)
    available = sum(1 for a in world["activities"] if a["id"].startswith("task"))
    if available < need:
        raise FixtureTooSmall(f"fixture has {available} startable activities, need {need}")

    configs = spec.continuity if spec.mode == "full" else (ContinuityConfig(),)
    try:
        for cfg in configs:
            for _ in range(spec.warmup_runs):
                target.reset(world, cfg)
                if spec.mode == "start":
                    _start_pass(target, spec.request_counts[0], spec.concurrency)
                else:
                    _full_pass(target, spec.request_counts[0])
            for count in spec.request_counts:
                target.reset(world, cfg)
                if spec.mode == "start":
                    total, samples = _start_pass(target, count, spec.concurrency)
                    result = RunResult("start", count, "-", total, samples)
                else:
                    total, samples, reasons = _full_pass(target, count)
                    result = RunResult("full", count, cfg.label(), total, samples, reasons)
                report.results.append(result)
                if progress is not None:
                    progress(result)
    finally:
        target.close()
    return report
