import csv
import io
import json
from collections import Counter

import pytest

from actipol.bench import (
    CSV_COLUMNS,
    BenchReport,
    BenchSpec,
    FixtureTooSmall,
    LocalTarget,
    LoopbackTarget,
    RunResult,
    bench_world,
    emit_report,
    run_bench,
)
from actipol.orchestration import ContinuityConfig
from actipol.oracle import oracle_decide


def sample_report():
    return BenchReport(
        [
            RunResult("start", 2, "-", 3.5, [1.5, 2.0]),
            RunResult("full", 2, "10x5ms", 120.0, [60.0, 60.0], Counter(exhausted=2)),
        ],
        target="local",
    )


def test_csv_and_json_agree(tmp_path):
    report = sample_report()
    rows_csv = list(csv.DictReader(io.StringIO(emit_report(report, "csv", tmp_path / "r.csv"))))
    rows_json = json.loads(emit_report(report, "json"))["rows"]
    assert len(rows_csv) == len(rows_json)
    for a, b in zip(rows_csv, rows_json):
        assert (a["mode"], int(a["count"]), a["continuity"], a["statistic"]) == (b["mode"], b["count"], b["continuity"], b["statistic"])
        assert float(a["value"]) == pytest.approx(b["value"])
    assert (tmp_path / "r.csv").read_text().startswith(",".join(CSV_COLUMNS))


def test_empty_report_is_header_only():
    assert emit_report(BenchReport(), "csv") == ",".join(CSV_COLUMNS) + "\n"


def test_stop_reasons_reported():
    rows = sample_report().rows()
    assert {"mode": "full", "count": 2, "continuity": "10x5ms", "statistic": "stop_exhausted", "value": 2.0} in rows


def test_statistics():
    r = RunResult("start", 3, "-", 9.0, [1.0, 2.0, 6.0])
    assert (r.mean_ms, r.median_ms) == (3.0, 2.0)
    assert 2.0 < r.p95_ms <= 6.0


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchSpec(request_counts=(20, 10))
    with pytest.raises(ValueError):
        BenchSpec(request_counts=(0, 10))
    with pytest.raises(ValueError):
        BenchSpec(mode="soak")
    with pytest.raises(ValueError):
        BenchSpec(mode="full", concurrency=4)


def test_bench_world_starts_are_permitted():
    w = bench_world(3)
    for i in range(3):
        decision, after = oracle_decide(w, f"task{i}", "pre")
        assert decision == "Permit"
        assert {a["id"]: a["state"] for a in after["activities"]}[f"prep{i}"] == "finished"


def test_fixture_too_small(policies):
    with pytest.raises(FixtureTooSmall):
        run_bench(BenchSpec(request_counts=(5,)), LocalTarget(policies), world_factory=lambda n: bench_world(2))


def test_start_mode_local(policies):
    report = run_bench(BenchSpec(request_counts=(5, 10), warmup_runs=0), LocalTarget(policies))
    assert [(r.count, len(r.samples_ms)) for r in report.results] == [(5, 5), (10, 10)]
    for r in report.results:
        assert r.mean_ms * r.count <= r.total_ms * 1.01


def test_full_mode_floor(policies):
    spec = BenchSpec(mode="full", request_counts=(2,), continuity=(ContinuityConfig(3, 5),), warmup_runs=0)
    report = run_bench(spec, LocalTarget(policies))
    r = report.find(2, "3x5ms")
    assert all(s >= 2 * 5 for s in r.samples_ms)
    assert r.stop_reasons == Counter(exhausted=2)


def test_concurrent_loopback_is_marked(policies):
    report = run_bench(BenchSpec(request_counts=(8,), warmup_runs=0, concurrency=4), LoopbackTarget(policies))
    assert not report.comparable and len(report.results[0].samples_ms) == 8
    assert json.loads(emit_report(report, "json"))["comparable"] is False
