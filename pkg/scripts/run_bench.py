"""Run both latency experiments and write one report per mode.

    python scripts/run_bench.py --target loopback --outdir results/

Produces ``start.csv`` (batched startActivity totals for 10..50 requests) and
``full.csv`` (start -> continuity -> finish cycles for the four continuity
configurations), and prints a compact table of each.
"""

import argparse
import sys
from pathlib import Path

from actipol import load_default_policies
from actipol.bench import DEFAULT_CONTINUITY, DEFAULT_COUNTS, BenchSpec, HttpTarget, LocalTarget, LoopbackTarget, emit_report, run_bench


def make_target(name, policies):
    if name == "local":
        return LocalTarget(policies)
    if name == "loopback":
        return LoopbackTarget(policies)
    return HttpTarget(name)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--target", default="loopback", help="local | loopback | http://host:port")
    parser.add_argument("--outdir", type=Path, default=Path("results"))
    parser.add_argument("--full-counts", default="10,20,30,40,50")
    parser.add_argument("--warmup", type=int, default=1)
    args = parser.parse_args(argv)

    policies = load_default_policies()
    args.outdir.mkdir(parents=True, exist_ok=True)

    start = run_bench(BenchSpec("start", DEFAULT_COUNTS, warmup_runs=args.warmup), make_target(args.target, policies))
    emit_report(start, "csv", args.outdir / "start.csv")
    print("requests  total_ms  mean_ms")
    for r in start.results:
        print(f"{r.count:8d}  {r.total_ms:8.1f}  {r.mean_ms:7.2f}")

    counts = tuple(int(c) for c in args.full_counts.split(","))
    full = run_bench(BenchSpec("full", counts, DEFAULT_CONTINUITY, warmup_runs=args.warmup), make_target(args.target, policies))
    emit_report(full, "csv", args.outdir / "full.csv")
    print("\ncontinuity  requests  total_ms  mean_ms")
    for r in full.results:
        print(f"{r.continuity:>10}  {r.count:8d}  {r.total_ms:8.1f}  {r.mean_ms:7.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
