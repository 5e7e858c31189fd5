"""Command line entry point: ``actipol serve|decide|policy|bench|oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import default_policy_xml
from .activity import EXTERNAL_ACTIONS, ActionId, IllegalTransition
from .bench import DEFAULT_COUNTS, DEFAULT_CONTINUITY, BenchError, BenchSpec, HttpTarget, LocalTarget, LoopbackTarget, emit_report, run_bench
from .config import load_config
from .orchestration import ContinuityConfig, RequestContext
from .policy import (
    JsonSyntaxError,
    SchemaViolation,
    XmlSyntaxError,
    from_canonical_json,
    parse_policy_set,
    to_canonical_json,
    to_xml,
    validate_corpus,
)
from .store import UnknownActivity


def _read_policies(path: str | None):
    if path is None:
        return parse_policy_set(default_policy_xml())
    text = Path(path).read_text()
    if path.endswith(".json"):
        return from_canonical_json(text)
    return parse_policy_set(text)


def _csv_ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _csv_continuity(text: str) -> tuple[ContinuityConfig, ...]:
    return tuple(ContinuityConfig.parse(x.strip()) for x in text.split(",") if x.strip())


def cmd_serve(args) -> int:
    from .service import serve

    cfg = load_config(args.config)
    if args.host:
        cfg = replace(cfg, host=args.host)
    if args.port is not None:
        cfg = replace(cfg, port=args.port)
    serve(cfg)
    return 0


def cmd_decide(args) -> int:
    from .service import build_engine

    cfg = load_config(args.config)
    if args.policies:
        cfg = replace(cfg, policy_path=args.policies)
    if args.fixture:
        cfg = replace(cfg, fixture_path=args.fixture)
    action = ActionId.parse(args.action)
    if action not in EXTERNAL_ACTIONS:
        print(f"{action.value} is internal and cannot be requested", file=sys.stderr)
        return 2
    engine = build_engine(cfg)
    try:
        response = engine.handle_request(RequestContext(args.subject, args.activity, action))
        out = {"response": response.to_dict()}
        if args.wait:
            report = engine.wait_continuity(args.activity, timeout=60)
            if report is not None:
                out["continuity"] = report.to_dict()
    except UnknownActivity as exc:
        print(f"unknown activity: {exc}", file=sys.stderr)
        return 2
    except IllegalTransition as exc:
        print(f"illegal transition: {exc}", file=sys.stderr)
        return 3
    finally:
        engine.shutdown()
    print(json.dumps(out, indent=2))
    return 0


def cmd_policy_lint(args) -> int:
    try:
        ps = _read_policies(args.file)
    except (XmlSyntaxError, JsonSyntaxError, SchemaViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    diags = validate_corpus(ps)
    for d in diags:
        print(d)
    print(f"{len(ps)} policies, {len(diags)} diagnostics")
    return 1 if any(d.level == "error" for d in diags) else 0


def cmd_policy_convert(args) -> int:
    try:
        ps = _read_policies(args.src)
    except (XmlSyntaxError, JsonSyntaxError, SchemaViolation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    fmt = args.to or ("xml" if args.dst and args.dst.endswith(".xml") else "json")
    text = to_canonical_json(ps) if fmt == "json" else to_xml(ps)
    if args.dst:
        Path(args.dst).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_bench(args) -> int:
    fmt = args.format or ("json" if args.out and args.out.endswith(".json") else "csv")
    spec = BenchSpec(
        mode=args.mode,
        request_counts=_csv_ints(args.counts),
        continuity=_csv_continuity(args.continuity),
        warmup_runs=args.warmup,
        concurrency=args.concurrent,
    )
    if args.target == "local":
        target = LocalTarget(_read_policies(args.policies))
    elif args.target == "loopback":
        target = LoopbackTarget(_read_policies(args.policies))
    else:
        target = HttpTarget(args.target)

    def progress(r):
        print(f"{r.mode} n={r.count} {r.continuity}: total {r.total_ms:.1f} ms, mean {r.mean_ms:.3f} ms", file=sys.stderr)

    try:
        report = run_bench(spec, target, progress=progress)
    except BenchError as exc:
        print(f"bench failed: {exc}", file=sys.stderr)
        return 1
    if not report.comparable:
        print("note: concurrent run, totals are not comparable to sequential runs", file=sys.stderr)
    text = emit_report(report, fmt, args.out)
    if not args.out:
        sys.stdout.write(text)
    return 0


def cmd_oracle(args) -> int:
    from .oracle import main as oracle_main

    rest = args.rest[1:] if args.rest[:1] == ["--"] else args.rest
    return oracle_main(rest)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actipol", description="activity-dependency policy engine")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP decision service")
    p.add_argument("--config")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("decide", help="one request against a local engine")
    p.add_argument("--activity", required=True)
    p.add_argument("--action", required=True, help="startActivity | holdActivity | finishActivity")
    p.add_argument("--subject", default="cli")
    p.add_argument("--config")
    p.add_argument("--policies")
    p.add_argument("--fixture")
    p.add_argument("--wait", action="store_true", help="wait for the continuity loop and print its report")
    p.set_defaults(func=cmd_decide)

    p = sub.add_parser("policy", help="policy file tools")
    psub = p.add_subparsers(dest="policy_command", required=True)
    q = psub.add_parser("lint")
    q.add_argument("file", nargs="?", help="XML or canonical JSON; defaults to the bundled set")
    q.set_defaults(func=cmd_policy_lint)
    q = psub.add_parser("convert")
    q.add_argument("src")
    q.add_argument("dst", nargs="?")
    q.add_argument("--to", choices=["xml", "json"])
    q.set_defaults(func=cmd_policy_convert)

    p = sub.add_parser("bench", help="latency benchmark")
    p.add_argument("--mode", choices=["start", "full"], default="start")
    p.add_argument("--counts", default=",".join(map(str, DEFAULT_COUNTS)))
    p.add_argument("--continuity", default=",".join(c.label().removesuffix("ms") for c in DEFAULT_CONTINUITY))
    p.add_argument("--target", default="loopback", help="local | loopback | http://host:port")
    p.add_argument("--policies")
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--concurrent", type=int, default=1, metavar="N", help="overlap N start requests (non-comparable)")
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"])
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("oracle", help="reference decisions", add_help=False)
    p.add_argument("rest", nargs=argparse.REMAINDER)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    # REMAINDER does not capture a leading flag such as --help, so fence off oracle's arguments
    if "oracle" in argv:
        i = argv.index("oracle")
        if all(a in ("-v", "--verbose") for a in argv[:i]):
            argv[i + 1:i + 1] = ["--"]
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
