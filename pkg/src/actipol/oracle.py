"""Brute-force reference for dependency decisions.

Deliberately self-contained: it works on plain dicts in the fixture-file shape
and imports nothing from the rest of the package, so agreement with the PDP is
evidence rather than tautology.

    world = {
        "activities": [{"id": "plowing", "state": "running", "mutable": true}, ...],
        "dependencies": [{"subject": ..., "phase": ..., "dependent": ..., "desired_state": ...}],
        "transition_dependencies": [{"activity": ..., "target_state": ..., "requirements": [...]}],
    }
"""

from __future__ import annotations

import argparse
import copy
import json
import sys

PERMIT, DENY, NOT_APPLICABLE = "Permit", "Deny", "NotApplicable"

# phases whose policy has a rule denying on an immutable conflict
PHASES_WITH_DENY = ("pre", "ongoing")


class OracleUnknownActivity(KeyError):
    pass


def _index(world):
    states = {}
    mutable = {}
    for a in world["activities"]:
        states[a["id"]] = a["state"].lower()
        mutable[a["id"]] = bool(a.get("mutable", True))
    trans = {}
    for t in world.get("transition_dependencies", []):
        trans[(t["activity"], t["target_state"].lower())] = [
            (r["activity"], r["state"].lower()) for r in t.get("requirements", [])
        ]
    return states, mutable, trans


def chain_members(states, trans, activity, target, depth_limit, level=2):
    """Every (activity, state) requirement reachable from (activity, target).

    A requirement only pulls in its own requirements when it is not yet in the
    required state, and nothing below ``depth_limit`` levels is read.
    """
    if level > depth_limit:
        return set()
    found = set()
    for req_activity, req_state in trans.get((activity, target), []):
        found.add((req_activity, req_state))
        if states[req_activity] != req_state:
            found |= chain_members(states, trans, req_activity, req_state, depth_limit, level + 1)
    return found


def oracle_decide(world, subject, phase, depth_limit=2):
    """Return ``(decision, updated_world)``; the input world is never modified."""
    states, mutable, trans = _index(world)
    if subject not in states:
        raise OracleUnknownActivity(subject)
    phase = phase.lower()
    result = copy.deepcopy(world)

    deps = [
        (d["dependent"], d["desired_state"].lower())
        for d in world.get("dependencies", [])
        if d["subject"] == subject and d["phase"].lower() == phase
    ]
    # no dependencies at all
    if len(deps) == 0:
        return PERMIT, result

    needs_update = [(a, want) for a, want in deps if states[a] != want]
    # everything already where it should be
    if len(needs_update) == 0:
        return PERMIT, result

    chain_of = {a: chain_members(states, trans, a, want, depth_limit) for a, want in needs_update}

    def blocked_by_immutable(a):
        if not mutable[a]:
            return True
        for r, want in chain_of[a]:
            if states[r] != want and not mutable[r]:
                return True
        return False

    if any(blocked_by_immutable(a) for a, _ in needs_update):
        return (DENY if phase in PHASES_WITH_DENY else NOT_APPLICABLE), result

    chains_ready = all(states[r] == want for a, _ in needs_update for r, want in chain_of[a])
    if not chains_ready:
        # a dependent of a dependent would itself need changing: nothing covers this
        return NOT_APPLICABLE, result

    targets = dict(needs_update)
    for a in result["activities"]:
        if a["id"] in targets:
            a["state"] = targets[a["id"]]
    return PERMIT, result


def main(argv=None):
    parser = argparse.ArgumentParser(prog="actipol oracle", description="reference dependency decisions")
    sub = parser.add_subparsers(dest="command", required=True)
    decide = sub.add_parser("decide")
    decide.add_argument("--world", required=True, help="fixture JSON file")
    decide.add_argument("--subject", required=True)
    decide.add_argument("--phase", default="pre", choices=["pre", "ongoing", "post"])
    decide.add_argument("--depth", type=int, default=2)
    args = parser.parse_args(argv)

    with open(args.world) as fh:
        world = json.load(fh)
    try:
        decision, after = oracle_decide(world, args.subject, args.phase, args.depth)
    except OracleUnknownActivity as exc:
        print(f"unknown activity {exc.args[0]!r}", file=sys.stderr)
        return 2
    before = {a["id"]: a["state"] for a in world["activities"]}
    changed = {a["id"]: a["state"] for a in after["activities"] if before[a["id"]] != a["state"]}
    print(json.dumps({"decision": decision, "updates": changed}, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
