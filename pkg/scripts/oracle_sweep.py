"""Compare the PDP with the reference oracle on many random worlds.

    python scripts/oracle_sweep.py --n 100000 --activities 6 --depth 3 --seed 1

Prints the decision mix and stops at the first disagreement with the world
that caused it, so it can be replayed with ``actipol oracle decide``.
"""

import argparse
import collections
import json
import random
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from actipol import load_default_policies  # noqa: E402
from actipol.oracle import oracle_decide  # noqa: E402
from tests.worlds import PHASE_ACTION, pdp_decide, random_world  # noqa: E402


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--n", type=int, default=20_000)
    parser.add_argument("--activities", type=int, default=6)
    parser.add_argument("--depth", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    policies = load_default_policies()
    rng = random.Random(args.seed)
    mix = collections.Counter()
    t0 = time.perf_counter()
    for i in range(args.n):
        phase = rng.choice(list(PHASE_ACTION))
        world, subject = random_world(rng, args.activities, phase)
        got = pdp_decide(policies, world, subject, phase, args.depth)
        want = oracle_decide(world, subject, phase, args.depth)
        if got != want:
            print(f"disagreement at case {i} ({phase}): pdp={got[0]} oracle={want[0]}")
            print(json.dumps(world, indent=2))
            return 1
        mix[(phase, want[0])] += 1
    print(f"{args.n} cases agree in {time.perf_counter() - t0:.1f}s")
    for (phase, decision), n in sorted(mix.items()):
        print(f"  {phase:8} {decision:14} {n}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
