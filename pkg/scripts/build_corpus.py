"""Regenerate the bundled policy set from its object-model definition.

    python scripts/build_corpus.py            # rewrite src/actipol/data/activity_policies.xml
    python scripts/build_corpus.py --check    # exit 1 if the bundled file differs
"""

import argparse
import sys
from pathlib import Path

from actipol.activity import Decision
from actipol.policy import (
    Apply,
    AttributeDesignator,
    AttributeValue,
    CombiningAlg,
    ForAllBinding,
    Match,
    ObligationExpression,
    Policy,
    PolicySet,
    ProvisionalAction,
    Quantified,
    Rule,
    Target,
    parse_policy_set,
    to_xml,
)
from actipol.store import Phase

OUT = Path(__file__).resolve().parents[1] / "src" / "actipol" / "data" / "activity_policies.xml"

RES = AttributeDesignator("resource", "resource-id")
DEP = AttributeDesignator("dependent", "dependent-id")
DESIRED = AttributeDesignator("dependent", "desired-state")


def f(name, *args):
    return Apply(name, tuple(args))


def dependency_rules(names, phase):
    """The five dependency templates; a ``None`` name drops that rule."""
    no_dep, no_update, immutable, update_no_chain, update_chain_ok = names
    p = AttributeValue(phase.value)
    unmet = f("not", f("state-equal", DEP, DESIRED))
    update = ProvisionalAction(phase, f("and", unmet, f("is-mutable", DEP)), "Update", ForAllBinding(phase, RES))
    rules = [
        Rule(no_dep, Decision.PERMIT, f("dependency-set-empty", RES, p)),
        Rule(no_update, Decision.PERMIT, f("and", f("not", f("dependency-set-empty", RES, p)), f("all-in-desired-state", RES, p))),
    ]
    if immutable:
        blocked = f("or", f("not", f("is-mutable", DEP)), f("chain-has-immutable-unmet", DEP, DESIRED))
        rules.append(Rule(immutable, Decision.DENY, Quantified("any", phase, RES, f("and", unmet, blocked))))
    rules.append(Rule(update_no_chain, Decision.PERMIT, f(
        "and",
        f("not", f("all-in-desired-state", RES, p)),
        Quantified("all", phase, RES, f("or", f("state-equal", DEP, DESIRED), f("and", f("is-mutable", DEP), f("chain-empty", DEP, DESIRED)))),
    ), (update,)))
    rules.append(Rule(update_chain_ok, Decision.PERMIT, f(
        "and",
        f("not", f("all-in-desired-state", RES, p)),
        Quantified("all", phase, RES, f(
            "or", f("state-equal", DEP, DESIRED), f("and", f("is-mutable", DEP), f("chain-all-in-required-state", DEP, DESIRED)),
        )),
        Quantified("any", phase, RES, f("and", unmet, f("not", f("chain-empty", DEP, DESIRED)))),
    ), (update,)))
    return tuple(rules)


def on_action(action):
    return Target(actions=(Match("action-id", action),))


def obligation(oid, on, state=None):
    return ObligationExpression(oid, on, (("state", state),) if state else ())


def build() -> PolicySet:
    permit, deny = Decision.PERMIT, Decision.DENY
    return PolicySet("1", CombiningAlg.ONLY_ONE_APPLICABLE, (
        Policy(
            "startActivityPolicy", CombiningAlg.FIRST_APPLICABLE, on_action("startActivity"),
            dependency_rules((
                "startActivityNoPreDep", "startActivityWithPreDepNoUpdate", "startActivityWithImmutablePreDepWithUpdateNeeded",
                "startActivityWithPreDepUpdateNoDepOfDep", "startActivityWithPreDepUpdateWithDepOfDepNoUpdateNeeded",
            ), Phase.PRE),
            (
                obligation("updateRequestedActivityState", permit, "running"),
                obligation("call-continueActivityPolicy", permit),
                obligation("updateRequestedActivityState", deny, "aborted"),
            ),
        ),
        Policy(
            "continueActivityPolicy", CombiningAlg.FIRST_APPLICABLE, on_action("continueActivity"),
            dependency_rules((
                "continueActivityNoOnDep", "continueActivityWithOnDepNoUpdate", "ongoingActivityWithImmutableOnDepWithUpdateNeeded",
                "continueActivityWithOnDepUpdateNoDepOfDep", "continueActivityWithOnDepUpdateWithDepOfDepNoUpdateNeeded",
            ), Phase.ONGOING),
            (obligation("call-continueActivityPolicy", permit), obligation("updateRequestedActivityState", deny, "revoked")),
        ),
        Policy(
            "finishActivityPolicy", CombiningAlg.PERMIT_OVERRIDES, on_action("finishActivity"),
            (Rule("finishActivityNoDependency", permit),),
            (obligation("updateRequestedActivityState", permit, "finished"), obligation("call-postUpdatePolicy", permit)),
        ),
        Policy(
            "postUpdatePolicy", CombiningAlg.FIRST_APPLICABLE, on_action("postUpdate"),
            # there is no deny rule for the post phase
            dependency_rules((
                "postUpdateNoPostDep", "postUpdateWithPostDepNoUpdate", None,
                "postUpdateWithPostDepUpdateNoDepOfDep", "postUpdateWithPostDepUpdateWithDepOfDepNoUpdateNeeded",
            ), Phase.POST),
            (obligation("updateRequestedActivityState", permit, "inactive"),),
        ),
    ))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--check", action="store_true")
    parser.add_argument("--out", type=Path, default=OUT)
    args = parser.parse_args(argv)
    ps = build()
    if args.check:
        same = parse_policy_set(args.out.read_text()) == ps
        print("bundled corpus is up to date" if same else "bundled corpus differs from the definition")
        return 0 if same else 1
    args.out.write_text(to_xml(ps))
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
