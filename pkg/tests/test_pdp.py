import itertools
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from actipol.activity import ActionId, ActivityState as S, Decision
from actipol.oracle import oracle_decide
from actipol.pdp import (
    EvaluationContext,
    RequestContext,
    Result,
    UnknownFunction,
    combine,
    dependency_chain,
    eval_condition,
    evaluate,
    evaluate_policy,
)
from actipol.policy import (
    Apply,
    AttributeDesignator,
    AttributeValue,
    CombiningAlg,
    Match,
    Policy,
    PolicySet,
    Rule,
    Target,
)
from actipol.store import DependencyStore, UnknownActivity

from .conftest import world
from .worlds import pdp_decide, random_world

RES = AttributeDesignator("resource", "resource-id")


def ctx_for(store, activity, action=ActionId.START, depth=2):
    return EvaluationContext(RequestContext("t", activity, action), store.begin_txn(), depth)


def decide(policies, w, subject, action=ActionId.START, depth=2):
    store = DependencyStore.from_dict(w)
    ctx = ctx_for(store, subject, action, depth)
    result = evaluate(policies, ctx)
    if result.decision is Decision.PERMIT:
        ctx.txn.commit()
    else:
        ctx.txn.rollback()
    return result, store


# -- conditions ---------------------------------------------------------------------


def test_state_equal(farm_store):
    ctx = ctx_for(farm_store, "sowing")
    assert eval_condition(Apply("state-equal", (AttributeValue("soil_testing"), AttributeValue("finished"))), ctx)
    assert not eval_condition(Apply("state-equal", (AttributeValue("plowing"), AttributeValue("finished"))), ctx)


def test_dependency_set_empty(farm_store):
    ctx = ctx_for(farm_store, "sowing")
    assert not eval_condition(Apply("dependency-set-empty", (RES, AttributeValue("pre"))), ctx)
    assert eval_condition(Apply("dependency-set-empty", (AttributeValue("plowing"), AttributeValue("pre"))), ctx)


def test_boolean_connectives(farm_store):
    ctx = ctx_for(farm_store, "sowing")
    t, f = AttributeValue("true", "boolean"), AttributeValue("false", "boolean")
    assert eval_condition(Apply("and", (t, Apply("not", (f,)))), ctx)
    assert not eval_condition(Apply("or", (f, f)), ctx)
    assert eval_condition(Apply("and", ()), ctx)


def test_condition_errors(farm_store):
    ctx = ctx_for(farm_store, "sowing")
    with pytest.raises(UnknownFunction):
        eval_condition(Apply("teleport", ()), ctx)
    with pytest.raises(UnknownActivity):
        eval_condition(Apply("is-mutable", (AttributeValue("ghost"),)), ctx)


def test_depth_limit_must_be_positive(farm_store):
    with pytest.raises(ValueError):
        EvaluationContext(RequestContext("t", "sowing", ActionId.START), farm_store, 0)


def test_dependency_chain_depth():
    store = DependencyStore.from_dict(world(
        [("b", "running", True), ("c", "running", True), ("d", "running", True), ("e", "finished", True)],
        chains=[("b", "finished", [("c", "finished"), ("e", "finished")]), ("c", "finished", [("d", "finished")])],
    ))
    assert dependency_chain(store, "b", S.FINISHED, 1) == []
    assert dependency_chain(store, "b", S.FINISHED, 2) == [("c", S.FINISHED), ("e", S.FINISHED)]
    assert dependency_chain(store, "b", S.FINISHED, 3) == [("c", S.FINISHED), ("e", S.FINISHED), ("d", S.FINISHED)]


# -- policy selection ---------------------------------------------------------------------


def test_start_selects_start_policy(policies, farm_world):
    result, _ = decide(policies, farm_world, "sowing")
    assert result.policy_id == "startActivityPolicy"


def test_action_without_policy_is_not_applicable(policies, farm_store):
    # no policy in the corpus targets holdActivity
    assert evaluate(policies, ctx_for(farm_store, "plowing", ActionId.HOLD)).decision is Decision.NOT_APPLICABLE


def test_two_matching_policies_indeterminate(policies, farm_store):
    start = policies.get("startActivityPolicy")
    doubled = replace(policies, policies=policies.policies + (replace(start, policy_id="again"),))
    result = evaluate(doubled, ctx_for(farm_store, "sowing"))
    assert result.decision is Decision.INDETERMINATE
    assert farm_store.snapshot()["plowing"] == ("running", True)


def test_unknown_requested_activity(policies, farm_store):
    with pytest.raises(UnknownActivity):
        evaluate(policies, ctx_for(farm_store, "ghost"))


# -- rule templates -----------------------------------------------------------------------------


def test_no_pre_deps_permits(policies):
    result, _ = decide(policies, world([("a", "dormant", True)]), "a")
    assert (result.decision, result.rule_id) == (Decision.PERMIT, "startActivityNoPreDep")


def test_satisfied_pre_deps_permit(policies):
    w = world([("a", "dormant", True), ("b", "finished", False)], [("a", "pre", "b", "finished")])
    result, _ = decide(policies, w, "a")
    assert (result.decision, result.rule_id) == (Decision.PERMIT, "startActivityWithPreDepNoUpdate")


def test_mutable_pre_dep_updated(policies):
    w = world([("sowing", "dormant", True), ("plowing", "running", True)], [("sowing", "pre", "plowing", "finished")])
    result, store = decide(policies, w, "sowing")
    assert result.decision is Decision.PERMIT
    # the Deny rule sits earlier in document order but does not apply
    assert result.rule_id == "startActivityWithPreDepUpdateNoDepOfDep"
    assert result.updates == [("plowing", S.FINISHED)]
    assert store.get_activity("plowing").current_state is S.FINISHED


def test_immutable_pre_dep_denies(policies):
    w = world([("sowing", "dormant", True), ("plowing", "running", False)], [("sowing", "pre", "plowing", "finished")])
    result, store = decide(policies, w, "sowing")
    assert (result.decision, result.rule_id) == (Decision.DENY, "startActivityWithImmutablePreDepWithUpdateNeeded")
    assert store.get_activity("plowing").current_state is S.RUNNING
    assert [o.params.get("state") for o in result.obligations] == ["aborted"]


def test_mutability_toggle(policies):
    for mutable, expected in [(True, Decision.PERMIT), (False, Decision.DENY), (True, Decision.PERMIT)]:
        w = world([("s", "dormant", True), ("d", "running", mutable)], [("s", "pre", "d", "finished")])
        assert decide(policies, w, "s")[0].decision is expected


def test_satisfied_chain_permits(policies, farm_world):
    result, store = decide(policies, farm_world, "sowing")
    assert (result.decision, result.rule_id) == (Decision.PERMIT, "startActivityWithPreDepUpdateWithDepOfDepNoUpdateNeeded")
    assert store.get_activity("plowing").current_state is S.FINISHED


def test_immutable_chain_member_denies(policies):
    w = world(
        [("s", "dormant", True), ("d", "running", True), ("c", "running", False)],
        [("s", "pre", "d", "finished")],
        [("d", "finished", [("c", "finished")])],
    )
    result, store = decide(policies, w, "s")
    assert result.decision is Decision.DENY
    assert store.snapshot()["d"] == ("running", True)


def test_chain_needing_update_is_not_applicable(policies):
    w = world(
        [("s", "dormant", True), ("d", "running", True), ("c", "running", True)],
        [("s", "pre", "d", "finished")],
        [("d", "finished", [("c", "finished")])],
    )
    result, store = decide(policies, w, "s")
    assert result.decision is Decision.NOT_APPLICABLE
    assert store.snapshot() == DependencyStore.from_dict(w).snapshot()


def test_no_rule_applies_gives_not_applicable(farm_store):
    never = Apply("not", (Apply("and", ()),))
    policy = Policy("p", CombiningAlg.FIRST_APPLICABLE, Target(actions=(Match("action-id", "startActivity"),)),
                    (Rule("r1", Decision.PERMIT, never), Rule("r2", Decision.DENY, never)))
    assert evaluate_policy(policy, ctx_for(farm_store, "sowing")).decision is Decision.NOT_APPLICABLE


def test_condition_error_is_indeterminate(farm_store):
    bad = Apply("is-mutable", (AttributeValue("ghost"),))
    policy = Policy("p", CombiningAlg.FIRST_APPLICABLE, Target(actions=(Match("action-id", "startActivity"),)),
                    (Rule("r", Decision.PERMIT, bad),))
    ps = PolicySet("s", CombiningAlg.ONLY_ONE_APPLICABLE, (policy,))
    assert evaluate(ps, ctx_for(farm_store, "sowing")).decision is Decision.INDETERMINATE


def test_update_order_does_not_matter(policies):
    acts = [("s", "dormant", True), ("x", "running", True), ("y", "dormant", True), ("z", "running", True)]
    deps = [("s", "pre", "x", "finished"), ("s", "pre", "y", "running"), ("s", "pre", "z", "hold")]
    outcomes = set()
    for perm in itertools.permutations(deps):
        _, store = decide(policies, world(acts, list(perm)), "s")
        outcomes.add(tuple(sorted(store.snapshot().items())))
    assert len(outcomes) == 1


# -- combining algorithms ---------------------------------------------------------------------------


R = {d: Result(d, rule_id=d.value) for d in Decision}


@pytest.mark.parametrize(
    "alg,inputs,expected",
    [
        (CombiningAlg.PERMIT_OVERRIDES, ["Deny", "Permit"], "Permit"),
        (CombiningAlg.PERMIT_OVERRIDES, ["Deny", "Indeterminate"], "Indeterminate"),
        (CombiningAlg.PERMIT_OVERRIDES, ["NotApplicable", "Deny"], "Deny"),
        (CombiningAlg.DENY_OVERRIDES, ["Permit", "Deny"], "Deny"),
        (CombiningAlg.DENY_OVERRIDES, ["Permit", "Indeterminate"], "Indeterminate"),
        (CombiningAlg.FIRST_APPLICABLE, ["NotApplicable", "Deny", "Permit"], "Deny"),
        (CombiningAlg.ONLY_ONE_APPLICABLE, ["NotApplicable", "Permit"], "Permit"),
        (CombiningAlg.ONLY_ONE_APPLICABLE, ["Deny", "Permit"], "Indeterminate"),
        (CombiningAlg.ONLY_ONE_APPLICABLE, [], "NotApplicable"),
        (CombiningAlg.PERMIT_OVERRIDES, [], "NotApplicable"),
    ],
)
def test_combine(alg, inputs, expected):
    assert combine(alg, [R[Decision(d)] for d in inputs]).decision is Decision(expected)


def test_permit_overrides_inside_policy(farm_store):
    update = Rule("u", Decision.PERMIT, None, ())
    deny = Rule("d", Decision.DENY)
    policy = Policy("p", CombiningAlg.PERMIT_OVERRIDES, Target(), (deny, update))
    assert evaluate_policy(policy, ctx_for(farm_store, "sowing")).decision is Decision.PERMIT


def test_override_set_discards_losing_writes(policies, farm_world):
    # two policies for startActivity under permit-overrides: the updating Permit wins
    start = policies.get("startActivityPolicy")
    deny_all = Policy("denyAll", CombiningAlg.FIRST_APPLICABLE, start.target, (Rule("no", Decision.DENY),))
    ps = PolicySet("s", CombiningAlg.PERMIT_OVERRIDES, (deny_all, start))
    result, store = decide(ps, farm_world, "sowing")
    assert result.decision is Decision.PERMIT and store.get_activity("plowing").current_state is S.FINISHED
    ps = PolicySet("s", CombiningAlg.DENY_OVERRIDES, (deny_all, start))
    result, store = decide(ps, farm_world, "sowing")
    assert result.decision is Decision.DENY and store.get_activity("plowing").current_state is S.RUNNING


# -- properties ----------------------------------------------------------------------------------------


seeds = st.integers(0, 2**32 - 1)
phases = st.sampled_from(["pre", "ongoing", "post"])


@settings(max_examples=300, deadline=None)
@given(seeds, st.integers(2, 6), phases, st.integers(1, 3))
def test_matches_oracle(policies, seed, n, phase, depth):
    w, subject = random_world(random.Random(seed), n, phase)
    assert pdp_decide(policies, w, subject, phase, depth) == oracle_decide(w, subject, phase, depth)


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(2, 6), phases)
def test_no_mutation_unless_permit(policies, seed, n, phase):
    w, subject = random_world(random.Random(seed), n, phase)
    store = DependencyStore.from_dict(w)
    before = store.snapshot()
    decision, _ = pdp_decide(policies, w, subject, phase, store=store)
    if decision != "Permit":
        assert store.snapshot() == before


@settings(max_examples=200, deadline=None)
@given(seeds, st.integers(2, 6), phases)
def test_updates_only_touch_mutable_unmet_dependents(policies, seed, n, phase):
    w, subject = random_world(random.Random(seed), n, phase)
    store = DependencyStore.from_dict(w)
    before = {a["id"]: a for a in w["activities"]}
    desired = {d["dependent"]: d["desired_state"] for d in w["dependencies"] if d["phase"] == phase}
    log = []
    store.add_audit_hook(log.append)
    pdp_decide(policies, w, subject, phase, store=store)
    for entry in log:
        assert entry.source == "provisional"
        assert before[entry.activity]["mutable"]
        assert before[entry.activity]["state"] != desired[entry.activity]
        assert entry.new.value == desired[entry.activity]


CONDITIONS = {
    "mutable-b": Apply("is-mutable", (AttributeValue("b"),)),
    "b-running": Apply("state-equal", (AttributeValue("b"), AttributeValue("running"))),
    "no-pre": Apply("dependency-set-empty", (RES, AttributeValue("pre"))),
    "never": Apply("or", ()),
    "always": Apply("and", ()),
}


@settings(max_examples=150, deadline=None)
@given(
    st.lists(st.tuples(st.sampled_from(sorted(CONDITIONS)), st.sampled_from([Decision.PERMIT, Decision.DENY])), min_size=1, max_size=4),
    st.booleans(), st.sampled_from(["running", "finished"]), st.booleans(),
)
def test_first_applicable_order_sensitivity(rules, mutable, b_state, has_pre):
    deps = [("a", "pre", "b", "finished")] if has_pre else []
    store = DependencyStore.from_dict(world([("a", "dormant", True), ("b", b_state, mutable)], deps))
    built = [Rule(f"r{i}", eff, CONDITIONS[c]) for i, (c, eff) in enumerate(rules)]
    # independent view: which rules apply on their own
    ctx = ctx_for(store, "a")
    applicable_effects = {r.effect for r in built if eval_condition(r.condition, ctx)}
    ctx.txn.rollback()
    outcomes = set()
    for perm in itertools.permutations(built):
        policy = Policy("p", CombiningAlg.FIRST_APPLICABLE, Target(), perm)
        c = ctx_for(store, "a")
        outcomes.add(evaluate_policy(policy, c).decision)
        c.txn.rollback()
    assert (len(outcomes) > 1) == (len(applicable_effects) > 1)
    if not applicable_effects:
        assert outcomes == {Decision.NOT_APPLICABLE}
