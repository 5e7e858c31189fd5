"""Policy Decision Point.

Selects the policy whose target matches the request, combines rule results,
evaluates conditions against the information point and executes provisional
updates through the caller's transaction. The PDP never commits; the caller
decides what to do with the writes based on the returned decision.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Protocol, Sequence

from .activity import ActionId, ActivityRecord, ActivityState, Decision
from .policy.functions import FUNCTIONS
from .policy.model import (
    CATEGORY_ACTION,
    CATEGORY_DEPENDENT,
    CATEGORY_RESOURCE,
    CATEGORY_SUBJECT,
    Apply,
    AttributeDesignator,
    AttributeValue,
    CombiningAlg,
    ConditionExpr,
    ObligationExpression,
    Policy,
    PolicySet,
    ProvisionalAction,
    Quantified,
    Rule,
    Target,
)
from .store import DependencySpec, Phase, UnknownActivity

logger = logging.getLogger(__name__)

DEFAULT_CHAIN_DEPTH = 2


class EvaluationError(Exception):
    pass


class UnresolvedActivity(EvaluationError, UnknownActivity):
    """A condition named an activity the store does not know."""

    def __init__(self, activity_id: str):
        UnknownActivity.__init__(self, activity_id)


class UnknownFunction(EvaluationError):
    pass


class InformationSource(Protocol):
    """What the PDP needs from the PIP; a store transaction satisfies it."""

    def get_activity(self, activity_id: str) -> ActivityRecord: ...

    def get_dependencies(self, subject: str, phase: Phase) -> list[DependencySpec]: ...

    def get_transition_dependencies(self, activity: str, target: ActivityState) -> list[tuple[str, ActivityState]]: ...

    def set_state(self, activity_id: str, new_state: ActivityState, source: str = "") -> None: ...


@dataclass(frozen=True)
class RequestContext:
    subject: str
    resource: str
    action_id: ActionId

    def attributes(self) -> dict[str, str]:
        return {"subject-id": self.subject, "resource-id": self.resource, "action-id": self.action_id.value}


@dataclass
class EvaluationContext:
    request: RequestContext
    txn: InformationSource
    chain_depth_limit: int = DEFAULT_CHAIN_DEPTH

    def __post_init__(self):
        if self.chain_depth_limit < 1:
            raise ValueError("chain_depth_limit must be >= 1")


@dataclass
class Result:
    decision: Decision
    obligations: list[ObligationExpression] = field(default_factory=list)
    policy_id: Optional[str] = None
    rule_id: Optional[str] = None
    updates: list[tuple[str, ActivityState]] = field(default_factory=list)
    reason: str = ""

    def __iter__(self):
        # allows ``decision, obligations = evaluate(...)``
        yield self.decision
        yield self.obligations


# -- targets -------------------------------------------------------------------


def target_matches(target: Target, request: RequestContext) -> bool:
    attrs = request.attributes()
    for matches in (target.subjects, target.resources, target.actions):
        if matches and not any(attrs.get(m.attribute_id) == m.value for m in matches):
            return False
    return True


# -- conditions ------------------------------------------------------------------


def dependency_chain(
    info: InformationSource, activity: str, target: ActivityState, depth_limit: int
) -> list[tuple[str, ActivityState]]:
    """Requirements for ``activity`` to reach ``target``, down to ``depth_limit`` levels.

    Level 1 is the direct dependent itself, so a limit of 2 reads only its own
    transition dependencies. Deeper levels are only followed through
    requirements that would themselves have to change state.
    """
    out: list[tuple[str, ActivityState]] = []
    seen: set[tuple[str, ActivityState]] = set()
    frontier = [(activity, target)]
    for _level in range(2, depth_limit + 1):
        nxt = []
        for act, state in frontier:
            for req in info.get_transition_dependencies(act, state):
                if req in seen:
                    continue
                seen.add(req)
                out.append(req)
                if info.get_activity(req[0]).current_state is not req[1]:
                    nxt.append(req)
        if not nxt:
            break
        frontier = nxt
    return out


def _state_of(info: InformationSource, activity: str) -> ActivityState:
    return info.get_activity(activity).current_state


def _as_state(value) -> ActivityState:
    try:
        return ActivityState.parse(value)
    except ValueError as exc:
        raise EvaluationError(str(exc)) from None


def _as_phase(value) -> Phase:
    try:
        return Phase.parse(value)
    except ValueError as exc:
        raise EvaluationError(str(exc)) from None


def _chain(ctx, activity, state):
    return dependency_chain(ctx.txn, activity, _as_state(state), ctx.chain_depth_limit)


def _unmet(info, pairs):
    return [(a, s) for a, s in pairs if _state_of(info, a) is not s]


_IMPLS: dict[str, Callable] = {
    "state-equal": lambda ctx, a, s: _state_of(ctx.txn, a) is _as_state(s),
    "is-mutable": lambda ctx, a: ctx.txn.get_activity(a).mutable,
    "dependency-set-empty": lambda ctx, subj, ph: not ctx.txn.get_dependencies(subj, _as_phase(ph)),
    "all-in-desired-state": lambda ctx, subj, ph: all(
        _state_of(ctx.txn, d.dependent) is d.desired_state for d in ctx.txn.get_dependencies(subj, _as_phase(ph))
    ),
    "chain-empty": lambda ctx, a, s: not _chain(ctx, a, s),
    "chain-all-in-required-state": lambda ctx, a, s: not _unmet(ctx.txn, _chain(ctx, a, s)),
    "chain-has-immutable-unmet": lambda ctx, a, s: any(
        not ctx.txn.get_activity(r).mutable for r, _ in _unmet(ctx.txn, _chain(ctx, a, s))
    ),
}

assert set(_IMPLS) | {"and", "or", "not"} == set(FUNCTIONS)


def _value(expr: ConditionExpr, ctx: EvaluationContext, bound: Optional[DependencySpec]):
    if isinstance(expr, AttributeValue):
        if expr.data_type == "boolean":
            return expr.value == "true"
        return expr.value
    if isinstance(expr, AttributeDesignator):
        if expr.category == CATEGORY_DEPENDENT:
            if bound is None:
                raise EvaluationError("dependent attribute referenced outside ForAll/ForAny")
            return bound.dependent if expr.attribute_id == "dependent-id" else bound.desired_state.value
        if expr.category in (CATEGORY_RESOURCE, CATEGORY_SUBJECT, CATEGORY_ACTION):
            try:
                return ctx.request.attributes()[expr.attribute_id]
            except KeyError:
                pass
        raise EvaluationError(f"no attribute {expr.category}/{expr.attribute_id}")
    if isinstance(expr, Apply):
        fid = expr.function_id
        # boolean connectives short-circuit
        if fid == "and":
            return all(_bool(a, ctx, bound) for a in expr.args)
        if fid == "or":
            return any(_bool(a, ctx, bound) for a in expr.args)
        if fid == "not":
            if len(expr.args) != 1:
                raise EvaluationError("not takes one argument")
            return not _bool(expr.args[0], ctx, bound)
        impl = _IMPLS.get(fid)
        if impl is None:
            raise UnknownFunction(f"unknown function {fid!r}")
        args = [_value(a, ctx, bound) for a in expr.args]
        if not all(isinstance(a, str) for a in args):
            raise EvaluationError(f"{fid} expects string arguments")
        try:
            return impl(ctx, *args)
        except TypeError as exc:
            raise EvaluationError(f"{fid}: {exc}") from None
        except UnknownActivity as exc:
            raise UnresolvedActivity(exc.activity_id) from None
    if isinstance(expr, Quantified):
        subject = _value(expr.subject, ctx, bound)
        try:
            deps = ctx.txn.get_dependencies(subject, expr.phase)
        except UnknownActivity as exc:
            raise UnresolvedActivity(exc.activity_id) from None
        results = (_bool(expr.body, ctx, d) for d in deps)
        return all(results) if expr.kind == "all" else any(results)
    raise EvaluationError(f"not an expression: {expr!r}")


def _bool(expr, ctx, bound) -> bool:
    v = _value(expr, ctx, bound)
    if not isinstance(v, bool):
        raise EvaluationError(f"expected a boolean, got {v!r}")
    return v


def eval_condition(expr: ConditionExpr, ctx: EvaluationContext, bound: Optional[DependencySpec] = None) -> bool:
    return _bool(expr, ctx, bound)


# -- rules and policies ----------------------------------------------------------


def execute_provisional(pa: ProvisionalAction, ctx: EvaluationContext) -> list[tuple[str, ActivityState]]:
    updates = []
    if pa.for_all is not None:
        subject = _value(pa.for_all.subject, ctx, None)
        for spec in ctx.txn.get_dependencies(subject, pa.for_all.phase):
            if eval_condition(pa.condition, ctx, spec):
                ctx.txn.set_state(spec.dependent, spec.desired_state, "provisional")
                updates.append((spec.dependent, spec.desired_state))
    elif eval_condition(pa.condition, ctx):
        state = _as_state(pa.state)
        try:
            ctx.txn.set_state(pa.activity_id, state, "provisional")
        except UnknownActivity as exc:
            raise UnresolvedActivity(exc.activity_id) from None
        updates.append((pa.activity_id, state))
    return updates


def _applies(rule: Rule, ctx: EvaluationContext) -> bool:
    if not target_matches(rule.target, ctx.request):
        return False
    return rule.condition is None or eval_condition(rule.condition, ctx)


def evaluate_rule(rule: Rule, ctx: EvaluationContext, execute: bool = True) -> Result:
    """Effect of ``rule`` if it applies (NotApplicable otherwise), running its updates."""
    try:
        if not _applies(rule, ctx):
            return Result(Decision.NOT_APPLICABLE)
        updates = []
        if execute:
            for pa in rule.provisional_actions:
                updates.extend(execute_provisional(pa, ctx))
    except EvaluationError as exc:
        logger.debug("rule %s indeterminate: %s", rule.rule_id, exc)
        return Result(Decision.INDETERMINATE, rule_id=rule.rule_id, reason=str(exc))
    return Result(rule.effect, rule_id=rule.rule_id, updates=updates)


def combine(alg: CombiningAlg, results: Sequence[Result]) -> Result:
    """Combine already-computed child results (used by the override algorithms)."""
    decisions = [r.decision for r in results]
    if alg is CombiningAlg.FIRST_APPLICABLE:
        return next((r for r in results if r.decision is not Decision.NOT_APPLICABLE), Result(Decision.NOT_APPLICABLE))
    if alg is CombiningAlg.ONLY_ONE_APPLICABLE:
        applicable = [r for r in results if r.decision is not Decision.NOT_APPLICABLE]
        if len(applicable) > 1:
            return Result(Decision.INDETERMINATE, reason="more than one applicable")
        return applicable[0] if applicable else Result(Decision.NOT_APPLICABLE)
    winner, loser = (
        (Decision.DENY, Decision.PERMIT) if alg is CombiningAlg.DENY_OVERRIDES else (Decision.PERMIT, Decision.DENY)
    )
    for wanted in (winner, Decision.INDETERMINATE, loser):
        if wanted in decisions:
            return next(r for r in results if r.decision is wanted)
    return Result(Decision.NOT_APPLICABLE)


def evaluate_policy(policy: Policy, ctx: EvaluationContext) -> Result:
    if policy.rule_combining_alg is CombiningAlg.FIRST_APPLICABLE:
        result = Result(Decision.NOT_APPLICABLE)
        for rule in policy.rules:
            result = evaluate_rule(rule, ctx)
            if result.decision is not Decision.NOT_APPLICABLE:
                break
    else:
        # decide first, then run updates only for rules agreeing with the outcome
        outcomes = [(rule, evaluate_rule(rule, ctx, execute=False)) for rule in policy.rules]
        result = combine(policy.rule_combining_alg, [r for _, r in outcomes])
        if result.decision is Decision.PERMIT:
            updates = []
            try:
                for rule, r in outcomes:
                    if r.decision is Decision.PERMIT:
                        for pa in rule.provisional_actions:
                            updates.extend(execute_provisional(pa, ctx))
            except EvaluationError as exc:
                result = Result(Decision.INDETERMINATE, rule_id=result.rule_id, reason=str(exc))
            else:
                result = Result(result.decision, rule_id=result.rule_id, updates=updates)
    result.policy_id = policy.policy_id
    result.obligations = [o for o in policy.obligations if o.fulfill_on is result.decision]
    return result


class PolicyIndex:
    """Policy Retrieval Point: action-id -> candidate policies, built once per set."""

    def __init__(self, ps: PolicySet):
        self.policy_set = ps
        self._by_action: dict[str, list[Policy]] = {}
        self._match_all: list[Policy] = []
        for p in ps.policies:
            actions = p.target.action_ids()
            if not actions:
                self._match_all.append(p)
            for a in actions:
                self._by_action.setdefault(a, []).append(p)

    def candidates(self, request: RequestContext) -> list[Policy]:
        found = self._by_action.get(request.action_id.value, []) + self._match_all
        # keep document order for first-applicable policy combining
        order = {id(p): i for i, p in enumerate(self.policy_set.policies)}
        return sorted({id(p): p for p in found}.values(), key=lambda p: order[id(p)])

    def retrieve(self, request: RequestContext) -> list[Policy]:
        return [p for p in self.candidates(request) if target_matches(p.target, request)]


_INDEX_CACHE: dict[int, PolicyIndex] = {}


def _index(ps: PolicySet) -> PolicyIndex:
    idx = _INDEX_CACHE.get(id(ps))
    if idx is None or idx.policy_set is not ps:
        if len(_INDEX_CACHE) > 64:
            _INDEX_CACHE.clear()
        idx = _INDEX_CACHE[id(ps)] = PolicyIndex(ps)
    return idx


def evaluate(ps: "PolicySet | PolicyIndex", ctx: EvaluationContext) -> Result:
    """Decide ``ctx.request`` against a policy set.

    Raises :class:`UnknownActivity` if the requested activity does not exist;
    every other failure comes back as an Indeterminate result.
    """
    index = ps if isinstance(ps, PolicyIndex) else _index(ps)
    alg = index.policy_set.policy_combining_alg
    matched = index.retrieve(ctx.request)
    ctx.txn.get_activity(ctx.request.resource)
    if alg is CombiningAlg.ONLY_ONE_APPLICABLE:
        if not matched:
            return Result(Decision.NOT_APPLICABLE, reason="no policy matches the request")
        if len(matched) > 1:
            ids = ", ".join(p.policy_id for p in matched)
            return Result(Decision.INDETERMINATE, reason=f"more than one applicable policy: {ids}")
        return evaluate_policy(matched[0], ctx)
    if alg is CombiningAlg.FIRST_APPLICABLE:
        for policy in matched:
            result = evaluate_policy(policy, ctx)
            if result.decision is not Decision.NOT_APPLICABLE:
                return result
        return Result(Decision.NOT_APPLICABLE)
    # override algorithms: a policy whose Permit loses must not leave writes behind,
    # and a transaction has no savepoints, so every candidate runs on a scratch view
    results = []
    for policy in matched:
        scratch = _ScratchView(ctx.txn)
        r = evaluate_policy(policy, EvaluationContext(ctx.request, scratch, ctx.chain_depth_limit))
        results.append((r, scratch))
    final = combine(alg, [r for r, _ in results])
    for r, scratch in results:
        if r is final:
            scratch.flush()
    return final


class _ScratchView:
    """Buffers writes on top of another information source until flushed."""

    def __init__(self, base: InformationSource):
        self._base = base
        self._writes: dict[str, ActivityState] = {}

    def get_activity(self, activity_id):
        record = self._base.get_activity(activity_id)
        if activity_id in self._writes:
            return replace(record, current_state=self._writes[activity_id])
        return record

    def get_dependencies(self, subject, phase):
        return self._base.get_dependencies(subject, phase)

    def get_transition_dependencies(self, activity, target):
        return self._base.get_transition_dependencies(activity, target)

    def set_state(self, activity_id, new_state, source=""):
        self._base.get_activity(activity_id)
        self._writes[activity_id] = new_state

    def flush(self):
        for activity_id, state in self._writes.items():
            self._base.set_state(activity_id, state, "provisional")
