"""Deterministic JSON form of a policy set.

Keys are sorted and arrays keep document order, so two documents that differ
only in attribute order or whitespace produce byte-identical output.
"""

from __future__ import annotations

import json
from typing import Any

from ..activity import Decision
from ..store import Phase
from .model import (
    Apply,
    AttributeDesignator,
    AttributeValue,
    CombiningAlg,
    ConditionExpr,
    ForAllBinding,
    Match,
    ObligationExpression,
    Policy,
    PolicySet,
    ProvisionalAction,
    Quantified,
    Rule,
    SchemaViolation,
    Target,
)
from .parser import validate_model


class JsonSyntaxError(ValueError):
    pass


def _expr(e: ConditionExpr) -> dict:
    if isinstance(e, Apply):
        return {"Apply": {"FunctionId": e.function_id, "Args": [_expr(a) for a in e.args]}}
    if isinstance(e, AttributeValue):
        return {"AttributeValue": {"DataType": e.data_type, "Value": e.value}}
    if isinstance(e, AttributeDesignator):
        return {"AttributeDesignator": {"Category": e.category, "AttributeId": e.attribute_id}}
    key = "ForAll" if e.kind == "all" else "ForAny"
    return {key: {"Phase": e.phase.value, "Subject": _expr(e.subject), "Body": _expr(e.body)}}


def _target(t: Target) -> dict:
    def matches(ms):
        return [{"AttributeId": m.attribute_id, "Value": m.value} for m in ms]

    return {"Subjects": matches(t.subjects), "Resources": matches(t.resources), "Actions": matches(t.actions)}


def _provisional(pa: ProvisionalAction) -> dict:
    out: dict[str, Any] = {
        "FulfillmentPhase": pa.fulfillment_phase.value,
        "ProvisionalAction": pa.action,
        "Condition": _expr(pa.condition),
    }
    if pa.for_all is not None:
        out["ForAll"] = {"Phase": pa.for_all.phase.value, "Subject": _expr(pa.for_all.subject)}
    if pa.activity_id is not None:
        out["ActivityId"] = pa.activity_id
    if pa.state is not None:
        out["State"] = pa.state
    return out


def _rule(r: Rule) -> dict:
    out: dict[str, Any] = {
        "RuleId": r.rule_id,
        "Effect": r.effect.value,
        "Condition": _expr(r.condition) if r.condition is not None else None,
        "ProvisionalActions": [_provisional(pa) for pa in r.provisional_actions],
    }
    if r.target != Target():
        out["Target"] = _target(r.target)
    return out


def _policy(p: Policy) -> dict:
    return {
        "PolicyId": p.policy_id,
        "RuleCombiningAlgId": p.rule_combining_alg.value,
        "Target": _target(p.target),
        "Rules": [_rule(r) for r in p.rules],
        "ObligationExpressions": [
            {"ObligationId": o.obligation_id, "FulfillOn": o.fulfill_on.value, "Parameters": dict(o.parameters)}
            for o in p.obligations
        ],
    }


def to_dict(ps: PolicySet) -> dict:
    return {
        "PolicySet": {
            "PolicySetId": ps.policy_set_id,
            "PolicyCombiningAlgId": ps.policy_combining_alg.value,
            "Policies": [_policy(p) for p in ps.policies],
        }
    }


def to_canonical_json(ps: PolicySet) -> str:
    return json.dumps(to_dict(ps), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


# -- reading -----------------------------------------------------------------


def _get(d: Any, key: str, where: str) -> Any:
    if not isinstance(d, dict) or key not in d:
        raise SchemaViolation(f"{where}: missing {key!r}")
    return d[key]


def _read_expr(d: Any, where: str) -> ConditionExpr:
    if not isinstance(d, dict) or len(d) != 1:
        raise SchemaViolation(f"{where}: expression must be a single-key object")
    (kind, body), = d.items()
    if kind == "Apply":
        return Apply(_get(body, "FunctionId", where), tuple(_read_expr(a, where) for a in _get(body, "Args", where)))
    if kind == "AttributeValue":
        return AttributeValue(str(_get(body, "Value", where)), _get(body, "DataType", where))
    if kind == "AttributeDesignator":
        return AttributeDesignator(_get(body, "Category", where), _get(body, "AttributeId", where))
    if kind in ("ForAll", "ForAny"):
        return Quantified(
            kind="all" if kind == "ForAll" else "any",
            phase=_read_phase(_get(body, "Phase", where), where),
            subject=_read_expr(_get(body, "Subject", where), where),
            body=_read_expr(_get(body, "Body", where), where),
        )
    raise SchemaViolation(f"{where}: unknown expression kind {kind!r}")


def _read_phase(value: Any, where: str) -> Phase:
    try:
        return Phase.parse(value)
    except ValueError as exc:
        raise SchemaViolation(f"{where}: {exc}") from None


def _read_effect(value: Any, where: str) -> Decision:
    if value not in ("Permit", "Deny"):
        raise SchemaViolation(f"{where}: effect must be Permit or Deny, got {value!r}")
    return Decision(value)


def _read_target(d: Any, where: str) -> Target:
    def matches(key):
        return tuple(Match(_get(m, "AttributeId", where), _get(m, "Value", where)) for m in d.get(key, []))

    if not isinstance(d, dict):
        raise SchemaViolation(f"{where}: Target must be an object")
    return Target(subjects=matches("Subjects"), resources=matches("Resources"), actions=matches("Actions"))


def _read_provisional(d: Any, where: str) -> ProvisionalAction:
    binding = None
    if d.get("ForAll") is not None:
        fa = d["ForAll"]
        binding = ForAllBinding(_read_phase(_get(fa, "Phase", where), where), _read_expr(_get(fa, "Subject", where), where))
    return ProvisionalAction(
        fulfillment_phase=_read_phase(_get(d, "FulfillmentPhase", where), where),
        action=_get(d, "ProvisionalAction", where),
        condition=_read_expr(_get(d, "Condition", where), where),
        for_all=binding,
        activity_id=d.get("ActivityId"),
        state=d.get("State"),
    )


def _read_rule(d: Any, where: str) -> Rule:
    rule_id = _get(d, "RuleId", where)
    rwhere = f"{where} rule {rule_id!r}"
    condition = d.get("Condition")
    return Rule(
        rule_id=rule_id,
        effect=_read_effect(_get(d, "Effect", rwhere), rwhere),
        condition=_read_expr(condition, rwhere) if condition is not None else None,
        provisional_actions=tuple(_read_provisional(pa, rwhere) for pa in d.get("ProvisionalActions") or ()),
        target=_read_target(d["Target"], rwhere) if "Target" in d else Target(),
    )


def _read_policy(d: Any) -> Policy:
    policy_id = _get(d, "PolicyId", "Policy")
    where = f"Policy {policy_id!r}"
    return Policy(
        policy_id=policy_id,
        rule_combining_alg=CombiningAlg.parse(_get(d, "RuleCombiningAlgId", where)),
        target=_read_target(d.get("Target", {}), where),
        rules=tuple(_read_rule(r, where) for r in d.get("Rules", [])),
        obligations=tuple(
            ObligationExpression(
                obligation_id=_get(o, "ObligationId", where),
                fulfill_on=_read_effect(_get(o, "FulfillOn", where), where),
                parameters=tuple(sorted((str(k), str(v)) for k, v in o.get("Parameters", {}).items())),
            )
            for o in d.get("ObligationExpressions", [])
        ),
    )


def from_dict(data: Any) -> PolicySet:
    body = _get(data, "PolicySet", "document")
    ps = PolicySet(
        policy_set_id=_get(body, "PolicySetId", "PolicySet"),
        policy_combining_alg=CombiningAlg.parse(_get(body, "PolicyCombiningAlgId", "PolicySet")),
        policies=tuple(_read_policy(p) for p in body.get("Policies", [])),
    )
    validate_model(ps)
    return ps


def from_canonical_json(text: str | bytes) -> PolicySet:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise JsonSyntaxError(str(exc)) from None
    try:
        return from_dict(data)
    except (TypeError, AttributeError) as exc:
        raise SchemaViolation(f"malformed policy document: {exc}") from None
