"""XML reader/writer for policy sets in the activity-dependency XACML dialect.

Standard constructs use XACML 3.0 element names in the XACML namespace (an
un-namespaced document is read as XACML). The extension elements
``ProvisionalActions``, ``ProvisionalAction``, ``ForAll`` and ``ForAny`` live
in :data:`XACML_AD_NS`. Elements from any other namespace are skipped.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Iterable, Iterator, Optional

from ..activity import ActivityState, Decision
from ..store import Phase
from .functions import FUNCTIONS
from .model import (
    ATTRIBUTES,
    CATEGORY_DEPENDENT,
    DATA_TYPES,
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
    known_obligation,
)

XACML_NS = "urn:oasis:names:tc:xacml:3.0:core:schema:wd-17"
XACML_AD_NS = "urn:actipol:xacml-ad:1.0"
_KNOWN_NS = {XACML_NS, XACML_AD_NS}

_MATCH_LISTS = (("Subjects", "SubjectMatch"), ("Resources", "ResourceMatch"), ("Actions", "ActionMatch"))
_MATCH_ATTRIBUTES = {"Subjects": "subject-id", "Resources": "resource-id", "Actions": "action-id"}


class XmlSyntaxError(ValueError):
    pass


def _split(tag: str) -> tuple[str, str]:
    if tag.startswith("{"):
        ns, _, name = tag[1:].partition("}")
        return ns, name
    return XACML_NS, tag


def _children(el: ET.Element) -> Iterator[tuple[str, str, ET.Element]]:
    for child in el:
        if not isinstance(child.tag, str):  # comments, processing instructions
            continue
        ns, name = _split(child.tag)
        if ns in _KNOWN_NS:
            yield ns, name, child


def _reject(el: ET.Element, where: str):
    ns, name = _split(el.tag)
    prefix = "xacml-ad:" if ns == XACML_AD_NS else ""
    raise SchemaViolation(f"unexpected element <{prefix}{name}> in {where}")


def _attr(el: ET.Element, name: str, where: str) -> str:
    value = el.get(name)
    if value is None or not value.strip():
        raise SchemaViolation(f"{where}: missing required attribute {name!r}")
    return value.strip()


def _effect(value: str, where: str) -> Decision:
    if value not in ("Permit", "Deny"):
        raise SchemaViolation(f"{where}: effect must be Permit or Deny, got {value!r}")
    return Decision(value)


def _phase(value: str, where: str) -> Phase:
    try:
        return Phase.parse(value)
    except ValueError as exc:
        raise SchemaViolation(f"{where}: {exc}") from None


# -- reading -----------------------------------------------------------------


def parse_policy_set(document: str | bytes) -> PolicySet:
    """Parse and validate an XML policy set."""
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise XmlSyntaxError(str(exc)) from None
    ns, name = _split(root.tag)
    if ns != XACML_NS or name != "PolicySet":
        raise SchemaViolation(f"root element must be <PolicySet>, got <{name}>")
    ps = PolicySet(
        policy_set_id=_attr(root, "PolicySetId", "PolicySet"),
        policy_combining_alg=CombiningAlg.parse(_attr(root, "PolicyCombiningAlgId", "PolicySet")),
        policies=tuple(_read_policy(el) for el in _expect(root, {(XACML_NS, "Policy")}, "PolicySet", skip={"Description", "Target"})),
    )
    validate_model(ps)
    return ps


def _expect(el: ET.Element, allowed: set[tuple[str, str]], where: str, skip: Iterable[str] = ("Description",)):
    skip = set(skip)
    out = []
    for ns, name, child in _children(el):
        if (ns, name) in allowed:
            out.append(child)
        elif ns == XACML_NS and name in skip:
            continue
        else:
            _reject(child, where)
    return out


def _read_policy(el: ET.Element) -> Policy:
    policy_id = _attr(el, "PolicyId", "Policy")
    where = f"Policy {policy_id!r}"
    target = Target()
    rules = []
    obligations = []
    for ns, name, child in _children(el):
        if ns == XACML_NS and name == "Target":
            target = _read_target(child, where)
        elif ns == XACML_NS and name == "Rule":
            rules.append(_read_rule(child))
        elif ns == XACML_NS and name == "ObligationExpressions":
            for ob in _expect(child, {(XACML_NS, "ObligationExpression")}, f"{where} obligations"):
                obligations.append(_read_obligation(ob, where))
        elif ns == XACML_NS and name == "Description":
            continue
        else:
            _reject(child, where)
    return Policy(
        policy_id=policy_id,
        rule_combining_alg=CombiningAlg.parse(_attr(el, "RuleCombiningAlgId", where)),
        target=target,
        rules=tuple(rules),
        obligations=tuple(obligations),
    )


def _read_target(el: ET.Element, where: str) -> Target:
    lists: dict[str, tuple[Match, ...]] = {}
    for ns, name, child in _children(el):
        entry = next((pair for pair in _MATCH_LISTS if pair[0] == name), None)
        if ns != XACML_NS or entry is None or name in lists:
            _reject(child, f"{where} target")
        lists[name] = tuple(
            _read_match(m, f"{where} target", _MATCH_ATTRIBUTES[name])
            for m in _expect(child, {(XACML_NS, entry[1])}, f"{where} target")
        )
    return Target(
        subjects=lists.get("Subjects", ()),
        resources=lists.get("Resources", ()),
        actions=lists.get("Actions", ()),
    )


def _read_match(el: ET.Element, where: str, default_attribute: str) -> Match:
    match_id = el.get("MatchId", "string-equal").rsplit(":", 1)[-1]
    if match_id != "string-equal":
        raise SchemaViolation(f"{where}: unsupported MatchId {match_id!r}")
    values = _expect(el, {(XACML_NS, "AttributeValue"), (XACML_NS, "AttributeDesignator")}, where)
    literal = [v for v in values if _split(v.tag)[1] == "AttributeValue"]
    designators = [v for v in values if _split(v.tag)[1] == "AttributeDesignator"]
    if len(literal) != 1 or len(designators) > 1:
        raise SchemaViolation(f"{where}: a match needs one AttributeValue and at most one AttributeDesignator")
    attribute_id = designators[0].get("AttributeId", default_attribute) if designators else default_attribute
    attribute_id = el.get("AttributeId", attribute_id)
    return Match(attribute_id=attribute_id, value=(literal[0].text or "").strip())


def _read_rule(el: ET.Element) -> Rule:
    rule_id = _attr(el, "RuleId", "Rule")
    where = f"Rule {rule_id!r}"
    condition = None
    actions: list[ProvisionalAction] = []
    target = Target()
    seen = set()
    for ns, name, child in _children(el):
        if (ns, name) in seen:
            _reject(child, where)
        seen.add((ns, name))
        if ns == XACML_NS and name == "Condition":
            condition = _read_condition(child, where, optional=True)
        elif ns == XACML_NS and name == "Target":
            target = _read_target(child, where)
        elif ns == XACML_AD_NS and name == "ProvisionalActions":
            actions = _read_provisional_actions(child, where)
        elif ns == XACML_NS and name == "Description":
            continue
        else:
            _reject(child, where)
    return Rule(
        rule_id=rule_id,
        effect=_effect(_attr(el, "Effect", where), where),
        condition=condition,
        provisional_actions=tuple(actions),
        target=target,
    )


def _read_condition(el: ET.Element, where: str, optional: bool = False) -> Optional[ConditionExpr]:
    exprs = [_read_expr(child, where) for _, _, child in _children(el)]
    if not exprs:
        if optional:
            return None
        raise SchemaViolation(f"{where}: empty <Condition>")
    if len(exprs) > 1:
        raise SchemaViolation(f"{where}: <Condition> takes a single expression")
    return exprs[0]


def _read_expr(el: ET.Element, where: str) -> ConditionExpr:
    ns, name = _split(el.tag)
    if ns == XACML_NS and name == "Apply":
        function_id = _attr(el, "FunctionId", where)
        return Apply(function_id, tuple(_read_expr(c, where) for _, _, c in _children(el)))
    if ns == XACML_NS and name == "AttributeValue":
        data_type = el.get("DataType", "string").rsplit("#", 1)[-1]
        return AttributeValue((el.text or "").strip(), data_type)
    if ns == XACML_NS and name == "AttributeDesignator":
        return AttributeDesignator(_attr(el, "Category", where), _attr(el, "AttributeId", where))
    if ns == XACML_AD_NS and name in ("ForAll", "ForAny"):
        parts = [_read_expr(c, where) for _, _, c in _children(el)]
        if len(parts) != 2:
            raise SchemaViolation(f"{where}: <{name}> needs a subject expression and a body")
        return Quantified(
            kind="all" if name == "ForAll" else "any",
            phase=_phase(_attr(el, "Phase", where), where),
            subject=parts[0],
            body=parts[1],
        )
    _reject(el, where)


def _read_provisional_actions(el: ET.Element, where: str) -> list[ProvisionalAction]:
    out = []
    for ns, name, child in _children(el):
        if ns == XACML_AD_NS and name == "ForAll":
            binding_phase = _phase(_attr(child, "Phase", where), where)
            subject = None
            inner = []
            for cns, cname, grandchild in _children(child):
                if cns == XACML_AD_NS and cname == "ProvisionalAction":
                    inner.append(grandchild)
                elif subject is None and not inner:
                    subject = _read_expr(grandchild, where)
                else:
                    _reject(grandchild, f"{where} ForAll")
            if subject is None or not inner:
                raise SchemaViolation(f"{where}: <ForAll> needs a subject expression and provisional actions")
            binding = ForAllBinding(binding_phase, subject)
            out.extend(_read_provisional_action(pa, where, binding) for pa in inner)
        elif ns == XACML_AD_NS and name == "ProvisionalAction":
            out.append(_read_provisional_action(child, where, None))
        else:
            _reject(child, f"{where} ProvisionalActions")
    if not out:
        raise SchemaViolation(f"{where}: <ProvisionalActions> needs at least one <ProvisionalAction>")
    return out


def _read_provisional_action(el: ET.Element, where: str, binding: Optional[ForAllBinding]) -> ProvisionalAction:
    conditions = [
        _read_condition(c, where) for c in _expect(el, {(XACML_NS, "Condition")}, f"{where} ProvisionalAction")
    ]
    if not conditions:
        raise SchemaViolation(f"{where}: <ProvisionalAction> needs a <Condition>")
    condition = conditions[0] if len(conditions) == 1 else Apply("and", tuple(conditions))
    return ProvisionalAction(
        fulfillment_phase=_phase(_attr(el, "FulfillmentPhase", f"{where} ProvisionalAction"), where),
        action=_attr(el, "ProvisionalAction", f"{where} ProvisionalAction"),
        condition=condition,
        for_all=binding,
        activity_id=el.get("ActivityId"),
        state=el.get("State"),
    )


def _read_obligation(el: ET.Element, where: str) -> ObligationExpression:
    params = []
    for assignment in _expect(el, {(XACML_NS, "AttributeAssignmentExpression")}, f"{where} obligation"):
        values = _expect(assignment, {(XACML_NS, "AttributeValue")}, f"{where} obligation")
        if len(values) != 1:
            raise SchemaViolation(f"{where}: AttributeAssignmentExpression needs one AttributeValue")
        params.append((_attr(assignment, "AttributeId", where), (values[0].text or "").strip()))
    return ObligationExpression(
        obligation_id=_attr(el, "ObligationId", where),
        fulfill_on=_effect(_attr(el, "FulfillOn", where), where),
        parameters=tuple(sorted(params)),
    )


# -- validation --------------------------------------------------------------


def validate_model(ps: PolicySet, obligation_ids: Optional[set[str]] = None) -> None:
    """Raise :class:`SchemaViolation` unless ``ps`` satisfies every load-time invariant."""
    _unique((p.policy_id for p in ps.policies), "policy id", f"PolicySet {ps.policy_set_id!r}")
    for policy in ps.policies:
        where = f"Policy {policy.policy_id!r}"
        _unique((r.rule_id for r in policy.rules), "rule id", where)
        phase = policy.phase()
        for rule in policy.rules:
            rwhere = f"{where} rule {rule.rule_id!r}"
            if rule.condition is not None:
                _check_expr(rule.condition, rwhere, "bool", bound=False)
            for pa in rule.provisional_actions:
                _check_provisional(pa, rwhere, phase)
        for ob in policy.obligations:
            ok = ob.obligation_id in obligation_ids if obligation_ids is not None else known_obligation(ob.obligation_id)
            if not ok:
                raise SchemaViolation(f"{where}: unknown obligation {ob.obligation_id!r}")
            if "state" in ob.params:
                try:
                    ActivityState.parse(ob.params["state"])
                except ValueError as exc:
                    raise SchemaViolation(f"{where}: {exc}") from None


def _unique(ids: Iterable[str], what: str, where: str) -> None:
    seen = set()
    for i in ids:
        if i in seen:
            raise SchemaViolation(f"{where}: duplicate {what} {i!r}")
        seen.add(i)


def _check_provisional(pa: ProvisionalAction, where: str, phase: Optional[Phase]) -> None:
    if pa.action != "Update":
        raise SchemaViolation(f"{where}: ProvisionalAction must be 'Update', got {pa.action!r}")
    if phase is not None and pa.fulfillment_phase is not phase:
        raise SchemaViolation(
            f"{where}: FulfillmentPhase {pa.fulfillment_phase.value!r} does not match policy phase {phase.value!r}"
        )
    if pa.for_all is not None:
        if pa.for_all.phase is not pa.fulfillment_phase:
            raise SchemaViolation(f"{where}: ForAll phase differs from FulfillmentPhase")
        _check_expr(pa.for_all.subject, where, "string", bound=False)
        _check_expr(pa.condition, where, "bool", bound=True)
    else:
        if not pa.activity_id or not pa.state:
            raise SchemaViolation(f"{where}: ProvisionalAction outside ForAll needs ActivityId and State")
        try:
            ActivityState.parse(pa.state)
        except ValueError as exc:
            raise SchemaViolation(f"{where}: {exc}") from None
        _check_expr(pa.condition, where, "bool", bound=False)


def _check_expr(expr: ConditionExpr, where: str, kind: str, bound: bool) -> None:
    if isinstance(expr, AttributeValue):
        if expr.data_type not in DATA_TYPES:
            raise SchemaViolation(f"{where}: unsupported DataType {expr.data_type!r}")
        if expr.data_type == "boolean" and expr.value not in ("true", "false"):
            raise SchemaViolation(f"{where}: bad boolean literal {expr.value!r}")
        produced = "bool" if expr.data_type == "boolean" else "string"
    elif isinstance(expr, AttributeDesignator):
        if expr.attribute_id not in ATTRIBUTES.get(expr.category, ()):
            raise SchemaViolation(f"{where}: unknown attribute {expr.category}/{expr.attribute_id}")
        if expr.category == CATEGORY_DEPENDENT and not bound:
            raise SchemaViolation(f"{where}: dependent attribute used outside ForAll/ForAny")
        produced = "string"
    elif isinstance(expr, Apply):
        sig = FUNCTIONS.get(expr.function_id)
        if sig is None:
            raise SchemaViolation(f"{where}: unknown function {expr.function_id!r}")
        n = len(expr.args)
        if n < sig.min_args or (sig.max_args is not None and n > sig.max_args):
            raise SchemaViolation(f"{where}: {expr.function_id} takes {sig.min_args}..{sig.max_args} arguments, got {n}")
        for arg in expr.args:
            _check_expr(arg, where, sig.arg_kind, bound)
        produced = "bool"
    elif isinstance(expr, Quantified):
        if expr.kind not in ("all", "any"):
            raise SchemaViolation(f"{where}: unknown quantifier {expr.kind!r}")
        _check_expr(expr.subject, where, "string", bound)
        _check_expr(expr.body, where, "bool", True)
        produced = "bool"
    else:
        raise SchemaViolation(f"{where}: not a condition expression: {expr!r}")
    if produced != kind:
        raise SchemaViolation(f"{where}: expected a {kind} expression, got {produced}")


# -- writing -----------------------------------------------------------------


def to_xml(ps: PolicySet) -> str:
    """Serialize ``ps`` back to the XML dialect read by :func:`parse_policy_set`."""
    ET.register_namespace("", XACML_NS)
    ET.register_namespace("xacml-ad", XACML_AD_NS)
    q = lambda name: f"{{{XACML_NS}}}{name}"  # noqa: E731
    x = lambda name: f"{{{XACML_AD_NS}}}{name}"  # noqa: E731

    def expr(parent, e):
        if isinstance(e, Apply):
            node = ET.SubElement(parent, q("Apply"), FunctionId=e.function_id)
            for a in e.args:
                expr(node, a)
        elif isinstance(e, AttributeValue):
            ET.SubElement(parent, q("AttributeValue"), DataType=e.data_type).text = e.value
        elif isinstance(e, AttributeDesignator):
            ET.SubElement(parent, q("AttributeDesignator"), Category=e.category, AttributeId=e.attribute_id)
        else:
            node = ET.SubElement(parent, x("ForAll" if e.kind == "all" else "ForAny"), Phase=e.phase.value)
            expr(node, e.subject)
            expr(node, e.body)

    def target(parent, t):
        node = ET.SubElement(parent, q("Target"))
        for (list_name, match_name), matches in zip(_MATCH_LISTS, (t.subjects, t.resources, t.actions)):
            if not matches:
                continue
            lst = ET.SubElement(node, q(list_name))
            for m in matches:
                mel = ET.SubElement(lst, q(match_name), MatchId="string-equal", AttributeId=m.attribute_id)
                ET.SubElement(mel, q("AttributeValue"), DataType="string").text = m.value

    def provisional(parent, pa):
        attrs = {"FulfillmentPhase": pa.fulfillment_phase.value, "ProvisionalAction": pa.action}
        if pa.activity_id:
            attrs["ActivityId"] = pa.activity_id
        if pa.state:
            attrs["State"] = pa.state
        node = ET.SubElement(parent, x("ProvisionalAction"), attrs)
        expr(ET.SubElement(node, q("Condition")), pa.condition)

    root = ET.Element(
        q("PolicySet"), PolicySetId=ps.policy_set_id, PolicyCombiningAlgId=ps.policy_combining_alg.value
    )
    for p in ps.policies:
        pel = ET.SubElement(root, q("Policy"), PolicyId=p.policy_id, RuleCombiningAlgId=p.rule_combining_alg.value)
        target(pel, p.target)
        for r in p.rules:
            rel = ET.SubElement(pel, q("Rule"), RuleId=r.rule_id, Effect=r.effect.value)
            if r.target != Target():
                target(rel, r.target)
            if r.condition is not None:
                expr(ET.SubElement(rel, q("Condition")), r.condition)
            if r.provisional_actions:
                pas = ET.SubElement(rel, x("ProvisionalActions"))
                # consecutive actions sharing a binding go under one ForAll
                group_el, group_binding = None, None
                for pa in r.provisional_actions:
                    if pa.for_all is None:
                        group_el, group_binding = None, None
                        provisional(pas, pa)
                        continue
                    if group_el is None or pa.for_all != group_binding:
                        group_el = ET.SubElement(pas, x("ForAll"), Phase=pa.for_all.phase.value)
                        expr(group_el, pa.for_all.subject)
                        group_binding = pa.for_all
                    provisional(group_el, pa)
        if p.obligations:
            oel = ET.SubElement(pel, q("ObligationExpressions"))
            for ob in p.obligations:
                node = ET.SubElement(oel, q("ObligationExpression"), ObligationId=ob.obligation_id, FulfillOn=ob.fulfill_on.value)
                for key, value in ob.parameters:
                    a = ET.SubElement(node, q("AttributeAssignmentExpression"), AttributeId=key)
                    ET.SubElement(a, q("AttributeValue"), DataType="string").text = value
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"
