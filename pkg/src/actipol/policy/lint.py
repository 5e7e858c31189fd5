"""Static checks over a parsed policy set that do not make it invalid."""

from __future__ import annotations

from dataclasses import dataclass

from ..activity import Decision
from .model import CALL_PREFIX, CombiningAlg, PolicySet, Target


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "warning" | "error"
    code: str
    where: str
    message: str

    def __str__(self):
        return f"{self.level}: {self.where}: {self.message} [{self.code}]"


def validate_corpus(ps: PolicySet) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    policy_ids = {p.policy_id for p in ps.policies}

    for policy in ps.policies:
        where = f"policy {policy.policy_id}"
        if policy.rule_combining_alg is CombiningAlg.FIRST_APPLICABLE:
            for i, rule in enumerate(policy.rules[:-1]):
                if rule.condition is None and rule.target == Target():
                    shadowed = ", ".join(r.rule_id for r in policy.rules[i + 1:])
                    out.append(Diagnostic(
                        "warning", "shadowed-rules", f"{where} rule {rule.rule_id}",
                        f"unconditioned {rule.effect.value} rule makes later rules unreachable: {shadowed}",
                    ))
                    break
        for rule in policy.rules:
            if rule.provisional_actions and rule.effect is not Decision.PERMIT:
                out.append(Diagnostic(
                    "warning", "deny-with-updates", f"{where} rule {rule.rule_id}",
                    "provisional updates on a Deny rule are never committed",
                ))
        for ob in policy.obligations:
            if ob.obligation_id.startswith(CALL_PREFIX):
                called = ob.obligation_id[len(CALL_PREFIX):]
                if called not in policy_ids:
                    out.append(Diagnostic(
                        "error", "unknown-reference", where,
                        f"obligation {ob.obligation_id!r} calls missing policy {called!r}",
                    ))
        if ps.policy_combining_alg is CombiningAlg.ONLY_ONE_APPLICABLE and not policy.target.actions:
            out.append(Diagnostic(
                "warning", "match-all-target", where,
                "policy without an action target matches every request under only-one-applicable",
            ))

    if ps.policy_combining_alg is CombiningAlg.ONLY_ONE_APPLICABLE:
        owners: dict[str, str] = {}
        for policy in ps.policies:
            for action in policy.target.action_ids():
                if action in owners:
                    out.append(Diagnostic(
                        "warning", "overlapping-targets", f"policy {policy.policy_id}",
                        f"action {action!r} also matched by {owners[action]}; requests will be Indeterminate",
                    ))
                else:
                    owners[action] = policy.policy_id
    return out
