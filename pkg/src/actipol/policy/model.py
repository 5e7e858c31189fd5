"""Object model for activity-dependency policy sets.

Everything here is frozen and hashable so a loaded policy set can be shared
between threads and compared structurally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

from ..activity import ActionId, Decision
from ..store import Phase


class SchemaViolation(ValueError):
    """The document is well-formed but not a valid policy set."""


class CombiningAlg(str, Enum):
    FIRST_APPLICABLE = "first-applicable"
    ONLY_ONE_APPLICABLE = "only-one-applicable"
    PERMIT_OVERRIDES = "permit-overrides"
    DENY_OVERRIDES = "deny-overrides"

    @classmethod
    def parse(cls, value: str) -> "CombiningAlg":
        # accept the full XACML URNs, e.g.
        # urn:oasis:names:tc:xacml:1.0:rule-combining-algorithm:first-applicable
        short = value.strip().rsplit(":", 1)[-1]
        try:
            return cls(short)
        except ValueError:
            raise SchemaViolation(f"unknown combining algorithm {value!r}") from None


# -- condition expressions ---------------------------------------------------

CATEGORY_SUBJECT = "access-subject"
CATEGORY_RESOURCE = "resource"
CATEGORY_ACTION = "action"
CATEGORY_DEPENDENT = "dependent"

# category -> attribute ids that can be designated in it
ATTRIBUTES = {
    CATEGORY_SUBJECT: frozenset({"subject-id"}),
    CATEGORY_RESOURCE: frozenset({"resource-id"}),
    CATEGORY_ACTION: frozenset({"action-id"}),
    CATEGORY_DEPENDENT: frozenset({"dependent-id", "desired-state"}),
}

DATA_TYPES = frozenset({"string", "boolean"})


@dataclass(frozen=True)
class AttributeValue:
    value: str
    data_type: str = "string"


@dataclass(frozen=True)
class AttributeDesignator:
    category: str
    attribute_id: str


@dataclass(frozen=True)
class Apply:
    function_id: str
    args: tuple["ConditionExpr", ...] = ()


@dataclass(frozen=True)
class Quantified:
    """``ForAll``/``ForAny`` over the dependent set of ``subject`` in ``phase``.

    Inside ``body`` the ``dependent`` category resolves to the bound element.
    """

    kind: str  # "all" | "any"
    phase: Phase
    subject: "ConditionExpr"
    body: "ConditionExpr"


ConditionExpr = Union[AttributeValue, AttributeDesignator, Apply, Quantified]


# -- policy structure --------------------------------------------------------


@dataclass(frozen=True)
class Match:
    attribute_id: str
    value: str


@dataclass(frozen=True)
class Target:
    subjects: tuple[Match, ...] = ()
    resources: tuple[Match, ...] = ()
    actions: tuple[Match, ...] = ()

    def action_ids(self) -> tuple[str, ...]:
        return tuple(m.value for m in self.actions if m.attribute_id == "action-id")


@dataclass(frozen=True)
class ForAllBinding:
    phase: Phase
    subject: ConditionExpr


@dataclass(frozen=True)
class ProvisionalAction:
    fulfillment_phase: Phase
    condition: ConditionExpr
    action: str = "Update"
    for_all: Optional[ForAllBinding] = None
    # explicit target, only used when not iterating a dependent set
    activity_id: Optional[str] = None
    state: Optional[str] = None


@dataclass(frozen=True)
class Rule:
    rule_id: str
    effect: Decision
    condition: Optional[ConditionExpr] = None
    provisional_actions: tuple[ProvisionalAction, ...] = ()
    target: Target = field(default_factory=Target)


@dataclass(frozen=True)
class ObligationExpression:
    obligation_id: str
    fulfill_on: Decision
    parameters: tuple[tuple[str, str], ...] = ()

    @property
    def params(self) -> dict[str, str]:
        return dict(self.parameters)


@dataclass(frozen=True)
class Policy:
    policy_id: str
    rule_combining_alg: CombiningAlg
    target: Target = field(default_factory=Target)
    rules: tuple[Rule, ...] = ()
    obligations: tuple[ObligationExpression, ...] = ()

    def phase(self) -> Optional[Phase]:
        """Dependency phase this policy evaluates, derived from its action target."""
        phases = {ACTION_PHASES[a] for a in self.target.action_ids() if a in ACTION_PHASES}
        return phases.pop() if len(phases) == 1 else None


@dataclass(frozen=True)
class PolicySet:
    policy_set_id: str
    policy_combining_alg: CombiningAlg
    policies: tuple[Policy, ...] = ()

    def get(self, policy_id: str) -> Policy:
        for p in self.policies:
            if p.policy_id == policy_id:
                return p
        raise KeyError(policy_id)

    def __len__(self):
        return len(self.policies)


ACTION_PHASES = {
    ActionId.START.value: Phase.PRE,
    ActionId.CONTINUE.value: Phase.ONGOING,
    ActionId.POST_UPDATE.value: Phase.POST,
}

UPDATE_OBLIGATION = "updateRequestedActivityState"
CALL_PREFIX = "call-"


def known_obligation(obligation_id: str) -> bool:
    return obligation_id == UPDATE_OBLIGATION or (
        obligation_id.startswith(CALL_PREFIX) and len(obligation_id) > len(CALL_PREFIX)
    )
