"""Activity life cycle: states, requested actions and the legal transition table."""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional


class ActivityState(str, Enum):
    INACTIVE = "inactive"
    DORMANT = "dormant"
    ABORTED = "aborted"
    RUNNING = "running"
    HOLD = "hold"
    REVOKED = "revoked"
    FINISHED = "finished"

    @classmethod
    def parse(cls, value: "str | ActivityState") -> "ActivityState":
        if isinstance(value, ActivityState):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown activity state {value!r}") from None


class ActionId(str, Enum):
    START = "startActivity"
    CONTINUE = "continueActivity"
    HOLD = "holdActivity"
    FINISH = "finishActivity"
    POST_UPDATE = "postUpdate"

    @classmethod
    def parse(cls, value: "str | ActionId") -> "ActionId":
        if isinstance(value, ActionId):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown action {value!r}") from None

    @property
    def external(self) -> bool:
        """True for actions a requester may submit; continue and post-update are internal."""
        return self in EXTERNAL_ACTIONS


EXTERNAL_ACTIONS = frozenset({ActionId.START, ActionId.HOLD, ActionId.FINISH})


class Decision(str, Enum):
    PERMIT = "Permit"
    DENY = "Deny"
    NOT_APPLICABLE = "NotApplicable"
    INDETERMINATE = "Indeterminate"


class IllegalTransition(Exception):
    def __init__(self, state: ActivityState, action: ActionId, decision: Optional[Decision]):
        self.state, self.action, self.decision = state, action, decision
        shown = decision.value if decision is not None else "-"
        super().__init__(f"no transition from {state.value!r} on {action.value}/{shown}")


@dataclass(frozen=True)
class ActivityRecord:
    id: str
    current_state: ActivityState = ActivityState.INACTIVE
    mutable: bool = True

    def __post_init__(self):
        if not self.id:
            raise ValueError("activity id must be non-empty")

    def to_dict(self) -> dict:
        return {"id": self.id, "state": self.current_state.value, "mutable": self.mutable}


S, A, D = ActivityState, ActionId, Decision

# (state, action, decision) -> next state. A decision of None marks the
# interception edge, taken before any policy is evaluated.
TRANSITIONS: dict[tuple[ActivityState, ActionId, Optional[Decision]], ActivityState] = {
    (S.INACTIVE, A.START, None): S.DORMANT,
    (S.DORMANT, A.START, D.DENY): S.ABORTED,
    (S.DORMANT, A.START, D.PERMIT): S.RUNNING,
    (S.RUNNING, A.CONTINUE, D.DENY): S.REVOKED,
    (S.RUNNING, A.CONTINUE, D.PERMIT): S.RUNNING,
    (S.RUNNING, A.HOLD, D.PERMIT): S.HOLD,
    (S.RUNNING, A.FINISH, D.PERMIT): S.FINISHED,
    (S.FINISHED, A.POST_UPDATE, D.PERMIT): S.INACTIVE,
}

del S, A, D


def next_state(state: ActivityState, action: ActionId, decision: Optional[Decision]) -> ActivityState:
    try:
        return TRANSITIONS[(state, action, decision)]
    except KeyError:
        raise IllegalTransition(state, action, decision) from None


def apply_transition(
    record: ActivityRecord, action: ActionId, decision: Optional[Decision]
) -> ActivityRecord:
    """Return ``record`` moved along the life-cycle edge for ``(action, decision)``.

    ``decision=None`` is only legal for the interception of a start request
    (inactive -> dormant). Anything not in :data:`TRANSITIONS` raises
    :class:`IllegalTransition`.
    """
    return replace(record, current_state=next_state(record.current_state, action, decision))


def accepts(state: ActivityState, action: ActionId) -> bool:
    """Whether ``action`` can be requested at all for an activity in ``state``."""
    return any(s is state and a is action for (s, a, _) in TRANSITIONS)
