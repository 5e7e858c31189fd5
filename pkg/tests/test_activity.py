import itertools

import pytest

from actipol.activity import (
    EXTERNAL_ACTIONS,
    TRANSITIONS,
    ActionId,
    ActivityRecord,
    ActivityState as S,
    Decision,
    IllegalTransition,
    accepts,
    apply_transition,
)

EXPECTED = {
    (S.INACTIVE, ActionId.START, None): S.DORMANT,
    (S.DORMANT, ActionId.START, Decision.DENY): S.ABORTED,
    (S.DORMANT, ActionId.START, Decision.PERMIT): S.RUNNING,
    (S.RUNNING, ActionId.CONTINUE, Decision.DENY): S.REVOKED,
    (S.RUNNING, ActionId.CONTINUE, Decision.PERMIT): S.RUNNING,
    (S.RUNNING, ActionId.HOLD, Decision.PERMIT): S.HOLD,
    (S.RUNNING, ActionId.FINISH, Decision.PERMIT): S.FINISHED,
    (S.FINISHED, ActionId.POST_UPDATE, Decision.PERMIT): S.INACTIVE,
}


def test_table_is_exactly_the_life_cycle():
    assert TRANSITIONS == EXPECTED


@pytest.mark.parametrize(
    "state,action,decision",
    list(itertools.product(S, ActionId, [None, *Decision])),
)
def test_every_combination(state, action, decision):
    record = ActivityRecord("a", state)
    key = (state, action, decision)
    if key in EXPECTED:
        assert apply_transition(record, action, decision).current_state is EXPECTED[key]
    else:
        with pytest.raises(IllegalTransition):
            apply_transition(record, action, decision)


def test_apply_does_not_mutate():
    record = ActivityRecord("a", S.RUNNING)
    moved = apply_transition(record, ActionId.FINISH, Decision.PERMIT)
    assert record.current_state is S.RUNNING and moved.current_state is S.FINISHED
    assert moved.id == "a" and moved.mutable


def test_running_finish_deny_is_illegal():
    with pytest.raises(IllegalTransition):
        apply_transition(ActivityRecord("a", S.RUNNING), ActionId.FINISH, Decision.DENY)


def test_only_start_hold_finish_are_external():
    assert EXTERNAL_ACTIONS == {ActionId.START, ActionId.HOLD, ActionId.FINISH}
    assert not ActionId.CONTINUE.external and not ActionId.POST_UPDATE.external


def test_accepts():
    assert accepts(S.INACTIVE, ActionId.START)
    assert not accepts(S.RUNNING, ActionId.START)
    assert accepts(S.RUNNING, ActionId.HOLD)
    assert not accepts(S.HOLD, ActionId.FINISH)


def test_parse_and_record_validation():
    assert S.parse(" Running ") is S.RUNNING
    with pytest.raises(ValueError):
        S.parse("paused")
    with pytest.raises(ValueError):
        ActionId.parse("stopActivity")
    with pytest.raises(ValueError):
        ActivityRecord("")
    assert ActivityRecord("x").to_dict() == {"id": "x", "state": "inactive", "mutable": True}
