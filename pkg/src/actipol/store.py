"""Policy Information Point: activity records, dependencies and dependency chains.

All writes go through a :class:`Transaction`. Transactions are serialized by a
single store-wide lock; readers outside a transaction see the last committed
snapshot, which is swapped in atomically on commit.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .activity import ActivityRecord, ActivityState

logger = logging.getLogger(__name__)


class Phase(str, Enum):
    PRE = "pre"
    ONGOING = "ongoing"
    POST = "post"

    @classmethod
    def parse(cls, value: "str | Phase") -> "Phase":
        if isinstance(value, Phase):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown phase {value!r}") from None


class StoreError(Exception):
    pass


class UnknownActivity(StoreError, KeyError):
    def __init__(self, activity_id: str):
        self.activity_id = activity_id
        super().__init__(activity_id)

    def __str__(self):
        return f"unknown activity {self.activity_id!r}"


class InvariantViolation(StoreError, ValueError):
    pass


class NoOpenTransaction(StoreError):
    pass


class TransactionClosed(StoreError):
    pass


@dataclass(frozen=True)
class DependencySpec:
    subject: str
    phase: Phase
    dependent: str
    desired_state: ActivityState

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "phase": self.phase.value,
            "dependent": self.dependent,
            "desired_state": self.desired_state.value,
        }


@dataclass(frozen=True)
class TransitionDependency:
    activity: str
    target_state: ActivityState
    requirements: tuple[tuple[str, ActivityState], ...] = ()

    def to_dict(self) -> dict:
        return {
            "activity": self.activity,
            "target_state": self.target_state.value,
            "requirements": [{"activity": a, "state": s.value} for a, s in self.requirements],
        }


@dataclass(frozen=True)
class AuditEntry:
    activity: str
    old: ActivityState
    new: ActivityState
    source: str


AuditHook = Callable[[AuditEntry], None]


class Transaction:
    """Write buffer over the committed snapshot; holds the store lock until closed."""

    def __init__(self, store: "DependencyStore", label: str = ""):
        self._store = store
        self.label = label
        self._writes: dict[str, ActivityState] = {}
        self._write_sources: dict[str, str] = {}
        self.open = True

    def _check(self):
        if not self.open:
            raise TransactionClosed("transaction already closed")

    # reads see this transaction's own writes first
    def get_activity(self, activity_id: str) -> ActivityRecord:
        self._check()
        record = self._store.get_activity(activity_id)
        if activity_id in self._writes:
            return replace(record, current_state=self._writes[activity_id])
        return record

    def get_dependencies(self, subject: str, phase: Phase) -> list[DependencySpec]:
        self._check()
        return self._store.get_dependencies(subject, phase)

    def get_transition_dependencies(
        self, activity: str, target: ActivityState
    ) -> list[tuple[str, ActivityState]]:
        self._check()
        return self._store.get_transition_dependencies(activity, target)

    def set_state(self, activity_id: str, new_state: ActivityState, source: str = "") -> None:
        self._check()
        self._store.get_activity(activity_id)
        self._writes[activity_id] = ActivityState.parse(new_state)
        self._write_sources[activity_id] = source or self.label

    @property
    def pending(self) -> dict[str, ActivityState]:
        return dict(self._writes)

    def discard_writes(self) -> None:
        """Drop buffered writes but keep the transaction (and the lock) open."""
        self._check()
        self._writes.clear()
        self._write_sources.clear()

    def commit(self) -> None:
        self._check()
        self.open = False
        try:
            self._store._apply(self._writes, self._write_sources)
        finally:
            self._store._release(self)

    def rollback(self) -> None:
        self._check()
        self.open = False
        self._writes.clear()
        self._store._release(self)

    def __enter__(self) -> "Transaction":
        return self

    def __exit__(self, exc_type, exc, tb):
        if self.open:
            if exc_type is None:
                self.commit()
            else:
                self.rollback()


def _reject_duplicates(items, key, what: str) -> None:
    seen = set()
    for item in items:
        k = key(item)
        if k in seen:
            raise InvariantViolation(f"duplicate {what} {k!r} in fixture")
        seen.add(k)


class DependencyStore:
    def __init__(self):
        self._activities: dict[str, ActivityRecord] = {}
        self._deps: dict[tuple[str, Phase], list[DependencySpec]] = {}
        self._chains: dict[tuple[str, ActivityState], tuple[tuple[str, ActivityState], ...]] = {}
        self._txn_lock = threading.Lock()
        self._meta_lock = threading.Lock()
        self._active: Optional[Transaction] = None
        self._busy: frozenset[str] = frozenset()
        self._audit_hooks: list[AuditHook] = []

    # -- loading -----------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "DependencyStore":
        """Build a store from the fixture-file shape; duplicate keys are an error, not an overwrite."""
        _reject_duplicates(data.get("activities", []), lambda a: a["id"], "activity")
        _reject_duplicates(
            data.get("dependencies", []),
            lambda d: (d["subject"], d["phase"].lower(), d["dependent"]),
            "dependency",
        )
        _reject_duplicates(
            data.get("transition_dependencies", []),
            lambda t: (t["activity"], t["target_state"].lower()),
            "transition dependency",
        )
        store = cls()
        for item in data.get("activities", []):
            store.admin_upsert(
                ActivityRecord(
                    id=item["id"],
                    current_state=ActivityState.parse(item.get("state", "inactive")),
                    mutable=bool(item.get("mutable", True)),
                )
            )
        # dependencies may reference activities declared later in the file
        for item in data.get("dependencies", []):
            store.admin_upsert(
                DependencySpec(
                    subject=item["subject"],
                    phase=Phase.parse(item["phase"]),
                    dependent=item["dependent"],
                    desired_state=ActivityState.parse(item["desired_state"]),
                )
            )
        for item in data.get("transition_dependencies", []):
            store.admin_upsert(
                TransitionDependency(
                    activity=item["activity"],
                    target_state=ActivityState.parse(item["target_state"]),
                    requirements=tuple(
                        (r["activity"], ActivityState.parse(r["state"]))
                        for r in item.get("requirements", [])
                    ),
                )
            )
        return store

    @classmethod
    def load(cls, path: Union[str, Path]) -> "DependencyStore":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {
            "activities": [r.to_dict() for r in self._activities.values()],
            "dependencies": [d.to_dict() for specs in self._deps.values() for d in specs],
            "transition_dependencies": [
                TransitionDependency(a, t, reqs).to_dict() for (a, t), reqs in self._chains.items()
            ],
        }

    def snapshot(self) -> dict[str, tuple[str, bool]]:
        """Committed (state, mutable) per activity; cheap to compare in tests."""
        return {k: (r.current_state.value, r.mutable) for k, r in self._activities.items()}

    # -- queries -------------------------------------------------------------

    def __contains__(self, activity_id: str) -> bool:
        return activity_id in self._activities

    def activity_ids(self) -> list[str]:
        return list(self._activities)

    def get_activity(self, activity_id: str) -> ActivityRecord:
        try:
            return self._activities[activity_id]
        except KeyError:
            raise UnknownActivity(activity_id) from None

    def get_dependencies(self, subject: str, phase: Phase) -> list[DependencySpec]:
        self.get_activity(subject)
        return list(self._deps.get((subject, Phase.parse(phase)), ()))

    def get_transition_dependencies(
        self, activity: str, target: ActivityState
    ) -> list[tuple[str, ActivityState]]:
        self.get_activity(activity)
        return list(self._chains.get((activity, ActivityState.parse(target)), ()))

    # -- transactions ----------------------------------------------------------

    def begin_txn(self, label: str = "", touches: Iterable[str] = ()) -> Transaction:
        self._txn_lock.acquire()
        txn = Transaction(self, label)
        with self._meta_lock:
            self._active = txn
            self._busy = frozenset(touches)
        return txn

    def set_state(self, activity_id: str, new_state: ActivityState, txn: Optional[Transaction]) -> None:
        if txn is None or not txn.open or txn is not self._active:
            raise NoOpenTransaction(f"set_state({activity_id!r}) outside an open transaction")
        txn.set_state(activity_id, new_state)

    def is_busy(self, activity_id: str) -> bool:
        """True while an open transaction declared it touches ``activity_id``."""
        with self._meta_lock:
            return self._active is not None and activity_id in self._busy

    def _release(self, txn: Transaction) -> None:
        with self._meta_lock:
            if self._active is txn:
                self._active = None
                self._busy = frozenset()
        self._txn_lock.release()

    def _apply(self, writes: dict[str, ActivityState], sources: dict[str, str]) -> None:
        if not writes:
            return
        updated = dict(self._activities)
        entries = []
        for activity_id, state in writes.items():
            old = updated[activity_id]
            if old.current_state is not state:
                updated[activity_id] = replace(old, current_state=state)
            entries.append(AuditEntry(activity_id, old.current_state, state, sources.get(activity_id, "")))
        self._activities = updated
        for entry in entries:
            for hook in self._audit_hooks:
                hook(entry)

    def add_audit_hook(self, hook: AuditHook) -> None:
        self._audit_hooks.append(hook)

    def remove_audit_hook(self, hook: AuditHook) -> None:
        self._audit_hooks.remove(hook)

    # -- administration ------------------------------------------------------

    def admin_upsert(self, item: Union[ActivityRecord, DependencySpec, TransitionDependency]) -> None:
        with self._txn_lock:
            if isinstance(item, ActivityRecord):
                self._activities = {**self._activities, item.id: item}
            elif isinstance(item, DependencySpec):
                self._upsert_dependency(item)
            elif isinstance(item, TransitionDependency):
                self._upsert_chain(item)
            else:
                raise TypeError(f"cannot upsert {type(item).__name__}")

    def admin_reset(self, activity_id: str) -> None:
        """Put a terminal (aborted/revoked/hold/...) activity back to inactive."""
        with self._txn_lock:
            record = self.get_activity(activity_id)
            self._apply({activity_id: ActivityState.INACTIVE}, {activity_id: "admin-reset"})
            logger.info("reset %s from %s", activity_id, record.current_state.value)

    def _require(self, *ids: str) -> None:
        for activity_id in ids:
            if activity_id not in self._activities:
                raise InvariantViolation(f"unknown activity {activity_id!r} referenced")

    def _upsert_dependency(self, spec: DependencySpec) -> None:
        if spec.subject == spec.dependent:
            raise InvariantViolation(f"activity {spec.subject!r} cannot depend on itself")
        self._require(spec.subject, spec.dependent)
        key = (spec.subject, spec.phase)
        specs = list(self._deps.get(key, ()))
        for i, existing in enumerate(specs):
            if existing.dependent == spec.dependent:
                specs[i] = spec
                break
        else:
            specs.append(spec)
        self._deps = {**self._deps, key: specs}

    def _upsert_chain(self, dep: TransitionDependency) -> None:
        self._require(dep.activity, *(a for a, _ in dep.requirements))
        seen = set()
        for activity_id, _ in dep.requirements:
            if activity_id == dep.activity:
                raise InvariantViolation(f"activity {dep.activity!r} cannot require itself")
            if activity_id in seen:
                raise InvariantViolation(f"duplicate requirement {activity_id!r} for {dep.activity!r}")
            seen.add(activity_id)
        self._chains = {**self._chains, (dep.activity, dep.target_state): tuple(dep.requirements)}
