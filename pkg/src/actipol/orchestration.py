"""Enforcement pipeline: PEP core, context handler, obligation service and continuity loops.

A request flows PEP -> context handler -> PDP (policy retrieval, attribute
queries through the context handler to the PIP) -> decision -> response ->
obligation service. Undecided results (NotApplicable, Indeterminate) are
enforced as Deny.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from .activity import (
    TRANSITIONS,
    ActionId,
    ActivityState,
    Decision,
    IllegalTransition,
    accepts,
    apply_transition,
)
from .pdp import DEFAULT_CHAIN_DEPTH, EvaluationContext, PolicyIndex, RequestContext, Result, evaluate
from .policy.model import (
    ACTION_PHASES,
    CALL_PREFIX,
    UPDATE_OBLIGATION,
    ObligationExpression,
    PolicySet,
)
from .store import DependencyStore, Transaction

logger = logging.getLogger(__name__)

__all__ = [
    "ContinuityConfig",
    "ContinuityReport",
    "Engine",
    "ObligationError",
    "RequestContext",
    "ResponseContext",
    "Trace",
    "UnknownObligation",
    "FLOW_STEPS",
]


class ObligationError(Exception):
    pass


class UnknownObligation(ObligationError):
    pass


# Golden order of component interactions for one externally requested decision.
FLOW_STEPS = (
    "PAP->PRP:load-policies",
    "PEP:intercept",
    "PEP->CH:request",
    "CH->PDP:notify",
    "PDP->PRP:retrieve-policy",
    "PDP->CH:attribute-query",
    "CH->PIP:attribute-query",
    "PIP->CH:attributes",
    "CH->PDP:attributes",
    "PDP->CH:decision",
    "CH->PEP:response",
    "PEP->ObligationService:obligations",
    "ObligationService->CH:request",
    "PEP->Requester:response",
)

# the PDP's first information query walks these four hops
_ATTRIBUTE_HOPS = FLOW_STEPS[5:9]


class Trace:
    """Records component interactions in order; consecutive repeats collapse."""

    def __init__(self):
        self.steps: list[str] = []

    def record(self, step: str) -> None:
        if not self.steps or self.steps[-1] != step:
            self.steps.append(step)


class _NullTrace(Trace):
    def record(self, step: str) -> None:
        pass


_NULL_TRACE = _NullTrace()


@dataclass(frozen=True)
class ContinuityConfig:
    repetitions: int = 10
    interval_ms: float = 5.0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.interval_ms > 0:
            raise ValueError("interval_ms must be > 0")

    @classmethod
    def parse(cls, text: str) -> "ContinuityConfig":
        """``"10x5"`` -> 10 repetitions every 5 ms."""
        reps, _, interval = text.lower().partition("x")
        return cls(int(reps), float(interval.removesuffix("ms")))

    def label(self) -> str:
        return f"{self.repetitions}x{self.interval_ms:g}ms"


@dataclass
class ContinuityIteration:
    n: int
    decision: str
    elapsed_ms: float


@dataclass
class ContinuityReport:
    activity: str
    iterations: list[ContinuityIteration] = field(default_factory=list)
    final_state: Optional[ActivityState] = None
    stop_reason: str = ""  # exhausted | revoked | finished

    def to_dict(self) -> dict:
        return {
            "activity": self.activity,
            "iterations": [{"n": i.n, "decision": i.decision, "elapsed_ms": round(i.elapsed_ms, 3)} for i in self.iterations],
            "final_state": self.final_state.value if self.final_state else None,
            "stop_reason": self.stop_reason,
        }


@dataclass
class ResponseContext:
    decision: Decision  # Permit or Deny only
    activity: str
    final_activity_state: ActivityState
    obligations_fulfilled: list[str] = field(default_factory=list)
    obligations_failed: list[str] = field(default_factory=list)
    pdp_decision: Optional[Decision] = None
    policy_id: Optional[str] = None
    rule_id: Optional[str] = None
    reason: str = ""
    updates: list[tuple[str, ActivityState]] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "decision": self.decision.value.lower(),
            "activity": self.activity,
            "state": self.final_activity_state.value,
            "obligations": list(self.obligations_fulfilled),
        }
        if self.obligations_failed:
            out["failed_obligations"] = list(self.obligations_failed)
        if self.pdp_decision not in (None, self.decision):
            out["reason"] = self.reason or f"PDP returned {self.pdp_decision.value}"
        if self.rule_id:
            out["rule"] = self.rule_id
        if self.updates:
            out["updates"] = {a: s.value for a, s in self.updates}
        return out


def enforce(decision: Decision) -> Decision:
    """Deny-biased PEP: anything but Permit is enforced as Deny."""
    return Decision.PERMIT if decision is Decision.PERMIT else Decision.DENY


class _ContextHandler:
    """Sits between the PDP and the PIP for one evaluation, recording the hops."""

    def __init__(self, txn: Transaction, trace: Trace):
        self._txn = txn
        self._trace = trace
        self._queried = False

    def _hop(self):
        if not self._queried:
            self._queried = True
            for step in _ATTRIBUTE_HOPS:
                self._trace.record(step)

    def get_activity(self, activity_id):
        self._hop()
        return self._txn.get_activity(activity_id)

    def get_dependencies(self, subject, phase):
        self._hop()
        return self._txn.get_dependencies(subject, phase)

    def get_transition_dependencies(self, activity, target):
        self._hop()
        return self._txn.get_transition_dependencies(activity, target)

    def set_state(self, activity_id, new_state, source=""):
        self._txn.set_state(activity_id, new_state, source)


class _TracedIndex(PolicyIndex):
    def __init__(self, base: PolicyIndex, trace: Trace):
        self.__dict__.update(base.__dict__)
        self._trace = trace

    def retrieve(self, request):
        self._trace.record("PDP->PRP:retrieve-policy")
        return super().retrieve(request)


class Engine:
    """The in-process enforcement pipeline around one policy set and one store."""

    def __init__(
        self,
        policies: PolicySet,
        store: DependencyStore,
        continuity: ContinuityConfig = ContinuityConfig(),
        chain_depth_limit: int = DEFAULT_CHAIN_DEPTH,
        trace: Optional[Trace] = None,
    ):
        self.policies = policies
        self.index = PolicyIndex(policies)
        if trace is not None:
            trace.record("PAP->PRP:load-policies")
        self.store = store
        self.continuity = continuity
        self.chain_depth_limit = chain_depth_limit
        self._locks: dict[str, threading.RLock] = {}
        self._locks_guard = threading.Lock()
        self._loops: dict[str, threading.Thread] = {}
        self._reports: dict[str, ContinuityReport] = {}
        self._stop = threading.Event()
        # test hook for scheduled loops: called as hook(activity, n) before iteration n
        self.iteration_hook: Optional[Callable[[str, int], None]] = None

    # -- plumbing --------------------------------------------------------------

    def _lock(self, activity_id: str) -> threading.RLock:
        with self._locks_guard:
            lock = self._locks.get(activity_id)
            if lock is None:
                lock = self._locks[activity_id] = threading.RLock()
            return lock

    def _touches(self, req: RequestContext) -> set[str]:
        touched = {req.resource}
        phase = ACTION_PHASES.get(req.action_id.value)
        if phase is not None:
            touched.update(d.dependent for d in self.store.get_dependencies(req.resource, phase))
        return touched

    def _decide(self, req: RequestContext, txn: Transaction, trace: Trace) -> Result:
        ctx = EvaluationContext(req, _ContextHandler(txn, trace), self.chain_depth_limit)
        index = _TracedIndex(self.index, trace) if trace is not _NULL_TRACE else self.index
        result = evaluate(index, ctx)
        trace.record("PDP->CH:decision")
        return result

    def _deny_obligations(self, result: Result) -> list[ObligationExpression]:
        if result.policy_id is None:
            return []
        policy = self.policies.get(result.policy_id)
        return [o for o in policy.obligations if o.fulfill_on is Decision.DENY]

    # -- obligations -------------------------------------------------------------

    def fulfill_obligation(
        self,
        ob: ObligationExpression,
        decision: Decision,
        activity: str,
        txn: Optional[Transaction] = None,
        subject: str = "system",
        in_continuity: bool = False,
    ) -> list[str]:
        """Carry out one obligation; returns the ids fulfilled (nested calls included)."""
        if ob.fulfill_on is not decision:
            raise ObligationError(f"{ob.obligation_id} is due on {ob.fulfill_on.value}, not {decision.value}")
        if ob.obligation_id == UPDATE_OBLIGATION:
            self._update_requested_state(ob, decision, activity, txn)
            return [ob.obligation_id]
        if ob.obligation_id.startswith(CALL_PREFIX):
            return self._call_policy(ob, activity, subject, in_continuity)
        raise UnknownObligation(f"no handler for obligation {ob.obligation_id!r}")

    def _update_requested_state(self, ob, decision, activity, txn):
        try:
            wanted = ActivityState.parse(ob.params["state"])
        except (KeyError, ValueError) as exc:
            raise ObligationError(f"{ob.obligation_id}: bad or missing state parameter ({exc})") from None
        own_txn = txn is None
        if own_txn:
            txn = self.store.begin_txn("obligation", touches=(activity,))
        try:
            record = txn.get_activity(activity)
            for (state, action, dec), target in TRANSITIONS.items():
                if state is record.current_state and dec is decision and target is wanted:
                    txn.set_state(activity, apply_transition(record, action, dec).current_state, "obligation")
                    break
            else:
                raise ObligationError(
                    f"{ob.obligation_id}: no {decision.value} transition from "
                    f"{record.current_state.value!r} to {wanted.value!r}"
                )
        except BaseException:
            if own_txn:
                txn.rollback()
            raise
        if own_txn:
            txn.commit()

    def _call_policy(self, ob, activity, subject, in_continuity) -> list[str]:
        policy_id = ob.obligation_id[len(CALL_PREFIX):]
        try:
            policy = self.policies.get(policy_id)
        except KeyError:
            raise UnknownObligation(f"{ob.obligation_id}: no policy {policy_id!r}") from None
        actions = policy.target.action_ids()
        if len(actions) != 1:
            raise ObligationError(f"{ob.obligation_id}: policy {policy_id!r} has no single action target")
        action = ActionId.parse(actions[0])
        if action is ActionId.CONTINUE:
            # inside a loop the next iteration is the fulfilment
            if not in_continuity:
                self.schedule_continuity(activity)
            return [ob.obligation_id]
        response = self._handle(RequestContext(subject, activity, action), _NULL_TRACE, chained=True)
        return [ob.obligation_id] + [f"{policy_id}:{o}" for o in response.obligations_fulfilled]

    # -- requests --------------------------------------------------------------------

    def handle_request(self, req: RequestContext, trace: Optional[Trace] = None) -> ResponseContext:
        """Enforce one externally requested action (start, hold or finish)."""
        if not req.action_id.external:
            raise ValueError(f"{req.action_id.value} is an internal action")
        return self._handle(req, trace or _NULL_TRACE)

    def _handle(self, req: RequestContext, trace: Trace, chained: bool = False) -> ResponseContext:
        trace.record("PEP:intercept")
        with self._lock(req.resource):
            record = self.store.get_activity(req.resource)
            if not accepts(record.current_state, req.action_id):
                raise IllegalTransition(record.current_state, req.action_id, None)

            if req.action_id is ActionId.HOLD:
                # no dependency policy exists for hold: plain life-cycle edge
                with self.store.begin_txn("hold", touches=(req.resource,)) as txn:
                    txn.set_state(req.resource, apply_transition(record, ActionId.HOLD, Decision.PERMIT).current_state, "hold")
                trace.record("PEP->Requester:response")
                return ResponseContext(Decision.PERMIT, req.resource, self.store.get_activity(req.resource).current_state,
                                       pdp_decision=Decision.PERMIT)

            if req.action_id is ActionId.START:
                with self.store.begin_txn("intercept", touches=(req.resource,)) as txn:
                    txn.set_state(req.resource, apply_transition(record, ActionId.START, None).current_state, "intercept")

            trace.record("PEP->CH:request")
            trace.record("CH->PDP:notify")
            txn = self.store.begin_txn(req.action_id.value, touches=self._touches(req))
            try:
                result = self._decide(req, txn, trace)
                trace.record("CH->PEP:response")
                decision = enforce(result.decision)
                if decision is Decision.PERMIT:
                    obligations = list(result.obligations)
                else:
                    txn.discard_writes()
                    obligations = list(result.obligations) if result.decision is Decision.DENY else self._deny_obligations(result)
                trace.record("PEP->ObligationService:obligations")
                fulfilled, failed, deferred = [], [], []
                for ob in obligations:
                    if ob.obligation_id.startswith(CALL_PREFIX):
                        deferred.append(ob)
                        continue
                    try:
                        fulfilled += self.fulfill_obligation(ob, decision, req.resource, txn, req.subject)
                    except ObligationError as exc:
                        logger.warning("obligation %s failed for %s: %s", ob.obligation_id, req.resource, exc)
                        failed.append(ob.obligation_id)
                if decision is Decision.DENY and not any(o.obligation_id == UPDATE_OBLIGATION for o in obligations):
                    # nothing told us where a denied activity goes: take the life-cycle edge
                    current = txn.get_activity(req.resource)
                    if (current.current_state, req.action_id, Decision.DENY) in TRANSITIONS:
                        txn.set_state(req.resource, apply_transition(current, req.action_id, Decision.DENY).current_state, "deny-bias")
                updates = list(result.updates) if decision is Decision.PERMIT else []
            except BaseException:
                txn.rollback()
                raise
            txn.commit()

            for ob in deferred:
                trace.record("ObligationService->CH:request")
                try:
                    fulfilled += self.fulfill_obligation(ob, decision, req.resource, None, req.subject)
                except ObligationError as exc:
                    logger.warning("obligation %s failed for %s: %s", ob.obligation_id, req.resource, exc)
                    failed.append(ob.obligation_id)
            final = self.store.get_activity(req.resource).current_state
        trace.record("PEP->Requester:response")
        return ResponseContext(
            decision=decision,
            activity=req.resource,
            final_activity_state=final,
            obligations_fulfilled=fulfilled,
            obligations_failed=failed,
            pdp_decision=result.decision,
            policy_id=result.policy_id,
            rule_id=result.rule_id,
            reason=result.reason,
            updates=updates,
        )

    # -- continuity --------------------------------------------------------------------

    def schedule_continuity(self, activity: str, cfg: Optional[ContinuityConfig] = None) -> bool:
        """Start a background continuity loop unless one is already running for ``activity``."""
        cfg = cfg or self.continuity
        with self._locks_guard:
            running = self._loops.get(activity)
            if running is not None and running.is_alive():
                return False
            self._reports.pop(activity, None)
            thread = threading.Thread(
                target=self._loop_main, args=(activity, cfg), name=f"continuity-{activity}", daemon=True
            )
            self._loops[activity] = thread
        thread.start()
        return True

    def _loop_main(self, activity, cfg):
        try:
            hook = self.iteration_hook
            report = self.run_continuity(activity, cfg, (lambda n: hook(activity, n)) if hook else None)
        except Exception:
            logger.exception("continuity loop for %s crashed", activity)
            report = ContinuityReport(activity, final_state=self.store.get_activity(activity).current_state, stop_reason="finished")
        with self._locks_guard:
            self._reports[activity] = report

    def run_continuity(
        self,
        activity: str,
        cfg: Optional[ContinuityConfig] = None,
        before_iteration: Optional[Callable[[int], None]] = None,
    ) -> ContinuityReport:
        """Re-evaluate the ongoing dependencies of ``activity`` until revoked, stopped or exhausted.

        Intervals are minimum delays between iterations; the first iteration
        runs immediately.
        """
        cfg = cfg or self.continuity
        report = ContinuityReport(activity)
        started = time.perf_counter()
        req = RequestContext("system", activity, ActionId.CONTINUE)
        for n in range(1, cfg.repetitions + 1):
            if n > 1 and self._stop.wait(cfg.interval_ms / 1000.0):
                report.stop_reason = "finished"
                break
            if before_iteration is not None:
                before_iteration(n)
            with self._lock(activity):
                if self.store.get_activity(activity).current_state is not ActivityState.RUNNING:
                    report.stop_reason = "finished"
                    break
                decision = self._continue_once(req)
            report.iterations.append(ContinuityIteration(n, decision.value, (time.perf_counter() - started) * 1000.0))
            if decision is Decision.DENY:
                report.stop_reason = "revoked"
                break
        else:
            report.stop_reason = "exhausted"
        report.final_state = self.store.get_activity(activity).current_state
        return report

    def _continue_once(self, req: RequestContext) -> Decision:
        txn = self.store.begin_txn("continue", touches=self._touches(req))
        try:
            try:
                result = evaluate(self.index, EvaluationContext(req, txn, self.chain_depth_limit))
            except Exception as exc:  # evaluation errors count as a denying iteration
                logger.warning("continuity evaluation for %s failed: %s", req.resource, exc)
                result = Result(Decision.INDETERMINATE, reason=str(exc))
            decision = enforce(result.decision)
            if decision is Decision.PERMIT:
                obligations = result.obligations
            else:
                txn.discard_writes()
                obligations = result.obligations if result.decision is Decision.DENY else self._deny_obligations(result)
            revoked = False
            for ob in obligations:
                try:
                    self.fulfill_obligation(ob, decision, req.resource, txn, in_continuity=True)
                    revoked |= ob.obligation_id == UPDATE_OBLIGATION
                except ObligationError as exc:
                    logger.warning("obligation %s failed for %s: %s", ob.obligation_id, req.resource, exc)
            if decision is Decision.DENY and not revoked:
                current = txn.get_activity(req.resource)
                txn.set_state(req.resource, apply_transition(current, ActionId.CONTINUE, Decision.DENY).current_state, "deny-bias")
        except BaseException:
            txn.rollback()
            raise
        txn.commit()
        return decision

    def continuity_report(self, activity: str) -> Optional[ContinuityReport]:
        with self._locks_guard:
            return self._reports.get(activity)

    def continuity_active(self, activity: str) -> bool:
        with self._locks_guard:
            thread = self._loops.get(activity)
            return thread is not None and thread.is_alive()

    def wait_continuity(self, activity: str, timeout: Optional[float] = None) -> Optional[ContinuityReport]:
        with self._locks_guard:
            thread = self._loops.get(activity)
        if thread is not None:
            thread.join(timeout)
        return self.continuity_report(activity)

    def shutdown(self, timeout: float = 5.0) -> None:
        self._stop.set()
        with self._locks_guard:
            threads = list(self._loops.values())
        for t in threads:
            t.join(timeout)
