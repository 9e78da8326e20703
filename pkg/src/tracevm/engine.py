"""Targeted tracing engine: per-method stubs instead of a global walk.

Bring-up runs in three phases. First the activation handler is swapped for a
no-op so the built-in trace start cannot degrade the whole runtime. Then each
configured target gets a stub picked to match its tier: compiled methods keep
compiled speed through the quick stub, interpreted methods get the interpreter
stub. Last, tracing starts through the normal entry point, which now only
registers the event proxy.

The proxy sees every dispatched event, filters to the target set, runs the
configured actions under a synthetic interceptor frame, and appends results to
a bounded sink. Rollback undoes everything in reverse order and is idempotent.

Targets configured before their class is loaded are injected the moment the
class arrives, via a registry load hook.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

from .actions import (
    EventSink,
    TraceAction,
    capture_args_event,
    capture_args_payload,
    capture_stack_event,
    time_method_event,
)
from .core import CallFrame, CompilationState, EntryPoint, MethodRef
from .errors import PhaseError
from .instrumentation import EventKind, ListenerRegistration

log = logging.getLogger(__name__)

# Synthetic frame pushed while trace actions run, so captured stacks show the
# interception point itself.
INTERCEPT_REF = MethodRef("XTrace", "intercept", ())

PROXY_LISTENER_ID = "xtrace-proxy"


class TracePhase(Enum):
    IDLE = "idle"
    SUPPRESSED = "suppressed"
    INJECTED = "injected"
    ACTIVE = "active"


class TargetSet:
    """Immutable set of traced methods with their configured actions.

    Updates replace the whole object, so a dispatch that grabbed a reference
    keeps a consistent view. Duplicate entries for one method merge their
    actions in first-seen order.
    """

    __slots__ = ("members", "_actions", "_refs")

    def __init__(self, entries: Iterable[tuple[MethodRef, Iterable[TraceAction]]] = ()):
        actions: dict[str, tuple] = {}
        refs: dict[str, MethodRef] = {}
        for ref, acts in entries:
            acts = tuple(acts)
            if not acts:
                raise ValueError(f"target {ref.key} has no actions")
            key = ref.key
            if key in actions:
                merged = actions[key] + tuple(a for a in acts if a not in actions[key])
                actions[key] = merged
            else:
                actions[key] = acts
                refs[key] = ref
        self._actions = actions
        self._refs = refs
        self.members = frozenset(actions)

    def actions_for(self, key: str) -> tuple:
        return self._actions.get(key, ())

    def refs(self) -> list[MethodRef]:
        return list(self._refs.values())

    def entries(self) -> list[tuple[MethodRef, tuple]]:
        return [(ref, self._actions[key]) for key, ref in self._refs.items()]

    def with_target(self, ref: MethodRef, acts: Iterable[TraceAction]) -> "TargetSet":
        return TargetSet(self.entries() + [(ref, tuple(acts))])

    def __contains__(self, key: str) -> bool:
        return key in self.members

    def __len__(self) -> int:
        return len(self._actions)

    def __iter__(self):
        return iter(self._refs.values())


@dataclass
class ApplyReport:
    """What a bring-up actually touched."""

    mode: str
    targets: int
    injected: int
    entry_points_changed: int
    warnings: tuple = ()
    pending: int = 0


class TraceEngine:
    """Owns one VM's trace session: phases, injection bookkeeping and the sink."""

    def __init__(self, vm, sink: EventSink | None = None):
        self.vm = vm
        self.instrumentation = vm.instrumentation
        self.sink = sink if sink is not None else EventSink()
        self.phase = TracePhase.IDLE
        self.mode: str | None = None
        self._lock = threading.RLock()
        self._targets = TargetSet()
        self._pending: list[tuple[MethodRef, tuple]] = []
        self._injected: list[tuple[str, EntryPoint]] = []
        self._registration: ListenerRegistration | None = None
        self._listener_added = False
        self._saved_handler = None
        self._adaptive = True
        self.spurious_filtered = 0
        self.unmatched_exits = 0
        vm.registry.on_load(self._on_classes_loaded)

    # -- phase operations ---------------------------------------------------

    def suppress_global_tracing(self) -> None:
        """Phase 1: make the built-in activation a no-op before anything else."""
        with self._lock:
            self._require_phase(TracePhase.IDLE, "suppress_global_tracing")
            self._saved_handler = self.instrumentation.set_activation_handler(_noop_activation)
            self.phase = TracePhase.SUPPRESSED

    def inject_targets(self, target_set: TargetSet, *, adaptive: bool = True) -> ApplyReport:
        """Phase 2: install per-target stubs matched to each method's tier."""
        with self._lock:
            self._require_phase(TracePhase.SUPPRESSED, "inject_targets")
            self._adaptive = adaptive
            self._targets = target_set
            injected = 0
            changed = 0
            warnings = []
            registry = self.vm.registry
            for ref in target_set:
                record = registry.get(ref.key)
                if record is None:
                    warnings.append(f"target not loaded yet, deferred: {ref.key}")
                    self._pending.append((ref, target_set.actions_for(ref.key)))
                    continue
                if self._install_target_stub(record):
                    changed += 1
                self._injected.append((ref.key, record.entry_point))
                injected += 1
            self.phase = TracePhase.INJECTED
            return ApplyReport("targeted", len(target_set), injected, changed,
                               tuple(warnings), len(self._pending))

    def install_dispatcher(self) -> ListenerRegistration:
        """Phase 3a: build the filtering proxy listener. Not yet registered."""
        with self._lock:
            self._require_phase(TracePhase.INJECTED, "install_dispatcher")
            return self._build_registration()

    def activate(self):
        """Phase 3b: start tracing through the normal entry point.

        With the activation handler suppressed this registers the proxy and
        changes no entry points.
        """
        with self._lock:
            self._require_phase(TracePhase.INJECTED, "activate")
            if self._registration is None:
                raise PhaseError("activate before install_dispatcher")
            result = self.instrumentation.native_trace_start(self._registration)
            self._listener_added = True
            self.phase = TracePhase.ACTIVE
            return result

    def apply(self, target_set: TargetSet, *, adaptive: bool = True,
              pending: Iterable[tuple[MethodRef, tuple]] = ()) -> ApplyReport:
        """Full targeted bring-up: suppress, inject, mount proxy, activate."""
        with self._lock:
            self.suppress_global_tracing()
            report = self.inject_targets(target_set, adaptive=adaptive)
            for ref, acts in pending:
                self._pending.append((ref, tuple(acts)))
            self.install_dispatcher()
            self.activate()
            self.mode = "targeted"
            return ApplyReport(self.mode, report.targets, report.injected,
                               report.entry_points_changed, report.warnings,
                               len(self._pending))

    def apply_global(self, target_set: TargetSet) -> ApplyReport:
        """Bring-up without suppression or injection: the stock global walk runs.

        The proxy still filters to the target set, so the trace output matches
        the targeted mode; only the cost differs.
        """
        with self._lock:
            self._require_phase(TracePhase.IDLE, "apply_global")
            self._targets = target_set
            self._build_registration()
            report = self.instrumentation.native_trace_start(self._registration)
            self._listener_added = True
            self.phase = TracePhase.ACTIVE
            self.mode = "global"
            changed = report.entry_points_replaced if report is not None else 0
            return ApplyReport(self.mode, len(target_set), 0, changed)

    def rollback(self) -> dict:
        """Undo everything this engine changed, in reverse order. Idempotent."""
        with self._lock:
            summary = {"listener_removed": False, "entry_points_restored": 0,
                       "handler_restored": False}
            if self.phase is TracePhase.IDLE:
                return summary
            if self._listener_added and self._registration is not None:
                self.instrumentation.remove_listener(self._registration.listener_id)
                summary["listener_removed"] = True
            self._listener_added = False
            self._registration = None

            if self.mode == "global":
                summary["entry_points_restored"] = (
                    self.instrumentation.restore_all_entry_points())
            else:
                restored = 0
                for key, _stub in reversed(self._injected):
                    record = self.vm.registry.get(key)
                    if record is None:
                        continue
                    if self.instrumentation.restore_entry_point_for_method(record):
                        restored += 1
                        if (record.compilation_state is CompilationState.COMPILED
                                and record.entry_point is EntryPoint.INTERPRETER_BRIDGE):
                            log.warning(
                                "%s was compiled while traced; restored entry point "
                                "predates the compile", key)
                summary["entry_points_restored"] = restored
            self._injected.clear()
            self._pending.clear()

            if self._saved_handler is not None:
                self.instrumentation.set_activation_handler(self._saved_handler)
                self._saved_handler = None
                summary["handler_restored"] = True
            self.phase = TracePhase.IDLE
            self.mode = None
            return summary

    def drain(self):
        return self.sink.drain()

    def status(self) -> dict:
        with self._lock:
            return {
                "phase": self.phase.value,
                "mode": self.mode,
                "targets": sorted(self._targets.members),
                "injected": len(self._injected),
                "pending": len(self._pending),
                "listener_active": self._listener_added,
                "events_buffered": len(self.sink),
                "events_emitted": self.sink.emitted_count,
                "events_dropped": self.sink.dropped_count,
                "spurious_filtered": self.spurious_filtered,
            }

    # -- internals ------------------------------------------------------------

    def _require_phase(self, expected: TracePhase, op: str) -> None:
        if self.phase is not expected:
            raise PhaseError(f"{op} requires phase {expected.value}, engine is "
                             f"{self.phase.value}")

    def _install_target_stub(self, record) -> bool:
        if self._adaptive and record.compilation_state is CompilationState.COMPILED:
            stub = EntryPoint.INSTRUMENTATION_QUICK_STUB
        else:
            stub = EntryPoint.INSTRUMENTATION_INTERPRETER_STUB
        return self.instrumentation.install_stubs_for_method(record, stub)

    def _build_registration(self) -> ListenerRegistration:
        self._registration = ListenerRegistration(
            listener_id=PROXY_LISTENER_ID,
            event_mask=frozenset({EventKind.METHOD_ENTERED, EventKind.METHOD_EXITED}),
            callback=self._on_event,
            description="target-filtering trace proxy",
        )
        return self._registration

    def _on_classes_loaded(self, new_keys: list[str]) -> None:
        """Deferred injection: stub targets whose class just arrived."""
        with self._lock:
            if self.phase not in (TracePhase.INJECTED, TracePhase.ACTIVE):
                return
            if not self._pending or self.mode == "global":
                return
            fresh = set(new_keys)
            still_pending = []
            for ref, acts in self._pending:
                if ref.key not in fresh:
                    still_pending.append((ref, acts))
                    continue
                record = self.vm.registry.get(ref.key)
                if record is None:  # pragma: no cover - keys come from the registry
                    still_pending.append((ref, acts))
                    continue
                self._install_target_stub(record)
                self._injected.append((ref.key, record.entry_point))
                if ref.key not in self._targets.members:
                    self._targets = self._targets.with_target(ref, acts)
                log.info("deferred injection of %s", ref.key)
            self._pending = still_pending

    def _on_event(self, thread, ref: MethodRef, kind: EventKind, detail) -> None:
        """Proxy listener: filter to targets, run actions, never re-enter."""
        if thread.in_interceptor:
            return
        targets = self._targets
        key = ref.key
        if key not in targets.members:
            self.spurious_filtered += 1
            return
        acts = targets.actions_for(key)
        thread.in_interceptor = True
        thread.frames.append(CallFrame(INTERCEPT_REF, synthetic=True))
        try:
            if kind is EventKind.METHOD_ENTERED:
                self._on_target_enter(thread, ref, acts, detail)
            else:
                self._on_target_exit(thread, ref, acts, detail)
        except Exception:  # pragma: no cover - actions are defensive already
            log.exception("trace action failed for %s", key)
        finally:
            thread.frames.pop()
            thread.in_interceptor = False

    def _on_target_enter(self, thread, ref, acts, detail) -> None:
        if TraceAction.CAPTURE_STACK in acts:
            frames = list(reversed(thread.frames))
            self.sink.append(capture_stack_event(frames, ref))
        if TraceAction.CAPTURE_ARGS in acts or TraceAction.TIME_METHOD in acts:
            args_payload = None
            if TraceAction.CAPTURE_ARGS in acts:
                args_payload = capture_args_payload(
                    detail.args, self.vm.registry.value_to_payload)
            thread.trace_pending.append((ref.key, time.perf_counter_ns(), args_payload))

    def _on_target_exit(self, thread, ref, acts, detail) -> None:
        if TraceAction.CAPTURE_ARGS not in acts and TraceAction.TIME_METHOD not in acts:
            return
        pending = thread.trace_pending
        if pending and pending[-1][0] == ref.key:
            _key, t0, args_payload = pending.pop()
        else:
            # Exit with no matching entry: listener attached mid-call.
            self.unmatched_exits += 1
            return
        if TraceAction.TIME_METHOD in acts:
            duration = time.perf_counter_ns() - t0
            self.sink.append(time_method_event(ref, duration, detail.abrupt))
        if TraceAction.CAPTURE_ARGS in acts and args_payload is not None:
            self.sink.append(capture_args_event(
                ref, args_payload, detail.value, detail.abrupt,
                self.vm.registry.value_to_payload))


def _noop_activation():
    """Replacement activation handler: deliberately changes nothing."""
    return None
