"""Runtime instrumentation: listeners, event dispatch and entry-point stubs.

Listeners subscribe to method entry and exit events. Dispatch walks an
immutable snapshot of the callback list, so registration changes never mutate
a list another thread is iterating; in-flight dispatch just finishes on the
old snapshot. A listener that raises is logged and counted, never propagated
into the traced call.

Starting tracing the built-in way registers the listener and then hands
control to the activation handler. The stock handler walks every loaded
method and installs the interpreter stub on all of them, which is exactly the
whole-runtime slowdown the targeted engine exists to avoid. The handler slot
is swappable so that engine can suppress the global walk.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .core import ClassRegistry, CompilationState, EntryPoint, MethodRecord, MethodRef
from .errors import DuplicateListenerError, InvalidStubError, UnknownListenerError

log = logging.getLogger(__name__)


class EventKind(Enum):
    METHOD_ENTERED = "method_entered"
    METHOD_EXITED = "method_exited"


@dataclass(frozen=True)
class EventDetail:
    """Per-event extras: call args on entry, return value and abrupt flag on exit."""

    args: tuple = ()
    value: object = None
    abrupt: bool = False


@dataclass(frozen=True)
class ListenerRegistration:
    listener_id: str
    event_mask: frozenset
    callback: Callable
    description: str = ""


@dataclass
class InstallationReport:
    """Summary of a stub-installation walk over loaded classes."""

    methods_visited: int = 0
    entry_points_replaced: int = 0
    per_class: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "methods_visited": self.methods_visited,
                "entry_points_replaced": self.entry_points_replaced,
                "per_class": self.per_class,
            },
            sort_keys=False,
        )


class Instrumentation:
    """Listener registry and stub installer for one VM."""

    def __init__(self, registry: ClassRegistry):
        self.registry = registry
        self._lock = threading.Lock()
        self._registrations: dict[str, ListenerRegistration] = {}
        self._entry_callbacks: tuple = ()
        self._exit_callbacks: tuple = ()
        self.has_entry = False
        self.has_exit = False
        self.events_dispatched = 0
        self.callback_errors = 0
        self._default_activation = self.enable_method_tracing_native
        self._activation_handler: Callable = self._default_activation

    # -- listener registry ------------------------------------------------

    def add_listener(self, registration: ListenerRegistration) -> None:
        if not registration.event_mask:
            raise ValueError("listener must subscribe to at least one event kind")
        with self._lock:
            if registration.listener_id in self._registrations:
                raise DuplicateListenerError(
                    f"listener {registration.listener_id!r} already registered")
            self._registrations[registration.listener_id] = registration
            self._rebuild_snapshots()

    def remove_listener(self, listener_id: str) -> None:
        with self._lock:
            if listener_id not in self._registrations:
                raise UnknownListenerError(f"listener {listener_id!r} not registered")
            del self._registrations[listener_id]
            self._rebuild_snapshots()

    def _rebuild_snapshots(self) -> None:
        regs = self._registrations.values()
        self._entry_callbacks = tuple(
            r.callback for r in regs if EventKind.METHOD_ENTERED in r.event_mask)
        self._exit_callbacks = tuple(
            r.callback for r in regs if EventKind.METHOD_EXITED in r.event_mask)
        self.has_entry = bool(self._entry_callbacks)
        self.has_exit = bool(self._exit_callbacks)

    def listener_ids(self) -> list[str]:
        with self._lock:
            return list(self._registrations.keys())

    def has_method_entry_listeners(self) -> bool:
        return self.has_entry

    def has_method_exit_listeners(self) -> bool:
        return self.has_exit

    # -- event dispatch ----------------------------------------------------

    def method_enter_event(self, thread, ref: MethodRef, args) -> None:
        self.events_dispatched += 1
        detail = None
        for callback in self._entry_callbacks:
            if detail is None:
                detail = EventDetail(args=tuple(args))
            try:
                callback(thread, ref, EventKind.METHOD_ENTERED, detail)
            except Exception:
                self.callback_errors += 1
                log.exception("method-entry listener failed for %s", ref.key)

    def method_exit_event(self, thread, ref: MethodRef, value, abrupt: bool = False) -> None:
        self.events_dispatched += 1
        detail = None
        for callback in self._exit_callbacks:
            if detail is None:
                detail = EventDetail(value=value, abrupt=abrupt)
            try:
                callback(thread, ref, EventKind.METHOD_EXITED, detail)
            except Exception:
                self.callback_errors += 1
                log.exception("method-exit listener failed for %s", ref.key)

    # -- entry-point stubs ---------------------------------------------------

    def install_stubs_for_method(self, ref: "MethodRef | str | MethodRecord",
                                 stub: EntryPoint) -> bool:
        """Swap a method's entry point to an instrumentation stub.

        Saves the original entry point the first time so it can be restored
        exactly. Returns True when the slot actually changed. The quick stub
        is only valid for compiled methods.
        """
        if not stub.is_instrumentation_stub:
            raise InvalidStubError(f"{stub.value} is not an instrumentation stub")
        record = ref if isinstance(ref, MethodRecord) else self.registry.lookup(ref)
        if (stub is EntryPoint.INSTRUMENTATION_QUICK_STUB
                and record.compilation_state is not CompilationState.COMPILED):
            raise InvalidStubError(
                f"quick stub needs a compiled method: {record.method_ref.key}")
        if record.original_entry_point is None:
            if record.entry_point.is_instrumentation_stub:  # pragma: no cover - defensive
                raise InvalidStubError(
                    f"{record.method_ref.key} has a stub installed but no saved original")
            record.original_entry_point = record.entry_point
        if record.entry_point is stub:
            return False
        record.entry_point = stub
        return True

    def restore_entry_point_for_method(self, ref: "MethodRef | str | MethodRecord") -> bool:
        """Put back the saved original entry point. No-op without one."""
        record = ref if isinstance(ref, MethodRecord) else self.registry.lookup(ref)
        if record.original_entry_point is None:
            return False
        record.entry_point = record.original_entry_point
        record.original_entry_point = None
        return True

    def restore_all_entry_points(self) -> int:
        count = 0
        for record in self.registry.records():
            if self.restore_entry_point_for_method(record):
                count += 1
        return count

    def enable_method_tracing_native(self) -> InstallationReport:
        """Stock activation: walk every class and stub every method.

        Each method is degraded to the interpreter stub regardless of its
        compilation state, so the entire runtime pays interpreter cost while
        tracing is on.
        """
        report = InstallationReport()
        per_class = report.per_class
        for record in self.registry.records():
            report.methods_visited += 1
            if self.install_stubs_for_method(
                    record, EntryPoint.INSTRUMENTATION_INTERPRETER_STUB):
                report.entry_points_replaced += 1
                cls = record.method_ref.class_name
                per_class[cls] = per_class.get(cls, 0) + 1
        return report

    # -- activation handler slot ----------------------------------------------

    @property
    def activation_handler(self) -> Callable:
        return self._activation_handler

    @property
    def is_default_activation(self) -> bool:
        return self._activation_handler is self._default_activation

    def set_activation_handler(self, handler: Callable) -> Callable:
        """Swap the activation handler; returns the previous one."""
        if handler is None:
            raise ValueError("activation handler must be callable")
        previous = self._activation_handler
        self._activation_handler = handler
        return previous

    def reset_activation_handler(self) -> None:
        self._activation_handler = self._default_activation

    def native_trace_start(self, registration: ListenerRegistration):
        """Built-in trace start: register the listener, then run activation.

        With the stock handler in place this performs the global stub walk.
        With a replaced handler only the listener registration happens plus
        whatever the replacement does.
        """
        self.add_listener(registration)
        return self._activation_handler()
