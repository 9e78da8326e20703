"""Packaged demo: trace a listener registration back to its calling activity.

The scenario loads a four-class call chain, targets the innermost listener
registration with a stack capture and the web-view bridge with an argument
capture, runs one call, and returns what the trace saw.
"""

from __future__ import annotations

from importlib import resources

from ..actions import TraceAction
from ..config import parse_config, resolve_targets
from ..engine import TraceEngine
from ..loader import load_program
from ..vm import VM

GHOST_BUG_ENTRY = "com.bytedance.hybrid.spark.page.SparkActivity.onStart()"


def ghost_bug_sources() -> tuple[str, str]:
    pkg = resources.files(__name__)
    return (pkg.joinpath("ghost_bug.prog").read_text(encoding="utf-8"),
            pkg.joinpath("ghost_bug_config.json").read_text(encoding="utf-8"))


def run_ghost_bug():
    """Run the scenario; returns (stack frames innermost first, all events)."""
    source, config_text = ghost_bug_sources()
    vm = VM(load_program(source))
    engine = TraceEngine(vm)
    config = parse_config(config_text)
    targets, warnings, pending = resolve_targets(config, vm.registry)
    if warnings:  # pragma: no cover - packaged data always resolves
        raise RuntimeError(f"demo config did not resolve: {warnings}")
    engine.apply(targets, pending=pending)
    thread = vm.new_thread("demo")
    result = vm.invoke(thread, GHOST_BUG_ENTRY, ())
    engine.rollback()
    events = engine.drain().events
    stack_event = next(e for e in events if e.action is TraceAction.CAPTURE_STACK)
    return stack_event.payload["stack"], events, result
