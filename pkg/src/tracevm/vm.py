"""Virtual machine: threads, tiered dispatch and the interpreter loop.

Every call dispatches through the callee's entry-point slot. The interpreter
entry checks for method-entry listeners before touching the bytecode, which is
the hook the tracing layers build on. The quick stub fires the same events but
runs the compiled body, so a traced hot method does not fall back to the
interpreter.
"""

from __future__ import annotations

import sys
import threading

from .core import CallFrame, ClassRegistry, CompilationState, EntryPoint, MethodRecord, MethodRef
from .errors import ArityMismatchError, StackDepthError, VMInternalError
from .instrumentation import Instrumentation
from .jit import lower_method

DEFAULT_MAX_STACK_DEPTH = 10_000

_OPS = tuple(range(1, 12))  # mirrors Opcode values, unpacked locally in the hot loop

_headroom_lock = threading.Lock()
_rlimit_raised = False


def _ensure_stack_headroom(max_depth: int) -> None:
    """Best-effort bump of the recursion limit and OS stack for deep call chains.

    Each VM-level call costs a handful of Python frames, and Python frames
    consume C stack on 3.10. Raising the soft stack rlimit to the hard limit
    makes depths around the default limit safe on the main thread.
    """
    global _rlimit_raised
    with _headroom_lock:
        if not _rlimit_raised:
            _rlimit_raised = True
            try:
                import resource

                soft, hard = resource.getrlimit(resource.RLIMIT_STACK)
                if hard == resource.RLIM_INFINITY or (hard > 0 and soft != hard):
                    resource.setrlimit(resource.RLIMIT_STACK, (hard, hard))
            except Exception:
                pass
        need = max_depth * 6 + 2000
        if sys.getrecursionlimit() < need:
            sys.setrecursionlimit(need)


class VMThread:
    """Execution context owned by one driver at a time: a frame stack plus trace scratch."""

    __slots__ = ("name", "frames", "in_interceptor", "trace_pending")

    def __init__(self, name: str = "main"):
        self.name = name
        self.frames: list[CallFrame] = []
        self.in_interceptor = False
        self.trace_pending: list = []


class VM:
    """A class registry plus execution tiers and an instrumentation side table."""

    def __init__(self, registry: ClassRegistry, *, max_stack_depth: int = DEFAULT_MAX_STACK_DEPTH):
        if max_stack_depth < 1:
            raise ValueError("max_stack_depth must be positive")
        self.registry = registry
        self.max_stack_depth = max_stack_depth
        self.instrumentation = Instrumentation(registry)
        self.interpreted_calls = 0
        self.compiled_calls = 0
        _ensure_stack_headroom(max_stack_depth)

    def new_thread(self, name: str = "main") -> VMThread:
        return VMThread(name)

    def invoke(self, thread: VMThread, target: "MethodRef | str", args=()):
        """Public entry: resolve, arity-check and dispatch a call."""
        ref = MethodRef.parse(target) if isinstance(target, str) else target
        record = self.registry.lookup(ref)
        if len(args) != record.arity:
            raise ArityMismatchError(
                f"{record.method_ref.key} takes {record.arity} args, got {len(args)}")
        return self._dispatch(thread, record, list(args))

    def call_ref(self, thread: VMThread, ref: MethodRef, args: list):
        """Internal call edge used by bytecode and lowered code."""
        record = self.registry.lookup(ref)
        return self._dispatch(thread, record, args)

    def _dispatch(self, thread: VMThread, record: MethodRecord, args: list):
        frames = thread.frames
        if len(frames) >= self.max_stack_depth:
            raise StackDepthError(
                f"call depth limit {self.max_stack_depth} hit calling {record.method_ref.key}")
        frames.append(CallFrame(record.method_ref))
        try:
            entry = record.entry_point
            if entry is EntryPoint.COMPILED_DIRECT:
                self.compiled_calls += 1
                return record.lowered_code(self, thread, args)
            if entry is EntryPoint.INSTRUMENTATION_QUICK_STUB:
                return self._quick_stub(thread, record, args)
            # InterpreterBridge and the interpreter stub both land here; the
            # interpreter's own listener checkpoint fires the events.
            return self.interpret(thread, record, args)
        finally:
            frames.pop()

    def _quick_stub(self, thread: VMThread, record: MethodRecord, args: list):
        """Traced fast path: fire entry/exit events around the compiled body."""
        ins = self.instrumentation
        ref = record.method_ref
        ins.method_enter_event(thread, ref, args)
        try:
            value = self.execute_compiled(thread, record, args)
        except Exception:
            ins.method_exit_event(thread, ref, None, abrupt=True)
            raise
        ins.method_exit_event(thread, ref, value)
        return value

    def execute_compiled(self, thread: VMThread, record: MethodRecord, args: list):
        """Run the lowered body. The method must have been compiled."""
        if record.compilation_state is not CompilationState.COMPILED:
            raise VMInternalError(f"execute_compiled on uncompiled {record.method_ref.key}")
        self.compiled_calls += 1
        return record.lowered_code(self, thread, args)

    def jit_compile(self, ref: "MethodRef | str") -> MethodRecord:
        """Lower a method and flip plain interpreted entries to the compiled tier.

        Instrumentation stubs are left in place; only the tier behind them
        changes. Compiling twice is a no-op.
        """
        record = self.registry.lookup(ref)
        if record.compilation_state is CompilationState.COMPILED:
            return record
        fn, source = lower_method(record)
        record.lowered_code = fn
        record.lowered_source = source
        record.compilation_state = CompilationState.COMPILED
        if record.entry_point is EntryPoint.INTERPRETER_BRIDGE:
            record.entry_point = EntryPoint.COMPILED_DIRECT
        return record

    def interpret(self, thread: VMThread, record: MethodRecord, args: list):
        """Interpreter tier entry with the method-entry listener checkpoint."""
        self.interpreted_calls += 1
        ins = self.instrumentation
        ref = record.method_ref
        if ins.has_entry:
            ins.method_enter_event(thread, ref, args)
        try:
            value = self._run_bytecode(thread, record, args)
        except Exception:
            if ins.has_exit:
                ins.method_exit_event(thread, ref, None, abrupt=True)
            raise
        if ins.has_exit:
            ins.method_exit_event(thread, ref, value)
        return value

    def _run_bytecode(self, thread: VMThread, record: MethodRecord, args: list):
        code = record.bytecode
        stack: list = []
        push = stack.append
        pop = stack.pop
        loc = [0] * record.n_locals if record.n_locals else None
        call = self.call_ref
        (O_PUSH, O_LARG, O_LLOC, O_SLOC, O_ADD, O_SUB, O_MUL, O_JZ, O_JMP,
         O_CALL, O_RET) = _OPS
        pc = 0
        try:
            while True:
                op, arg = code[pc]
                if op == O_PUSH:
                    push(arg)
                    pc += 1
                elif op == O_LARG:
                    push(args[arg])
                    pc += 1
                elif op == O_ADD:
                    r = pop()
                    stack[-1] = (stack[-1] + r + 9223372036854775808
                                 & 18446744073709551615) - 9223372036854775808
                    pc += 1
                elif op == O_SUB:
                    r = pop()
                    stack[-1] = (stack[-1] - r + 9223372036854775808
                                 & 18446744073709551615) - 9223372036854775808
                    pc += 1
                elif op == O_MUL:
                    r = pop()
                    stack[-1] = (stack[-1] * r + 9223372036854775808
                                 & 18446744073709551615) - 9223372036854775808
                    pc += 1
                elif op == O_LLOC:
                    push(loc[arg])
                    pc += 1
                elif op == O_SLOC:
                    loc[arg] = pop()
                    pc += 1
                elif op == O_JZ:
                    pc = pc + arg if pop() == 0 else pc + 1
                elif op == O_CALL:
                    n = arg.arity
                    if n:
                        cargs = stack[-n:]
                        del stack[-n:]
                    else:
                        cargs = []
                    push(call(thread, arg, cargs))
                    pc += 1
                elif op == O_JMP:
                    pc += arg
                elif op == O_RET:
                    return pop()
                else:  # pragma: no cover - loader emits only known opcodes
                    raise VMInternalError(f"unknown opcode {op} at pc {pc}")
        except VMInternalError:
            raise
        except IndexError as exc:
            # The validator proves stack depths, so underflow here means a bug
            # in this VM, not in the program. Abort with diagnostics.
            raise VMInternalError(
                f"operand stack corruption in {record.method_ref.key} at pc {pc}: {exc}"
            ) from exc

    def current_stack(self, thread: VMThread) -> list[CallFrame]:
        """Frames of the thread, innermost first."""
        return list(reversed(thread.frames))

    def stats(self) -> dict:
        return {
            "interpreted_calls": self.interpreted_calls,
            "compiled_calls": self.compiled_calls,
            "events_dispatched": self.instrumentation.events_dispatched,
            "methods_loaded": len(self.registry),
        }
