"""Program text parser and static validator.

The source format is line oriented::

    class demo.Math
      method fib(int)
        loadarg 0
        jz +15
        ...
        ret

``#`` starts a comment outside quoted strings. Indentation is not significant.
Jump offsets are relative to the jump instruction itself.

Validation walks the control-flow graph of each method and rejects jumps out
of range, operand-stack underflow, inconsistent stack depth at merge points,
paths that fall off the end without ``ret``, and bad argument or local slots.
The per-instruction stack depths proven here are what the lowering pass later
relies on to turn stack slots into plain variables.
"""

from __future__ import annotations

import re

from .core import (
    I64_MAX,
    I64_MIN,
    ClassRegistry,
    Instruction,
    MethodRef,
    MethodSpec,
    MNEMONIC_TO_OPCODE,
    Opcode,
    Program,
    intern_id,
    parse_signature,
)
from .errors import ProgramParseError, ProgramValidationError

MAX_LOCAL_SLOTS = 256

_INT_RE = re.compile(r"[+-]?\d+$")
_CLASS_RE = re.compile(r"class\s+(\S+)$")
_METHOD_RE = re.compile(r"method\s+([A-Za-z_$][A-Za-z0-9_$]*)\s*\((.*)\)$")


def _strip_comment(line: str) -> str:
    if "#" not in line:
        return line
    in_string = False
    for i, ch in enumerate(line):
        if ch == '"' and (i == 0 or line[i - 1] != "\\"):
            in_string = not in_string
        elif ch == "#" and not in_string:
            return line[:i]
    return line


def _parse_string_literal(text: str, line_no: int) -> str:
    if len(text) < 2 or not text.endswith('"'):
        raise ProgramParseError(f"unterminated string literal {text!r}", line_no)
    body = text[1:-1]
    out = []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\":
            if i + 1 >= len(body):
                raise ProgramParseError(f"dangling escape in {text!r}", line_no)
            nxt = body[i + 1]
            if nxt not in ('"', "\\"):
                raise ProgramParseError(f"unknown escape \\{nxt} in {text!r}", line_no)
            out.append(nxt)
            i += 2
        elif ch == '"':
            raise ProgramParseError(f"stray quote inside {text!r}", line_no)
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _parse_int(token: str, line_no: int, *, signed: bool = True) -> int:
    if not _INT_RE.match(token):
        raise ProgramParseError(f"expected integer operand, got {token!r}", line_no)
    value = int(token)
    if not signed and value < 0:
        raise ProgramParseError(f"expected non-negative operand, got {token}", line_no)
    return value


class _MethodBuilder:
    def __init__(self, ref: MethodRef, decl_line: int):
        self.ref = ref
        self.decl_line = decl_line
        self.instructions: list[Instruction] = []
        self.lines: list[int] = []

    def add(self, instr: Instruction, line_no: int) -> None:
        self.instructions.append(instr)
        self.lines.append(line_no)

    def finish(self) -> MethodSpec:
        key = self.ref.key
        code = tuple(self.instructions)
        if not code:
            raise ProgramValidationError("method has no instructions", key, self.decl_line)
        n_locals = 0
        for instr, line_no in zip(code, self.lines):
            if instr.op in (Opcode.LOAD_LOCAL, Opcode.STORE_LOCAL):
                slot = instr.arg
                if slot >= MAX_LOCAL_SLOTS:
                    raise ProgramValidationError(f"local slot {slot} too large", key, line_no)
                n_locals = max(n_locals, slot + 1)
        depths = self._verify(code, n_locals)
        return MethodSpec(self.ref, code, n_locals, depths, self.decl_line)

    def _verify(self, code, n_locals: int) -> tuple:
        """Prove a single stack depth per reachable instruction and full return coverage."""
        key = self.ref.key
        arity = self.ref.arity
        n = len(code)
        depths: list[int | None] = [None] * n
        work = [(0, 0)]
        while work:
            pc, depth = work.pop()
            while True:
                if pc >= n or pc < 0:
                    raise ProgramValidationError(
                        f"control reaches pc {pc}, outside the method",
                        key, self.lines[min(pc, n) - 1] if n else self.decl_line)
                seen = depths[pc]
                if seen is not None:
                    if seen != depth:
                        raise ProgramValidationError(
                            f"inconsistent stack depth at pc {pc} ({seen} vs {depth})",
                            key, self.lines[pc])
                    break
                depths[pc] = depth
                op, arg = code[pc]
                line_no = self.lines[pc]
                if op == Opcode.PUSH_CONST:
                    depth += 1
                elif op == Opcode.LOAD_ARG:
                    if arg >= arity:
                        raise ProgramValidationError(
                            f"loadarg {arg} out of range for arity {arity}", key, line_no)
                    depth += 1
                elif op == Opcode.LOAD_LOCAL:
                    depth += 1
                elif op == Opcode.STORE_LOCAL:
                    if depth < 1:
                        raise ProgramValidationError("stack underflow at storelocal", key, line_no)
                    depth -= 1
                elif op in (Opcode.ADD, Opcode.SUB, Opcode.MUL):
                    if depth < 2:
                        raise ProgramValidationError(
                            f"stack underflow at {op.name.lower()}", key, line_no)
                    depth -= 1
                elif op == Opcode.JUMP_IF_ZERO:
                    if depth < 1:
                        raise ProgramValidationError("stack underflow at jz", key, line_no)
                    depth -= 1
                    target = pc + arg
                    if not 0 <= target < n:
                        raise ProgramValidationError(
                            f"jump target {target} out of range", key, line_no)
                    work.append((target, depth))
                elif op == Opcode.JUMP:
                    target = pc + arg
                    if not 0 <= target < n:
                        raise ProgramValidationError(
                            f"jump target {target} out of range", key, line_no)
                    pc = target
                    continue
                elif op == Opcode.CALL:
                    callee: MethodRef = arg
                    if depth < callee.arity:
                        raise ProgramValidationError(
                            f"stack underflow at call {callee.key}", key, line_no)
                    depth = depth - callee.arity + 1
                elif op == Opcode.RETURN:
                    if depth < 1:
                        raise ProgramValidationError("stack underflow at ret", key, line_no)
                    break
                else:  # pragma: no cover - parser emits only known opcodes
                    raise ProgramValidationError(f"unknown opcode {op}", key, line_no)
                pc += 1
                if pc >= n:
                    raise ProgramValidationError(
                        "control falls off the end of the method; missing ret",
                        key, self.lines[-1])
        return tuple(depths)


def parse_program(text: str) -> Program:
    """Parse and validate program text into an immutable ``Program``."""
    methods: list[MethodSpec] = []
    seen_keys: dict[str, int] = {}
    class_order: list[str] = []
    interned: list[str] = []
    interned_seen: set[str] = set()

    current_class: str | None = None
    builder: _MethodBuilder | None = None

    def finish_builder():
        nonlocal builder
        if builder is not None:
            methods.append(builder.finish())
            builder = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue

        head = line.split(None, 1)[0]
        if head == "class":
            m = _CLASS_RE.match(line)
            if not m:
                raise ProgramParseError(f"bad class header {line!r}", line_no)
            finish_builder()
            name = m.group(1)
            if not re.match(r"[A-Za-z_$][A-Za-z0-9_$]*(\.[A-Za-z_$][A-Za-z0-9_$]*)*$", name):
                raise ProgramParseError(f"bad class name {name!r}", line_no)
            current_class = name
            if name not in class_order:
                class_order.append(name)
            continue

        if head == "method":
            m = _METHOD_RE.match(line)
            if not m:
                raise ProgramParseError(f"bad method header {line!r}", line_no)
            if current_class is None:
                raise ProgramParseError("method outside a class", line_no)
            finish_builder()
            ref = MethodRef(current_class, m.group(1), parse_signature(m.group(2)))
            if ref.key in seen_keys:
                raise ProgramParseError(
                    f"duplicate method {ref.key} (first declared on line {seen_keys[ref.key]})",
                    line_no)
            seen_keys[ref.key] = line_no
            builder = _MethodBuilder(ref, line_no)
            continue

        if builder is None:
            raise ProgramParseError(f"instruction outside a method: {line!r}", line_no)

        parts = line.split(None, 1)
        mnemonic = parts[0]
        operand = parts[1].strip() if len(parts) > 1 else None
        op = MNEMONIC_TO_OPCODE.get(mnemonic)
        if op is None:
            raise ProgramParseError(f"unknown instruction {mnemonic!r}", line_no)

        if op in (Opcode.ADD, Opcode.SUB, Opcode.MUL, Opcode.RETURN):
            if operand is not None:
                raise ProgramParseError(f"{mnemonic} takes no operand", line_no)
            builder.add(Instruction(op), line_no)
        elif op == Opcode.PUSH_CONST:
            if operand is None:
                raise ProgramParseError("pushconst needs an operand", line_no)
            if operand.startswith('"'):
                text_value = _parse_string_literal(operand, line_no)
                if text_value not in interned_seen:
                    interned_seen.add(text_value)
                    interned.append(text_value)
                builder.add(Instruction(op, intern_id(text_value)), line_no)
            else:
                value = _parse_int(operand, line_no)
                if not I64_MIN <= value <= I64_MAX:
                    raise ProgramParseError(f"constant {value} outside 64-bit range", line_no)
                builder.add(Instruction(op, value), line_no)
        elif op in (Opcode.LOAD_ARG, Opcode.LOAD_LOCAL, Opcode.STORE_LOCAL):
            if operand is None:
                raise ProgramParseError(f"{mnemonic} needs a slot operand", line_no)
            builder.add(Instruction(op, _parse_int(operand, line_no, signed=False)), line_no)
        elif op in (Opcode.JUMP_IF_ZERO, Opcode.JUMP):
            if operand is None:
                raise ProgramParseError(f"{mnemonic} needs a relative offset", line_no)
            builder.add(Instruction(op, _parse_int(operand, line_no)), line_no)
        elif op == Opcode.CALL:
            if operand is None:
                raise ProgramParseError("call needs a method reference", line_no)
            builder.add(Instruction(op, MethodRef.parse(operand)), line_no)

    finish_builder()
    if not methods:
        raise ProgramParseError("program declares no methods", 1)
    return Program(tuple(methods), tuple(class_order), tuple(interned))


def load_program(text: str) -> ClassRegistry:
    """Parse program text and instantiate a fresh registry from it."""
    return parse_program(text).instantiate()
