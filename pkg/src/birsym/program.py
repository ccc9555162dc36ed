"""Statements, programs, type checking and the concrete transition function."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple, Union

from .expr import (
    Expr,
    Load,
    Store,
    Sym,
    UnboundVariable,
    Var,
    evaluate,
    variables,
    walk,
)
from .values import BOOL, MemTy, Ty, Value, Word, WordTy, mask


class ProgramTypeError(TypeError):
    """A program is ill-typed; carries the offending label."""

    def __init__(self, label, reason):
        super().__init__(f"label {label}: {reason}")
        self.label = label
        self.reason = reason


@dataclass(frozen=True)
class Assign:
    var: Var
    expr: Expr


@dataclass(frozen=True)
class Assert:
    cond: Expr


@dataclass(frozen=True)
class Jmp:
    target: Expr


@dataclass(frozen=True)
class CJmp:
    cond: Expr
    target_true: Expr
    target_false: Expr


Statement = Union[Assign, Assert, Jmp, CJmp]


@dataclass(frozen=True)
class Cycles:
    """Per-line cycle annotation; ``fall`` is only set for conditional jumps."""

    taken: int
    fall: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Program:
    stmts: Mapping[int, Statement]
    entry: int = 0
    label_width: int = 32
    name: str = "main"
    exits: frozenset = frozenset()
    cycles: Mapping[int, Cycles] = field(default_factory=dict)
    decls: Mapping[str, Ty] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Program):
            return NotImplemented
        return (
            dict(self.stmts) == dict(other.stmts)
            and self.entry == other.entry
            and self.label_width == other.label_width
            and self.name == other.name
            and set(self.exits) == set(other.exits)
            and dict(self.cycles) == dict(other.cycles)
            and self.typing() == other.typing()
        )

    __hash__ = None

    @property
    def labels(self) -> frozenset:
        return frozenset(self.stmts)

    def typing(self) -> Dict[str, Ty]:
        """Declared types merged with the types of every variable used."""
        out = dict(self.decls)
        for v in program_variables(self):
            out.setdefault(v.name, v.ty)
        return out

    def variables(self) -> Tuple[Var, ...]:
        return tuple(Var(n, t) for n, t in sorted(self.typing().items()))

    def label_word(self, label: int) -> Word:
        return Word(self.label_width, label)


def stmt_exprs(stmt: Statement) -> Tuple[Expr, ...]:
    if isinstance(stmt, Assign):
        return (stmt.var, stmt.expr)
    if isinstance(stmt, Assert):
        return (stmt.cond,)
    if isinstance(stmt, Jmp):
        return (stmt.target,)
    return (stmt.cond, stmt.target_true, stmt.target_false)


def program_variables(p: Program) -> frozenset:
    out = frozenset()
    for stmt in p.stmts.values():
        for e in stmt_exprs(stmt):
            out |= variables(e)
    return out


def typecheck_program(p: Program) -> Dict[str, Ty]:
    """Check ``p`` and return its variable typing (name -> type)."""
    lw = WordTy(p.label_width)
    typing: Dict[str, Ty] = dict(p.decls)
    for label in sorted(p.stmts):
        stmt = p.stmts[label]
        if not 0 <= label <= mask(p.label_width):
            raise ProgramTypeError(label, f"label does not fit in w{p.label_width}")
        for e in stmt_exprs(stmt):
            for n in walk(e):
                if isinstance(n, Sym):
                    raise ProgramTypeError(label, f"symbol {n.name} in a program")
            for v in variables(e):
                known = typing.setdefault(v.name, v.ty)
                if known != v.ty:
                    raise ProgramTypeError(label, f"{v.name} used as {v.ty} and {known}")
        if isinstance(stmt, Assign):
            if stmt.expr.ty != stmt.var.ty:
                raise ProgramTypeError(label, f"assigning {stmt.expr.ty} to {stmt.var.name}: {stmt.var.ty}")
        elif isinstance(stmt, Assert):
            if stmt.cond.ty != BOOL:
                raise ProgramTypeError(label, f"assert condition has type {stmt.cond.ty}, not w1")
        elif isinstance(stmt, Jmp):
            if stmt.target.ty != lw:
                raise ProgramTypeError(label, f"jump target has type {stmt.target.ty}, not {lw}")
        elif isinstance(stmt, CJmp):
            if stmt.cond.ty != BOOL:
                raise ProgramTypeError(label, f"cjmp condition has type {stmt.cond.ty}, not w1")
            for t in (stmt.target_true, stmt.target_false):
                if t.ty != lw:
                    raise ProgramTypeError(label, f"jump target has type {t.ty}, not {lw}")
        else:
            raise ProgramTypeError(label, f"unknown statement {stmt!r}")
        if isinstance(stmt, (Assign, Assert)):
            nxt = label + 1
            if nxt not in p.stmts and nxt not in p.exits:
                raise ProgramTypeError(label, f"fallthrough label {nxt} is neither mapped nor an exit")
    for name, ty in typing.items():
        if p.decls.get(name, ty) != ty:
            raise ProgramTypeError(None, f"{name} declared {p.decls[name]} but used as {ty}")
    return typing


# -- concrete states -----------------------------------------------------------


@dataclass(frozen=True)
class State:
    """A running state; ``env`` maps variables to values."""

    pc: int
    env: Mapping[Var, Value]

    def __eq__(self, other):
        return isinstance(other, State) and self.pc == other.pc and dict(self.env) == dict(other.env)

    __hash__ = None


@dataclass(frozen=True)
class ErrorState:
    env: Mapping[Var, Value]

    def __eq__(self, other):
        return isinstance(other, ErrorState) and dict(self.env) == dict(other.env)

    __hash__ = None


AnyState = Union[State, ErrorState]


def eval_expr(e: Expr, env: Mapping[Var, Value]) -> Value:
    def leaf(n):
        if isinstance(n, Var):
            try:
                return env[n]
            except KeyError:
                raise UnboundVariable(n.name) from None
        raise UnboundVariable(f"symbol {n.name} in a concrete evaluation")

    return evaluate(e, leaf)


def step(p: Program, s: AnyState) -> AnyState:
    """One deterministic, total transition."""
    if isinstance(s, ErrorState):
        return s
    stmt = p.stmts.get(s.pc)
    if stmt is None:
        return ErrorState(s.env)
    if isinstance(stmt, Assign):
        env = dict(s.env)
        env[stmt.var] = eval_expr(stmt.expr, s.env)
        return State(s.pc + 1, env)
    if isinstance(stmt, Assert):
        if eval_expr(stmt.cond, s.env).value:
            return State(s.pc + 1, s.env)
        return ErrorState(s.env)
    if isinstance(stmt, Jmp):
        return State(eval_expr(stmt.target, s.env).value, s.env)
    cond = eval_expr(stmt.cond, s.env).value
    target = stmt.target_true if cond else stmt.target_false
    return State(eval_expr(target, s.env).value, s.env)


class Truncated(RuntimeError):
    """The fragment was not left within the step budget."""

    def __init__(self, max_steps, trace):
        super().__init__(f"fragment not exited within {max_steps} steps")
        self.max_steps = max_steps
        self.trace = trace


def run_in_fragment(p: Program, s: AnyState, labels, max_steps: int = 100_000) -> list:
    """Step while the state is running inside ``labels``; return the trace.

    The last state is the first one outside the fragment (or an error state).
    """
    if not isinstance(s, State) or s.pc not in labels:
        raise ValueError("initial state must be running inside the fragment")
    trace = [s]
    cur = s
    for _ in range(max_steps):
        cur = step(p, cur)
        trace.append(cur)
        if not isinstance(cur, State) or cur.pc not in labels:
            return trace
    raise Truncated(max_steps, trace)


def is_memory_stmt(stmt: Statement) -> bool:
    return any(isinstance(n, (Load, Store)) for e in stmt_exprs(stmt) for n in walk(e))


def default_store(p: Program, fill: int = 0) -> Dict[Var, Value]:
    from .values import MemoryValue

    env: Dict[Var, Value] = {}
    for v in p.variables():
        if isinstance(v.ty, MemTy):
            env[v] = MemoryValue.filled(v.ty, fill)
        else:
            env[v] = Word(v.ty.width, fill)
    return env
