"""Cycle counting: instrument a program with a counter and bound its runtime.

Every statement is charged before it runs. Statement ``l`` becomes a jump
into a block at reserved high labels::

    l:    jmp R
    R:    c := c + k
    R+1:  <statement>
    R+2:  jmp l + 1          (assignments and assertions only)

Conditional jumps whose edges cost differently go through two trampolines
that charge the taken and the fallthrough cost separately. Reserved labels
start at three quarters of the label space and are never jump targets of
the original program.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .engine import AnalysisReport, Engine, ExploreOptions, UnboundedCounter, counter_bounds
from .expr import BinOp, Const, Expr, Sym, Var
from .kernel import Kernel
from .program import Assert, Assign, CJmp, Cycles, Jmp, Program, is_memory_stmt, typecheck_program
from .serial import sha256
from .sym import SymError, SymState, initial_state, sym_eval
from .text import print_program
from .values import Word, WordTy, mask

COUNTER = "c"
COUNTER_WIDTH = 32
BLOCK = 5


class VariableCReserved(ValueError):
    pass


@dataclass(frozen=True)
class CostModel:
    alu: int = 1
    memory: int = 2
    jump: int = 3
    branch_taken: int = 3
    branch_fall: int = 1
    assertion: int = 0

    def __post_init__(self):
        if min(self.alu, self.memory, self.jump, self.branch_taken, self.branch_fall, self.assertion) < 0:
            raise ValueError("costs must be non-negative")

    def cost(self, p: Program, label: int) -> Cycles:
        ann = p.cycles.get(label)
        if ann is not None:
            return ann
        stmt = p.stmts[label]
        if isinstance(stmt, CJmp):
            return Cycles(self.branch_taken, self.branch_fall)
        if isinstance(stmt, Jmp):
            return Cycles(self.jump)
        if isinstance(stmt, Assert):
            return Cycles(self.assertion)
        return Cycles(self.memory if is_memory_stmt(stmt) else self.alu)


DEFAULT_COSTS = CostModel()


@dataclass(frozen=True)
class TimeInterval:
    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise ValueError(f"bad interval [{self.lo}, {self.hi}]")

    def __add__(self, other: "TimeInterval") -> "TimeInterval":
        return TimeInterval(self.lo + other.lo, self.hi + other.hi)

    def hull(self, other: "TimeInterval") -> "TimeInterval":
        return TimeInterval(min(self.lo, other.lo), max(self.hi, other.hi))

    def __str__(self):
        return f"[{self.lo}, {self.hi}]"


def reserved_base(label_width: int) -> int:
    return 3 << (label_width - 2)


@dataclass
class Instrumented:
    program: Program
    block_of: Dict[int, int]

    def fragment(self, labels: Iterable[int]) -> frozenset:
        out = set()
        for l in labels:
            out.add(l)
            if l in self.block_of:
                out.update(range(self.block_of[l], self.block_of[l] + BLOCK))
        return frozenset(out) & frozenset(self.program.stmts)


def instrument(p: Program, cm: CostModel = DEFAULT_COSTS) -> Instrumented:
    typing = typecheck_program(p)
    if COUNTER in typing:
        raise VariableCReserved(f"variable {COUNTER} is used by the program")
    lw = p.label_width
    c = Var(COUNTER, WordTy(COUNTER_WIDTH))

    def lab(v: int) -> Const:
        return Const(Word(lw, v))

    def charge(k: int) -> Assign:
        return Assign(c, BinOp("add", c, Const(Word(COUNTER_WIDTH, k))))

    base = reserved_base(lw)
    if any(l >= base for l in p.stmts) or any(l >= base for l in p.exits):
        raise ValueError("program uses reserved labels")
    if base + BLOCK * len(p.stmts) > mask(lw) + 1:
        raise ValueError("not enough reserved labels for this program")
    stmts = {}
    block_of = {}
    for i, l in enumerate(sorted(p.stmts)):
        r = base + BLOCK * i
        block_of[l] = r
        stmt = p.stmts[l]
        cost = cm.cost(p, l)
        stmts[l] = Jmp(lab(r))
        if isinstance(stmt, (Assign, Assert)):
            stmts[r] = charge(cost.taken)
            stmts[r + 1] = stmt
            stmts[r + 2] = Jmp(lab(l + 1))
        elif isinstance(stmt, Jmp):
            stmts[r] = charge(cost.taken)
            stmts[r + 1] = stmt
        else:
            fall = cost.fall if cost.fall is not None else cost.taken
            if fall == cost.taken:
                stmts[r] = charge(cost.taken)
                stmts[r + 1] = stmt
            else:
                stmts[r] = CJmp(stmt.cond, lab(r + 1), lab(r + 3))
                stmts[r + 1] = charge(cost.taken)
                stmts[r + 2] = Jmp(stmt.target_true)
                stmts[r + 3] = charge(fall)
                stmts[r + 4] = Jmp(stmt.target_false)
    decls = dict(typing)
    decls[COUNTER] = c.ty
    out = Program(stmts, p.entry, lw, p.name, frozenset(p.exits), {}, decls)
    typecheck_program(out)
    return Instrumented(out, block_of)


def target_interval(t: SymState, c: Var, alpha_c: Sym) -> TimeInterval:
    lo, hi = counter_bounds(t, c, alpha_c)
    return TimeInterval(lo, hi)


def extract_interval(ps, c: Var, alpha_c: Sym) -> TimeInterval:
    """Hull of the counter intervals of all running targets."""
    out = None
    for t in ps.targets:
        if isinstance(t, SymError):
            continue
        iv = target_interval(t, c, alpha_c)
        out = iv if out is None else out.hull(iv)
    if out is None:
        raise UnboundedCounter("no running target")
    return out


@dataclass
class WcetResult:
    interval: TimeInterval
    report: AnalysisReport
    program: Program
    entry: int
    exits: Tuple[int, ...]
    paths: List[Tuple[int, TimeInterval]] = field(default_factory=list)
    errors: int = 0

    def format(self, cert_path: Optional[str] = None) -> str:
        lines = [
            f"program {self.program.name} {sha256(print_program(self.program))}",
            f"entry {self.entry}",
            "exit " + ", ".join(str(e) for e in self.exits),
            f"interval {self.interval.lo} {self.interval.hi}",
        ]
        for pc, iv in self.paths:
            lines.append(f"path {pc} {iv.lo} {iv.hi}")
        if self.errors:
            lines.append(f"error-paths {self.errors}")
        if cert_path:
            lines.append(f"certificate {cert_path}")
        return "\n".join(lines)


def analyze_wcet(
    p: Program,
    entry: Optional[int] = None,
    exits: Optional[Iterable[int]] = None,
    pre: Optional[Expr] = None,
    opts: Optional[ExploreOptions] = None,
    cfg=None,
    cm: CostModel = DEFAULT_COSTS,
) -> WcetResult:
    """Best and worst case cycle counts from ``entry`` until an exit label."""
    entry = p.entry if entry is None else entry
    exits = tuple(sorted(set(exits) if exits is not None else set(p.exits)))
    if not exits:
        raise ValueError("no exit labels given")
    inst = instrument(p, cm)
    q = inst.program
    labels = inst.fragment(set(p.stmts) - set(exits))
    if entry not in labels:
        raise ValueError(f"entry {entry} is not inside the analysed fragment")
    s0 = initial_state(q, entry)
    if pre is not None:
        s0 = s0.with_path((sym_eval(pre, s0.env),))
    c = s0.env.lookup(COUNTER)
    alpha_c = s0.env[c]
    o = opts or ExploreOptions()
    o = ExploreOptions(
        max_paths=o.max_paths,
        max_steps=o.max_steps,
        merge_policy=o.merge_policy,
        forget_vars=o.forget_vars,
        simplify_memory=o.simplify_memory,
        unroll_bound=o.unroll_bound,
        jobs=o.jobs,
        counters={COUNTER: alpha_c},
        max_term_size=o.max_term_size,
    )
    kernel = Kernel(q, cfg)
    report = Engine(kernel, o).explore(s0, labels)
    ps = report.structure
    interval = extract_interval(ps, c, alpha_c)
    paths = [(t.pc, target_interval(t, c, alpha_c)) for t in ps.targets if isinstance(t, SymState)]
    errors = sum(isinstance(t, SymError) for t in ps.targets)
    return WcetResult(interval, report, q, entry, exits, sorted(paths, key=lambda x: (x[0], x[1].lo, x[1].hi)), errors)
