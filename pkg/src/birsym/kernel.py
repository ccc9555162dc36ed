"""The trusted kernel: progress structures and the rules that build them.

A :class:`ProgressStructure` ``L, s |-> targets`` claims that every concrete
state matched by ``s`` runs inside ``L`` for at least one step and then reaches
a state loosely matched by one of the targets. Values of that class can only
be produced by the rule methods of :class:`Kernel`; each application is logged
so the whole derivation can be written out and replayed independently.
"""

from __future__ import annotations

import json
import threading
from typing import Dict, Iterable, List, Optional

from .expr import BinOp, Expr, Sym, TypeMismatch, substitute, symbols, variables
from .program import Program
from .serial import (
    DecodeError,
    Decoder,
    dumps,
    encode_expr,
    encode_state,
    sha256,
    state_key,
    structure_text,
    symbol_table,
)
from .solver import SolverConfig, SolverUnknown, Unknown, Unsat, check_sat, check_valid, get_config
from .sym import AnySymState, SymError, SymState, negate, sstep, symbols_of
from .text import parse_labels, print_expr, print_labels, print_program
from .values import BOOL

CERT_FORMAT = "birsym-certificate"
CERT_VERSION = 1


class RuleError(Exception):
    """A rule was applied outside its side conditions."""

    def __init__(self, rule: str, condition: str, detail: str = ""):
        super().__init__(f"{rule}: {condition}" + (f" ({detail})" if detail else ""))
        self.rule = rule
        self.condition = condition
        self.detail = detail
        self.step = None


class PcNotInL(RuleError):
    pass


class NotRunning(RuleError):
    pass


class BadState(RuleError):
    pass


class NoSuchTarget(RuleError):
    pass


class NotInfeasible(RuleError):
    pass


class SymbolNotFresh(RuleError):
    pass


class SymbolNotInSource(RuleError):
    pass


class SubstOfFreeSymbol(RuleError):
    pass


class CapturesFreeSymbol(RuleError):
    pass


class SideConditionFailed(RuleError):
    pass


class NotWeaker(RuleError):
    pass


class SourceNotATarget(RuleError):
    pass


class NotSuperset(RuleError):
    pass


class Branches(RuleError):
    pass


class NeitherInfeasible(RuleError):
    pass


class ForeignStructure(RuleError):
    pass


class ReplayMismatch(Exception):
    def __init__(self, step, detail):
        super().__init__(f"certificate step {step}: {detail}")
        self.step = step
        self.detail = detail


_TOKEN = object()


class ProgressStructure:
    """``labels, source |-> targets``; build it with :class:`Kernel` rules."""

    __slots__ = ("labels", "source", "targets", "kernel", "step", "_digest")

    def __init__(self, token, labels, source, targets, kernel, step):
        if token is not _TOKEN:
            raise TypeError("progress structures can only be derived by kernel rules")
        uniq = {state_key(t): t for t in targets}
        object.__setattr__(self, "labels", frozenset(labels))
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "targets", tuple(uniq[k] for k in sorted(uniq)))
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "step", step)
        object.__setattr__(self, "_digest", None)

    def __setattr__(self, k, v):
        raise AttributeError("progress structures are immutable")

    @property
    def free(self) -> frozenset:
        return symbols_of(self.targets) - symbols_of(self.source)

    @property
    def bound(self) -> frozenset:
        return symbols_of(self.source)

    @property
    def text(self) -> str:
        return structure_text(self.labels, self.source, self.targets)

    @property
    def digest(self) -> str:
        if self._digest is None:
            object.__setattr__(self, "_digest", sha256(self.text))
        return self._digest

    def __eq__(self, other):
        if not isinstance(other, ProgressStructure):
            return NotImplemented
        return self.text == other.text

    def __hash__(self):
        return hash(self.digest)

    def format(self) -> str:
        from .sym import format_state

        lines = [f"labels {print_labels(self.labels)}", f"source {format_state(self.source)}"]
        lines += [f"target {format_state(t)}" for t in self.targets]
        return "\n".join(lines)

    def __repr__(self):
        return f"<ProgressStructure {len(self.targets)} targets, labels {print_labels(self.labels)}>"


def program_digest(p: Program) -> str:
    return sha256(print_program(p))


class Kernel:
    """Rule application for one program; keeps the derivation log."""

    def __init__(self, program: Program, cfg: Optional[SolverConfig] = None):
        self.program = program
        self.cfg = get_config(cfg)
        self.typing = program.typing()
        self.records: List[dict] = []
        self._lock = threading.Lock()
        self._queries: Optional[list] = None

    # -- helpers ------------------------------------------------------------------

    def _own(self, rule, ps):
        if not isinstance(ps, ProgressStructure) or ps.kernel is not self:
            raise ForeignStructure(rule, "structure was not derived by this kernel")

    def _check_state(self, rule, s):
        if isinstance(s, SymError):
            return
        if not isinstance(s, SymState):
            raise BadState(rule, "not a symbolic state", repr(s))
        names = {v.name: v.ty for v in s.env}
        if names != self.typing:
            raise BadState(rule, "store must bind exactly the program variables")

    def _check_names(self, rule, *things):
        try:
            symbol_table(symbols_of(list(things)))
        except ValueError as exc:
            raise BadState(rule, "ambiguous symbol names", str(exc)) from None

    def _check_formula(self, rule, e: Expr):
        if e.ty != BOOL:
            raise SideConditionFailed(rule, "condition must have width 1")
        if variables(e):
            raise SideConditionFailed(rule, "condition mentions program variables")

    def _target(self, rule, ps, target):
        if target not in ps.targets:
            raise NoSuchTarget(rule, "state is not a target of the structure")

    def _valid(self, rule, what, conjuncts, goal) -> bool:
        try:
            ok = check_valid(conjuncts, goal, self.cfg)
        except SolverUnknown as exc:
            self._log_query("valid", conjuncts, goal, "unknown")
            raise SideConditionFailed(rule, what, f"solver returned unknown: {exc}") from None
        self._log_query("valid", conjuncts, goal, "valid" if ok else "invalid")
        return ok

    def _log_query(self, kind, conjuncts, goal, result):
        if self._queries is not None:
            q = {"check": kind, "assume": [print_expr(c, BOOL) for c in conjuncts], "result": result}
            if goal is not None:
                q["goal"] = print_expr(goal, BOOL)
            self._queries.append(q)

    def _weaker(self, rule, a: AnySymState, b: AnySymState) -> bool:
        if type(a) is not type(b):
            return False
        if isinstance(a, SymState) and (a.pc != b.pc or a.env != b.env):
            return False
        have = set(a.path)
        for c in b.path:
            if c not in have and not self._valid(rule, "path implication", list(a.path), c):
                return False
        return True

    def _make(self, rule, args, labels, source, targets, sym_things=(), flagged=False) -> ProgressStructure:
        self._check_names(rule, source, *targets)
        with self._lock:
            step = len(self.records)
            ps = ProgressStructure(_TOKEN, labels, source, targets, self, step)
            syms = symbols_of(list(sym_things)) | symbols_of(source) | symbols_of(list(targets))
            for extra in args.pop("_syms", ()):
                syms |= extra
            rec = {
                "step": step,
                "rule": rule,
                "args": args,
                "queries": self._queries or [],
                "symbols": symbol_table(syms),
                "digest": ps.digest,
            }
            if flagged:
                rec["flagged"] = True
            self.records.append(rec)
        return ps

    def _begin(self):
        self._queries = []

    # -- primitive rules -------------------------------------------------------------

    def symbstep(self, state: SymState, labels: Iterable[int]) -> ProgressStructure:
        rule = "symbstep"
        labels = frozenset(labels)
        if not isinstance(state, SymState):
            raise NotRunning(rule, "only running states step")
        self._check_state(rule, state)
        if state.pc not in labels:
            raise PcNotInL(rule, f"pc {state.pc} is not in the label set")
        self._begin()
        targets = sstep(self.program, state, self.cfg)
        args = {"state": encode_state(state), "labels": print_labels(labels)}
        return self._make(rule, args, labels, state, targets)

    def case(self, ps: ProgressStructure, target: AnySymState, cond: Expr) -> ProgressStructure:
        rule = "case"
        self._own(rule, ps)
        self._target(rule, ps, target)
        self._check_formula(rule, cond)
        self._begin()
        rest = [t for t in ps.targets if t != target]
        split = [target.with_path(target.path + (cond,)), target.with_path(target.path + (negate(cond),))]
        args = {"ps": ps.step, "target": encode_state(target), "cond": print_expr(cond, BOOL)}
        return self._make(rule, args, ps.labels, ps.source, rest + split, [cond])

    def infeasible(self, ps: ProgressStructure, target: AnySymState) -> ProgressStructure:
        rule = "infeasible"
        self._own(rule, ps)
        self._target(rule, ps, target)
        self._begin()
        res = check_sat(list(target.path), self.cfg)
        verdict = "unsat" if isinstance(res, Unsat) else ("unknown" if isinstance(res, Unknown) else "sat")
        self._log_query("sat", target.path, None, verdict)
        if verdict != "unsat":
            raise NotInfeasible(rule, f"path condition is {verdict}")
        rest = [t for t in ps.targets if t != target]
        args = {"ps": ps.step, "target": encode_state(target)}
        return self._make(rule, args, ps.labels, ps.source, rest, [target])

    def rename(self, ps: ProgressStructure, old: Sym, new: Sym) -> ProgressStructure:
        rule = "rename"
        self._own(rule, ps)
        if old.ty != new.ty:
            raise SymbolNotFresh(rule, "renaming must preserve the symbol type")
        taken = {s.name for s in symbols_of(ps.source) | symbols_of(ps.targets)}
        if new.name in taken:
            raise SymbolNotFresh(rule, f"{new.name} already occurs in the structure")
        self._begin()
        m = {old: new}
        source = _subst_state(ps.source, m)
        targets = [_subst_state(t, m) for t in ps.targets]
        args = {"ps": ps.step, "from": old.name, "to": new.name, "_syms": [frozenset((old, new))]}
        return self._make(rule, args, ps.labels, source, targets)

    def subst(self, ps: ProgressStructure, sym: Sym, value: Expr) -> ProgressStructure:
        rule = "subst"
        self._own(rule, ps)
        free = ps.free
        if sym in free:
            raise SubstOfFreeSymbol(rule, f"{sym.name} is free in the structure")
        if sym not in ps.bound:
            raise SymbolNotInSource(rule, f"{sym.name} does not occur in the source")
        if value.ty != sym.ty:
            raise SideConditionFailed(rule, f"value has type {value.ty}, symbol has {sym.ty}")
        if variables(value):
            raise SideConditionFailed(rule, "value mentions program variables")
        caught = symbols(value) & free
        if caught:
            raise CapturesFreeSymbol(rule, "value mentions free symbols", ", ".join(sorted(s.name for s in caught)))
        self._begin()
        m = {sym: value}
        source = _subst_state(ps.source, m)
        targets = [_subst_state(t, m) for t in ps.targets]
        args = {"ps": ps.step, "sym": sym.name, "value": encode_expr(value), "_syms": [frozenset((sym,)), symbols(value)]}
        return self._make(rule, args, ps.labels, source, targets)

    def simplify(
        self,
        ps: ProgressStructure,
        target: SymState,
        var,
        new_value: Expr,
        fresh: Sym,
        definition: Expr,
    ) -> ProgressStructure:
        rule = "simplify"
        self._own(rule, ps)
        self._target(rule, ps, target)
        if not isinstance(target, SymState):
            raise NotRunning(rule, "error targets have no store")
        if isinstance(var, str):
            var = target.env.lookup(var)
        if var not in target.env:
            raise SideConditionFailed(rule, f"{var.name} is not in the store")
        if new_value.ty != var.ty or definition.ty != fresh.ty:
            raise SideConditionFailed(rule, "ill-typed replacement")
        if variables(new_value) or variables(definition):
            raise SideConditionFailed(rule, "expressions mention program variables")
        taken = {s.name for s in symbols_of(ps.source) | symbols_of(target)}
        if fresh.name in taken:
            raise SymbolNotFresh(rule, f"{fresh.name} occurs in the source or the target")
        if not symbols(definition) <= symbols_of(target):
            raise SideConditionFailed(rule, "definition mentions symbols outside the target")
        self._begin()
        eq = BinOp("eq", fresh, definition)
        old = target.env[var]
        if not self._valid(rule, "replacement is not equivalent", list(target.path) + [eq], BinOp("eq", old, new_value)):
            raise SideConditionFailed(rule, "replacement is not equivalent under the path condition")
        new_target = SymState(target.pc, target.env.set(var, new_value), target.path + (eq,))
        rest = [t for t in ps.targets if t != target]
        args = {
            "ps": ps.step,
            "target": encode_state(target),
            "var": var.name,
            "value": encode_expr(new_value),
            "fresh": fresh.name,
            "def": encode_expr(definition),
            "_syms": [frozenset((fresh,)), symbols(new_value), symbols(definition)],
        }
        return self._make(rule, args, ps.labels, ps.source, rest + [new_target])

    def consequence(
        self,
        ps: ProgressStructure,
        new_source: AnySymState,
        target: AnySymState,
        new_target: AnySymState,
    ) -> ProgressStructure:
        rule = "consequence"
        self._own(rule, ps)
        self._target(rule, ps, target)
        self._check_state(rule, new_source)
        self._check_state(rule, new_target)
        if not isinstance(new_source, SymState):
            raise NotRunning(rule, "the source must be running")
        caught = symbols_of(new_source) & ps.free
        if caught:
            raise CapturesFreeSymbol(rule, "new source mentions free symbols", ", ".join(sorted(s.name for s in caught)))
        self._begin()
        if not self._weaker(rule, new_source, ps.source):
            raise NotWeaker(rule, "new source does not imply the old source")
        if not self._weaker(rule, target, new_target):
            raise NotWeaker(rule, "target does not imply the new target")
        rest = [t for t in ps.targets if t != target]
        args = {
            "ps": ps.step,
            "source": encode_state(new_source),
            "target": encode_state(target),
            "new_target": encode_state(new_target),
        }
        return self._make(rule, args, ps.labels, new_source, rest + [new_target], [target])

    def transfer(self, ps: ProgressStructure, target: AnySymState, cond: Expr) -> ProgressStructure:
        rule = "transfer"
        self._own(rule, ps)
        self._target(rule, ps, target)
        self._check_formula(rule, cond)
        src_syms = frozenset()
        for c in ps.source.path:
            src_syms |= symbols(c)
        if not symbols(cond) <= src_syms:
            raise SideConditionFailed(rule, "condition mentions symbols outside the source path")
        self._begin()
        if not self._valid(rule, "source path does not imply the condition", list(ps.source.path), cond):
            raise SideConditionFailed(rule, "source path does not imply the condition")
        rest = [t for t in ps.targets if t != target]
        args = {"ps": ps.step, "target": encode_state(target), "cond": print_expr(cond, BOOL)}
        return self._make(rule, args, ps.labels, ps.source, rest + [target.with_path(target.path + (cond,))], [cond])

    def sequence(self, a: ProgressStructure, b: ProgressStructure) -> ProgressStructure:
        rule = "sequence"
        self._own(rule, a)
        self._own(rule, b)
        if b.source not in a.targets:
            raise SourceNotATarget(rule, "second source is not a target of the first structure")
        caught = symbols_of(a.source) & b.free
        if caught:
            raise CapturesFreeSymbol(rule, "first source mentions free symbols of the second", ", ".join(sorted(s.name for s in caught)))
        self._begin()
        targets = [t for t in a.targets if t != b.source] + list(b.targets)
        args = {"a": a.step, "b": b.step}
        return self._make(rule, args, a.labels | b.labels, a.source, targets)

    def widen(self, ps: ProgressStructure, labels: Iterable[int]) -> ProgressStructure:
        rule = "widen"
        self._own(rule, ps)
        labels = frozenset(labels)
        if not labels >= ps.labels:
            raise NotSuperset(rule, "new label set must contain the old one")
        self._begin()
        args = {"ps": ps.step, "labels": print_labels(labels)}
        return self._make(rule, args, labels, ps.source, ps.targets, flagged=True)

    # -- derived rules ----------------------------------------------------------------

    def symbstep_n(self, state: SymState, n: int, labels: Optional[Iterable[int]] = None) -> ProgressStructure:
        """Step through ``n`` statements that each have exactly one successor."""
        if n < 1:
            raise Branches("symbstep_n", "n must be positive")
        cur = state
        ps = None
        for i in range(n):
            if not isinstance(cur, SymState):
                raise Branches("symbstep_n", f"step {i} starts from an error state")
            succ = sstep(self.program, cur, self.cfg)
            if len(succ) != 1:
                raise Branches("symbstep_n", f"label {cur.pc} has {len(succ)} successors")
            step = self.symbstep(cur, labels if labels is not None else {cur.pc})
            ps = step if ps is None else self.sequence(ps, step)
            cur = succ[0]
        return ps

    def inf_branch(self, state: SymState, labels: Optional[Iterable[int]] = None, keep_positive: Optional[bool] = None) -> ProgressStructure:
        """One step that branches, dropping the infeasible branch.

        The surviving target gets the source path condition back.
        """
        rule = "inf_branch"
        if not isinstance(state, SymState):
            raise NotRunning(rule, "only running states step")
        ps = self.symbstep(state, labels if labels is not None else {state.pc})
        succ = sstep(self.program, state, self.cfg)
        if len(succ) != 2:
            raise NeitherInfeasible(rule, f"label {state.pc} has {len(succ)} successors, not 2")
        order = [0, 1] if keep_positive is None else ([0] if keep_positive else [1])
        for keep in order:
            drop = succ[1 - keep]
            res = check_sat(list(drop.path), self.cfg)
            if isinstance(res, Unsat):
                ps = self.infeasible(ps, drop)
                survivor = succ[keep]
                return self.consequence(ps, state, survivor, survivor.with_path(state.path))
        raise NeitherInfeasible(rule, "no branch is provably infeasible")

    # -- certificates -------------------------------------------------------------------

    def emit_certificate(self, ps: ProgressStructure) -> str:
        """The derivation of ``ps`` as canonical JSON lines."""
        self._own("certificate", ps)
        needed = set()
        stack = [ps.step]
        while stack:
            i = stack.pop()
            if i in needed:
                continue
            needed.add(i)
            args = self.records[i]["args"]
            stack.extend(args[k] for k in ("ps", "a", "b") if k in args)
        renum = {old: new for new, old in enumerate(sorted(needed))}
        header = {
            "format": CERT_FORMAT,
            "version": CERT_VERSION,
            "program": program_digest(self.program),
            "name": self.program.name,
            "steps": len(needed),
        }
        lines = [dumps(header)]
        for old in sorted(needed):
            rec = json.loads(dumps(self.records[old]))
            rec["step"] = renum[old]
            for k in ("ps", "a", "b"):
                if k in rec["args"]:
                    rec["args"][k] = renum[rec["args"][k]]
            lines.append(dumps(rec))
        return "\n".join(lines) + "\n"


def _subst_state(s: AnySymState, m) -> AnySymState:
    path = [substitute(c, m) for c in s.path]
    if isinstance(s, SymError):
        return SymError(path)
    return SymState(s.pc, {v: substitute(e, m) for v, e in s.env.items()}, path)


def replay_certificate(text: str, program: Program, cfg: Optional[SolverConfig] = None) -> ProgressStructure:
    """Re-run every rule application in ``text`` and check it reproduces the log."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ReplayMismatch(0, "empty certificate")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ReplayMismatch("header", f"unparsable header: {exc}") from None
    if not isinstance(header, dict) or dumps(header) != lines[0]:
        raise ReplayMismatch("header", "header is not in canonical form")
    if header.get("format") != CERT_FORMAT or header.get("version") != CERT_VERSION:
        raise ReplayMismatch("header", "unknown certificate format")
    if header.get("program") != program_digest(program):
        raise ReplayMismatch("header", "certificate was produced for a different program")
    if header.get("steps") != len(lines) - 1:
        raise ReplayMismatch("header", "step count does not match")
    kernel = Kernel(program, cfg)
    built: Dict[int, ProgressStructure] = {}
    ps = None
    for i, line in enumerate(lines[1:]):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayMismatch(i, f"unparsable record: {exc}") from None
        if not isinstance(rec, dict) or dumps(rec) != line:
            raise ReplayMismatch(i, "record is not in canonical form")
        if rec.get("step") != i:
            raise ReplayMismatch(i, "records out of order")
        try:
            ps = _apply(kernel, rec, built, i)
        except RuleError as exc:
            exc.step = i
            raise
        except (DecodeError, KeyError, TypeError, ValueError, TypeMismatch) as exc:
            raise ReplayMismatch(i, f"cannot decode arguments: {exc}") from None
        got = kernel.records[-1]
        for key in ("digest", "queries", "symbols"):
            if got[key] != rec.get(key):
                raise ReplayMismatch(i, f"{key} differs from the recorded one")
        if dumps(got) != line:
            raise ReplayMismatch(i, "record differs from the replayed one")
        built[i] = ps
    return ps


def _apply(kernel: Kernel, rec: dict, built: Dict[int, ProgressStructure], i: int) -> ProgressStructure:
    rule = rec["rule"]
    args = rec["args"]
    dec = Decoder(kernel.typing, rec["symbols"])

    def ref(key):
        j = args[key]
        if not isinstance(j, int) or j not in built:
            raise ReplayMismatch(i, f"bad reference {j!r}")
        return built[j]

    if rule == "symbstep":
        return kernel.symbstep(dec.state(args["state"]), parse_labels(args["labels"]))
    if rule == "case":
        return kernel.case(ref("ps"), dec.state(args["target"]), dec.expr(args["cond"], BOOL))
    if rule == "infeasible":
        return kernel.infeasible(ref("ps"), dec.state(args["target"]))
    if rule == "rename":
        return kernel.rename(ref("ps"), dec.sym(args["from"]), dec.sym(args["to"]))
    if rule == "subst":
        sym = dec.sym(args["sym"])
        return kernel.subst(ref("ps"), sym, dec.expr(args["value"], sym.ty))
    if rule == "simplify":
        target = dec.state(args["target"])
        if not isinstance(target, SymState):
            raise DecodeError("simplify on an error state")
        var = target.env.lookup(args["var"])
        fresh = dec.sym(args["fresh"])
        return kernel.simplify(
            ref("ps"), target, var, dec.expr(args["value"], var.ty), fresh, dec.expr(args["def"], fresh.ty)
        )
    if rule == "consequence":
        return kernel.consequence(
            ref("ps"), dec.state(args["source"]), dec.state(args["target"]), dec.state(args["new_target"])
        )
    if rule == "transfer":
        return kernel.transfer(ref("ps"), dec.state(args["target"]), dec.expr(args["cond"], BOOL))
    if rule == "sequence":
        return kernel.sequence(ref("a"), ref("b"))
    if rule == "widen":
        return kernel.widen(ref("ps"), parse_labels(args["labels"]))
    raise ReplayMismatch(i, f"unknown rule {rule!r}")
