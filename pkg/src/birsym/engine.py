"""Automation on top of the kernel: exploration, memory simplification,
forgetting, merging and instantiation of summaries.

Nothing here is trusted. Every change to a structure goes through a
:class:`~birsym.kernel.Kernel` rule, so a bug in this module can make an
analysis fail but cannot make it unsound.
"""

from __future__ import annotations

import itertools
import threading
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

from .expr import TRUE_E, BinOp, Const, Expr, Load, Store, Sym, Var, rebuild, size, substitute
from .kernel import Kernel, ProgressStructure, SideConditionFailed
from .program import Assert, Assign, Jmp, Program
from .serial import state_key
from .solver import STATS, SolverUnknown, Unsat, check_sat, check_valid
from .solver.normalize import addr_relation, lin, linear_normal_form
from .sym import AnySymState, SymState, symbols_of
from .values import BOOL, Word, mask


class EngineError(Exception):
    pass


class BudgetExhausted(EngineError):
    def __init__(self, reason: str, report: "AnalysisReport"):
        super().__init__(reason)
        self.reason = reason
        self.report = report


class CannotDecideAliasing(EngineError):
    pass


class CannotAlign(EngineError):
    pass


class UnboundedCounter(EngineError):
    pass


MergePolicy = Union[str, FrozenSet[int]]


@dataclass
class ExploreOptions:
    max_paths: int = 256
    max_steps: int = 100_000
    merge_policy: MergePolicy = "none"  # none | join | aggressive | explicit label set
    forget_vars: Tuple[str, ...] = ()
    simplify_memory: bool = True
    unroll_bound: Optional[int] = None
    jobs: int = 1
    # variable name -> entry symbol; merged as intervals instead of by generalization
    counters: Mapping[str, Sym] = field(default_factory=dict)
    # states are printed as trees in certificates, so cap the tree size of each term
    max_term_size: int = 200_000

    def __post_init__(self):
        if self.max_paths < 1 or self.max_steps < 1 or self.jobs < 1 or self.max_term_size < 1:
            raise ValueError("budgets must be positive")
        if self.unroll_bound is not None and self.unroll_bound < 0:
            raise ValueError("unroll bound must be non-negative")
        if not isinstance(self.merge_policy, str):
            self.merge_policy = frozenset(self.merge_policy)
        elif self.merge_policy not in ("none", "join", "aggressive"):
            raise ValueError(f"unknown merge policy {self.merge_policy!r}")
        self.forget_vars = tuple(self.forget_vars)


@dataclass
class AnalysisReport:
    structure: Optional[ProgressStructure]
    kernel: Kernel
    stats: Dict[str, float] = field(default_factory=dict)

    @property
    def certificate(self) -> str:
        return self.kernel.emit_certificate(self.structure)


@dataclass
class _Meta:
    clock: int
    visits: Counter


def _largest_term(t: AnySymState) -> int:
    terms = list(t.path) + (list(t.env.values()) if isinstance(t, SymState) else [])
    return max((size(e) for e in terms), default=0)


def join_labels(p: Program) -> FrozenSet[int]:
    """Labels with at least two incoming edges over constant targets."""
    incoming: Counter = Counter()
    for label, stmt in p.stmts.items():
        succ = set()
        if isinstance(stmt, (Assign, Assert)):
            succ.add(label + 1)
        elif isinstance(stmt, Jmp):
            if isinstance(stmt.target, Const):
                succ.add(stmt.target.value.value)
        else:
            for t in (stmt.target_true, stmt.target_false):
                if isinstance(t, Const):
                    succ.add(t.value.value)
        for s in succ:
            incoming[s] += 1
    if p.entry in p.stmts:
        incoming[p.entry] += 1
    return frozenset(l for l, n in incoming.items() if n >= 2)


def _solver_queries() -> int:
    return sum(v for k, v in STATS.items() if k.endswith("queries"))


class Engine:
    def __init__(self, kernel: Kernel, opts: Optional[ExploreOptions] = None):
        self.kernel = kernel
        self.program = kernel.program
        self.cfg = kernel.cfg
        self.opts = opts or ExploreOptions()
        self._counter = itertools.count(1)
        self._lock = threading.Lock()
        self.stats: Counter = Counter()

    # -- small helpers -----------------------------------------------------------------

    def fresh(self, ty, *avoid) -> Sym:
        taken = {s.name for s in symbols_of(list(avoid))}
        with self._lock:
            while True:
                name = f"#{next(self._counter)}"
                if name not in taken:
                    return Sym(name, ty)

    def _avoid(self, ps: ProgressStructure):
        return [ps.source, *ps.targets]

    def plain_simplify(self, ps, target: SymState, var, new_value: Expr):
        """Replace a stored value by an equivalent one without a lasting fresh symbol."""
        var = target.env.lookup(var) if isinstance(var, str) else var
        dummy = self.fresh(BOOL, *self._avoid(ps))
        ps = self.kernel.simplify(ps, target, var, new_value, dummy, TRUE_E)
        tmp = _find(ps, target.pc, target.env.set(var, new_value), target.path + (BinOp("eq", dummy, TRUE_E),))
        return self.drop_conjuncts(ps, tmp, target.path)

    def drop_conjuncts(self, ps, target: AnySymState, keep):
        """Weaken ``target`` to the path ``keep`` (a sub-tuple of its path)."""
        keep = tuple(keep)
        if keep == target.path:
            return ps, target
        new = target.with_path(keep)
        ps = self.kernel.consequence(ps, ps.source, target, new)
        return ps, new

    def tidy_path(self, ps, target: AnySymState):
        """Drop constant-true and repeated conjuncts."""
        keep, seen = [], set()
        for c in target.path:
            if c == TRUE_E or c in seen:
                continue
            seen.add(c)
            keep.append(c)
        return self.drop_conjuncts(ps, target, keep)

    # -- memory and arithmetic simplification ------------------------------------------

    def _relation(self, path, a: Expr, b: Expr) -> Optional[str]:
        rel = addr_relation(a, b)
        if rel is not None:
            return rel
        try:
            if check_valid(list(path), BinOp("eq", a, b), self.cfg):
                return "eq"
            if check_valid(list(path), BinOp("neq", a, b), self.cfg):
                return "ne"
        except SolverUnknown:
            pass
        return None

    def simplified(self, e: Expr, path) -> Tuple[Expr, int]:
        """Load/store simplification plus linear tidying; returns (value, undecided)."""
        undecided = 0
        memo: Dict[Expr, Expr] = {}

        def go(n: Expr) -> Expr:
            nonlocal undecided
            if n in memo:
                return memo[n]
            kids = [go(k) for k in n.children()]
            out = rebuild(n, kids) if kids else n
            if isinstance(out, Load):
                m = out.mem
                while isinstance(m, Store):
                    rel = self._relation(path, m.addr, out.addr)
                    if rel == "eq":
                        out = m.val
                        break
                    if rel != "ne":
                        undecided += 1
                        out = Load(m, out.addr)
                        break
                    m = m.mem
                else:
                    out = Load(m, out.addr)
            elif isinstance(out, Store):
                out = Store(self._drop_superseded(out.mem, out.addr, path), out.addr, out.val)
            elif isinstance(out, BinOp) and out.op in ("add", "sub") and out.width > 1:
                cand = linear_normal_form(out)
                if size(cand) < size(out):
                    out = cand
            memo[n] = out
            return out

        return go(e), undecided

    def _drop_superseded(self, m: Expr, addr: Expr, path) -> Expr:
        """Remove inner stores to ``addr``; an outer store at ``addr`` hides them."""
        chain = []
        while isinstance(m, Store):
            chain.append(m)
            m = m.mem
        out = m
        for s in reversed(chain):
            if self._relation(path, s.addr, addr) == "eq":
                continue
            out = Store(out, s.addr, s.val)
        return out

    def simplify_memory(self, ps, target: SymState, var):
        var = target.env.lookup(var) if isinstance(var, str) else var
        old = target.env[var]
        new, undecided = self.simplified(old, target.path)
        if new == old:
            if undecided:
                raise CannotDecideAliasing(f"cannot relate the addresses in {var.name}")
            return ps, target
        try:
            out = self.plain_simplify(ps, target, var, new)
        except SideConditionFailed as exc:
            # the kernel could not confirm the rewrite (e.g. solver gave up); keep the old value
            raise CannotDecideAliasing(str(exc)) from None
        self.stats["memory_simplifications"] += 1
        return out

    def forget_value(self, ps, target: SymState, var):
        """Replace the value of ``var`` by a fresh symbol and forget its definition."""
        var = target.env.lookup(var) if isinstance(var, str) else var
        old = target.env[var]
        alpha = self.fresh(var.ty, *self._avoid(ps))
        ps = self.kernel.simplify(ps, target, var, alpha, alpha, old)
        cur = SymState(target.pc, target.env.set(var, alpha), target.path + (BinOp("eq", alpha, old),))
        self.stats["forgets"] += 1
        return self.drop_conjuncts(ps, cur, target.path)

    # -- merging ---------------------------------------------------------------------

    def merge_targets(self, ps, t1: SymState, t2: SymState):
        """Generalize two targets at the same label until they coincide."""
        if not (isinstance(t1, SymState) and isinstance(t2, SymState)):
            raise CannotAlign("only running targets can be merged")
        if t1.pc != t2.pc:
            raise ValueError("merged targets must share a label")
        if t1 == t2:
            return ps, t1
        avoid = self._avoid(ps)
        table: Dict[Tuple[Expr, Expr], Sym] = {}
        gen: Dict[Var, Expr] = {}
        for var, e1 in t1.env.items():
            e2 = t2.env[var]
            if var.name in self.opts.counters and e1 != e2:
                continue
            gen[var] = self._generalize(e1, e2, table, avoid)
        bounds = []
        for var, e1 in t1.env.items():
            if var.name in self.opts.counters and e1 != t2.env[var]:
                base = self.opts.counters[var.name]
                lo1, hi1 = self.counter_interval(t1, var, base)
                lo2, hi2 = self.counter_interval(t2, var, base)
                lo, hi = min(lo1, lo2), max(hi1, hi2)
                alpha = self.fresh(var.ty, *avoid, *table.values())
                table[(e1, t2.env[var])] = alpha
                gen[var] = alpha
                d = BinOp("sub", alpha, base)
                w = var.ty.width
                bounds += [BinOp("ule", Const(Word(w, lo)), d), BinOp("ule", d, Const(Word(w, hi)))]
                self.stats["counter_merges"] += 1
        common = tuple(c for c in t1.path if c in set(t2.path))
        final_path = common + tuple(bounds)
        out = None
        for idx, t in enumerate((t1, t2)):
            ps, cur = self._introduce(ps, t, gen, table, idx)
            ps, cur = self.drop_conjuncts_to(ps, cur, final_path)
            out = cur
        self.stats["merges"] += 1
        return ps, out

    def drop_conjuncts_to(self, ps, target, new_path):
        if tuple(new_path) == target.path:
            return ps, target
        new = target.with_path(new_path)
        ps = self.kernel.consequence(ps, ps.source, target, new)
        return ps, new

    def _generalize(self, a: Expr, b: Expr, table, avoid) -> Expr:
        if a == b:
            return a
        same = (
            type(a) is type(b)
            and a.ty == b.ty
            and not isinstance(a, (Const, Sym, Var))
            and getattr(a, "op", None) == getattr(b, "op", None)
            and all(x.ty == y.ty for x, y in zip(a.children(), b.children()))
        )
        if same:
            return rebuild(a, [self._generalize(x, y, table, avoid) for x, y in zip(a.children(), b.children())])
        key = (a, b)
        if key not in table:
            table[key] = self.fresh(a.ty, *avoid, *table.values())
        return table[key]

    def _introduce(self, ps, t: SymState, gen: Dict[Var, Expr], table, idx: int):
        cur = t
        order = list(table.items())
        for j, ((pair, alpha)) in enumerate(order):
            later = {al: p[idx] for p, al in order[j + 1 :]}
            first = True
            for var, g in gen.items():
                want = substitute(g, later, fold=False)
                if want == cur.env[var]:
                    continue
                if first:
                    ps = self.kernel.simplify(ps, cur, var, want, alpha, pair[idx])
                    cur = SymState(cur.pc, cur.env.set(var, want), cur.path + (BinOp("eq", alpha, pair[idx]),))
                    first = False
                else:
                    ps, cur = self.plain_simplify(ps, cur, var, want)
        return ps, cur

    def counter_interval(self, t: SymState, var: Var, base: Sym) -> Tuple[int, int]:
        return counter_bounds(t, var, base)

    # -- instantiation -------------------------------------------------------------------

    def instantiate(self, ps, bindings: Mapping[Sym, Expr], avoid: Iterable[Sym] = ()):
        """Specialize a general structure: substitute bound symbols, then rename
        free symbols away from ``avoid``."""
        for sym, value in bindings.items():
            ps = self.kernel.subst(ps, sym, value)
        avoid = frozenset(avoid)
        avoid_names = {s.name for s in avoid}
        for sym in sorted(ps.free, key=lambda s: s.name):
            if sym.name in avoid_names:
                new = self.fresh(sym.ty, *self._avoid(ps), *avoid)
                ps = self.kernel.rename(ps, sym, new)
        return ps

    # -- exploration ------------------------------------------------------------------

    def explore(self, s0: SymState, labels: Iterable[int]) -> AnalysisReport:
        labels = frozenset(labels)
        opts = self.opts
        t_start = time.monotonic()
        q_start = _solver_queries()
        if opts.merge_policy == "join":
            merge_at = join_labels(self.program)
        elif opts.merge_policy == "none":
            merge_at = frozenset()
        elif opts.merge_policy == "aggressive":
            merge_at = None
        else:
            merge_at = opts.merge_policy
        meta: Dict[str, _Meta] = {}
        ps = None
        steps = 0

        def report():
            self.stats["steps"] = steps
            self.stats["solver_queries"] = _solver_queries() - q_start
            self.stats["wall_time"] = round(time.monotonic() - t_start, 3)
            return AnalysisReport(ps, self.kernel, dict(self.stats))

        def is_active(t):
            return isinstance(t, SymState) and t.pc in labels

        def can_merge(pc):
            return merge_at is None or pc in merge_at

        frontier = [s0]
        meta[state_key(s0)] = _Meta(0, Counter())
        while True:
            if ps is not None:
                active = [t for t in ps.targets if is_active(t)]
                if not active:
                    break
                if len(ps.targets) > opts.max_paths:
                    raise BudgetExhausted(f"more than {opts.max_paths} paths", report())
                groups: Dict[int, List[SymState]] = {}
                for t in active:
                    if can_merge(t.pc):
                        groups.setdefault(t.pc, []).append(t)
                pair = next((g[:2] for g in groups.values() if len(g) >= 2), None)
                if pair is not None:
                    m1, m2 = (meta[state_key(t)] for t in pair)
                    ps, merged = self.merge_targets(ps, *pair)
                    meta[state_key(merged)] = _Meta(max(m1.clock, m2.clock), m1.visits | m2.visits)
                    continue
                waiting = [t for t in active if can_merge(t.pc)]
                moving = [t for t in active if not can_merge(t.pc)] or waiting
                moving.sort(key=lambda t: (meta[state_key(t)].clock, state_key(t)))
                frontier = moving[: opts.jobs] if opts.jobs > 1 else moving[:1]
            for t in frontier:
                mt = meta[state_key(t)]
                if opts.unroll_bound is not None and mt.visits[t.pc] > opts.unroll_bound:
                    raise BudgetExhausted(f"label {t.pc} visited more than {opts.unroll_bound + 1} times", report())
            if steps + len(frontier) > opts.max_steps:
                raise BudgetExhausted(f"more than {opts.max_steps} steps", report())
            if len(frontier) > 1:
                with ThreadPoolExecutor(max_workers=opts.jobs) as pool:
                    stepped = list(pool.map(lambda t: self.kernel.symbstep(t, labels), frontier))
            else:
                stepped = [self.kernel.symbstep(frontier[0], labels)]
            for t, step in zip(frontier, stepped):
                steps += 1
                mt = meta[state_key(t)]
                visits = mt.visits + Counter({t.pc: 1})
                ps = step if ps is None else self.kernel.sequence(ps, step)
                for nt in list(step.targets):
                    ps, nt = self._post(ps, t, nt, len(step.targets))
                    if nt is not None:
                        big = _largest_term(nt)
                        if big > opts.max_term_size:
                            raise BudgetExhausted(f"a term at label {nt.pc} has {big} nodes", report())
                        meta[state_key(nt)] = _Meta(mt.clock + 1, visits)
        return report()

    def _post(self, ps, parent: SymState, t: AnySymState, siblings: int):
        """Prune, tidy and simplify a freshly produced target."""
        res = check_sat(list(t.path), self.cfg)
        if isinstance(res, Unsat):
            ps = self.kernel.infeasible(ps, t)
            self.stats["pruned"] += 1
            return ps, None
        ps, t = self.tidy_path(ps, t)
        if siblings > 1 and len(t.path) > len(parent.path) and t.path[: len(parent.path)] == parent.path:
            extra = t.path[len(parent.path) :]
            try:
                implied = all(check_valid(list(parent.path), c, self.cfg) for c in extra)
            except SolverUnknown:
                implied = False
            if implied:
                ps, t = self.drop_conjuncts(ps, t, parent.path)
        if not isinstance(t, SymState):
            return ps, t
        changed = [v for v, e in t.env.items() if parent.env[v] != e]
        if self.opts.simplify_memory:
            for var in changed:
                try:
                    ps, t = self.simplify_memory(ps, t, var)
                except CannotDecideAliasing:
                    self.stats["undecided_aliasing"] += 1
        for name in self.opts.forget_vars:
            var = t.env.lookup(name)
            if var in changed and not isinstance(t.env[var], Sym):
                ps, t = self.forget_value(ps, t, var)
        return ps, t


def counter_bounds(t: SymState, var: Var, base: Sym) -> Tuple[int, int]:
    """Bounds of ``var - base`` read off the store and the path of ``t``.

    The value must be ``base + k`` or ``alpha + k`` where the path bounds
    ``alpha - base`` by constants (the shape produced by counter merges).
    """
    coeffs, k = lin(t.env[var])
    w = var.ty.width
    if len(coeffs) == 1:
        (x, coef), = coeffs.items()
        if coef == 1 and x == base:
            return k, k
        if coef == 1 and isinstance(x, Sym):
            d = BinOp("sub", x, base)
            lo = hi = None
            for c in t.path:
                if isinstance(c, BinOp) and c.op == "ule":
                    if c.rhs == d and isinstance(c.lhs, Const):
                        lo = c.lhs.value.value
                    elif c.lhs == d and isinstance(c.rhs, Const):
                        hi = c.rhs.value.value
            if lo is not None and hi is not None and hi + k <= mask(w):
                return lo + k, hi + k
    raise UnboundedCounter(f"{var.name} has no recognizable bound relative to {base.name}")


def _find(ps: ProgressStructure, pc, env, path) -> SymState:
    want = SymState(pc, env, path)
    for t in ps.targets:
        if t == want:
            return t
    raise EngineError("expected target not present")


def explore(
    program: Program,
    s0: SymState,
    labels: Iterable[int],
    opts: Optional[ExploreOptions] = None,
    cfg=None,
    kernel: Optional[Kernel] = None,
) -> AnalysisReport:
    kernel = kernel or Kernel(program, cfg)
    return Engine(kernel, opts).explore(s0, labels)
