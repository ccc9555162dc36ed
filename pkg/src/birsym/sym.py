"""Symbolic states, interpretations and the single-step symbolic semantics."""

from __future__ import annotations

import itertools
import random
import threading
from collections.abc import Mapping
from typing import Dict, Iterable, List, Optional, Tuple, Union

from .expr import (
    BinOp,
    Const,
    Expr,
    Sym,
    UnboundSymbol,
    UnboundVariable,
    UnOp,
    Var,
    evaluate,
    substitute,
    symbols,
    variables,
)
from .program import Assert, Assign, ErrorState, Jmp, Program, State
from .values import BOOL, MemTy, Ty, Value, Word, WordTy

Interpretation = Dict[Sym, Value]


class UnresolvedJump(RuntimeError):
    """Too many concrete jump targets to enumerate."""

    def __init__(self, cap):
        super().__init__(f"more than {cap} jump targets")
        self.cap = cap


class SymStore(Mapping):
    """An immutable map from program variables to symbolic expressions."""

    __slots__ = ("_items", "_map", "_hash")

    def __init__(self, items: Union[Mapping, Iterable] = ()):
        if isinstance(items, Mapping):
            items = items.items()
        m = dict(items)
        for v, e in m.items():
            if not isinstance(v, Var):
                raise TypeError(f"store key {v!r} is not a variable")
            if e.ty != v.ty:
                raise TypeError(f"{v.name}: {v.ty} bound to an expression of type {e.ty}")
        self._map = m
        self._items = tuple(sorted(m.items(), key=lambda kv: kv[0].name))
        self._hash = hash(self._items)

    def __getitem__(self, v):
        return self._map[v]

    def __iter__(self):
        return (k for k, _ in self._items)

    def __len__(self):
        return len(self._items)

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if isinstance(other, SymStore):
            return self._hash == other._hash and self._items == other._items
        return NotImplemented

    def items(self):
        return self._items

    def set(self, var: Var, e: Expr) -> "SymStore":
        m = dict(self._map)
        m[var] = e
        return SymStore(m)

    def lookup(self, name: str) -> Var:
        for v, _ in self._items:
            if v.name == name:
                return v
        raise KeyError(name)

    def __repr__(self):
        from .text import print_expr

        return "{" + ", ".join(f"{v.name}: {print_expr(e, v.ty)}" for v, e in self._items) + "}"


def _path(conjuncts) -> Tuple[Expr, ...]:
    out = tuple(conjuncts)
    for c in out:
        if c.ty != BOOL:
            raise TypeError(f"path conjunct of type {c.ty}")
        if variables(c):
            raise TypeError("path conjunct mentions program variables")
    return out


class SymState:
    """A running symbolic state (pc, store, path condition)."""

    __slots__ = ("pc", "env", "path", "_hash")

    def __init__(self, pc: int, env: SymStore, path=()):
        object.__setattr__(self, "pc", pc)
        object.__setattr__(self, "env", env if isinstance(env, SymStore) else SymStore(env))
        object.__setattr__(self, "path", _path(path))
        object.__setattr__(self, "_hash", hash(("run", pc, self.env, self.path)))

    def __setattr__(self, k, v):
        raise AttributeError("symbolic states are immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return (
            isinstance(other, SymState)
            and self._hash == other._hash
            and self.pc == other.pc
            and self.path == other.path
            and self.env == other.env
        )

    def with_env(self, env) -> "SymState":
        return SymState(self.pc, env, self.path)

    def with_path(self, path) -> "SymState":
        return SymState(self.pc, self.env, path)

    def __repr__(self):
        return f"<SymState {format_state(self)}>"


class SymError:
    """A failed symbolic state; only its path condition matters."""

    __slots__ = ("path", "_hash")

    pc = None

    def __init__(self, path=()):
        object.__setattr__(self, "path", _path(path))
        object.__setattr__(self, "_hash", hash(("err", self.path)))

    def __setattr__(self, k, v):
        raise AttributeError("symbolic states are immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return isinstance(other, SymError) and self.path == other.path

    def with_path(self, path) -> "SymError":
        return SymError(path)

    def __repr__(self):
        return f"<SymError {format_state(self)}>"


AnySymState = Union[SymState, SymError]


def format_state(s: AnySymState) -> str:
    from .text import print_expr

    path = " ; ".join(print_expr(c, BOOL) for c in s.path) or "true"
    if isinstance(s, SymError):
        return f"(error, [{path}])"
    return f"({s.pc}, {s.env!r}, [{path}])"


# -- construction --------------------------------------------------------------


def initial_store(typing: Mapping[str, Ty]) -> SymStore:
    """The store mapping every variable V to the symbol named V."""
    return SymStore({Var(n, t): Sym(n, t) for n, t in typing.items()})


def initial_state(p: Program, pc: Optional[int] = None, path=()) -> SymState:
    return SymState(p.entry if pc is None else pc, initial_store(p.typing()), path)


def sym_eval(e: Expr, env: Mapping[Var, Expr]) -> Expr:
    """Substitute the store into ``e`` and fold all-constant subtrees."""
    for v in variables(e):
        if v not in env:
            raise UnboundVariable(v.name)
    return substitute(e, env, fold=True)


def negate(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(Word(1, 1 - e.value.value))
    return UnOp("not", e)


def symbols_of(x) -> frozenset:
    """Symbols of an expression, a state, or an iterable of those."""
    if isinstance(x, Expr):
        return symbols(x)
    if isinstance(x, SymError):
        return _syms(x.path)
    if isinstance(x, SymState):
        return _syms(x.path) | _syms(e for _, e in x.env.items())
    out = frozenset()
    for item in x:
        out |= symbols_of(item)
    return out


def _syms(exprs) -> frozenset:
    out = frozenset()
    for e in exprs:
        out |= symbols(e)
    return out


class _Fresh:
    def __init__(self):
        self._lock = threading.Lock()
        self._next = itertools.count(1)

    def __call__(self, ty: Ty, avoid=()) -> Sym:
        taken = {s.name for s in avoid}
        with self._lock:
            while True:
                name = f"#{next(self._next)}"
                if name not in taken:
                    return Sym(name, ty)


fresh_symbol = _Fresh()
"""Return a symbol never issued before; ``#``-names cannot come from programs."""


# -- interpretations ------------------------------------------------------------


def interp_expr(h: Mapping[Sym, Value], e: Expr) -> Value:
    def leaf(n):
        if isinstance(n, Sym):
            try:
                return h[n]
            except KeyError:
                raise UnboundSymbol(n.name) from None
        raise UnboundVariable(n.name)

    return evaluate(e, leaf)


def interp_store(h: Mapping[Sym, Value], env: SymStore) -> Dict[Var, Value]:
    return {v: interp_expr(h, e) for v, e in env.items()}


def interp_path(h: Mapping[Sym, Value], path) -> bool:
    return all(interp_expr(h, c).value for c in path)


def matches(s: AnySymState, h: Mapping[Sym, Value], c) -> bool:
    """Strict matching; ``h`` must interpret every symbol of ``s``."""
    if not symbols_of(s) <= set(h):
        return False
    if isinstance(s, SymError):
        return isinstance(c, ErrorState) and interp_path(h, s.path)
    if not isinstance(c, State) or c.pc != s.pc:
        return False
    if set(c.env) != set(s.env):
        return False
    if interp_store(h, s.env) != dict(c.env):
        return False
    return interp_path(h, s.path)


def loose_matches(s: AnySymState, h: Mapping[Sym, Value], c, cfg=None) -> bool:
    """Whether some extension of ``h`` to the remaining symbols of ``s`` matches ``c``."""
    from .solver import Sat, SolverUnknown, Unknown, check_sat

    if isinstance(s, SymError):
        if not isinstance(c, ErrorState):
            return False
        goals = list(s.path)
    else:
        if not isinstance(c, State) or c.pc != s.pc or set(c.env) != set(s.env):
            return False
        goals = [BinOp("eq", e, Const(c.env[v])) for v, e in s.env.items()] + list(s.path)
    rest = symbols_of(s) - set(h)
    known = {k: Const(v) for k, v in h.items()}
    goals = [substitute(g, known) for g in goals]
    if not rest:
        return all(interp_expr({}, g).value for g in goals)
    res = check_sat(goals, cfg)
    if isinstance(res, Unknown):
        raise SolverUnknown(res.reason)
    return isinstance(res, Sat)


def sample_minimal_interpretation(s: AnySymState, seed=0, cfg=None) -> Optional[Interpretation]:
    """A random model of the path over exactly the state's symbols, or None."""
    from .solver import sample_model

    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    return sample_model(list(s.path), symbols_of(s), rng, cfg)


def concretize(s: SymState, h: Mapping[Sym, Value]) -> State:
    """The concrete state that ``s`` describes under a total interpretation."""
    return State(s.pc, interp_store(h, s.env))


# -- stepping ---------------------------------------------------------------------


def resolve_targets(v: Expr, path, cap: int = 64, cfg=None) -> List[int]:
    """All concrete labels ``v`` can take under ``path``, sorted.

    A constant target resolves to itself without consulting the path.
    """
    from .solver import enumerate_models

    if isinstance(v, Const):
        return [v.value.value]
    vals = enumerate_models(list(path), v, cap, cfg)
    return sorted(w.value for w in vals)


def _targets(e, path, cap, cfg):
    from .solver import CapExceeded

    try:
        return resolve_targets(e, path, cap, cfg)
    except CapExceeded:
        raise UnresolvedJump(cap) from None


def sstep(p: Program, s: SymState, cfg=None, cap: Optional[int] = None) -> List[AnySymState]:
    """Symbolic successors of ``s`` in a fixed order."""
    from .solver import get_config

    if not isinstance(s, SymState):
        raise ValueError("only running states step")
    stmt = p.stmts.get(s.pc)
    if stmt is None:
        return [SymError(s.path)]
    cap = cap if cap is not None else get_config(cfg).model_enum_cap
    env, path = s.env, s.path
    if isinstance(stmt, Assign):
        return [SymState(s.pc + 1, env.set(stmt.var, sym_eval(stmt.expr, env)), path)]
    if isinstance(stmt, Assert):
        psi = sym_eval(stmt.cond, env)
        return [SymState(s.pc + 1, env, path + (psi,)), SymError(path + (negate(psi),))]
    if isinstance(stmt, Jmp):
        target = sym_eval(stmt.target, env)
        return [SymState(l, env, path) for l in _targets(target, path, cap, cfg)]
    psi = sym_eval(stmt.cond, env)
    out: List[AnySymState] = []
    for cond, target in ((psi, stmt.target_true), (negate(psi), stmt.target_false)):
        branch = path + (cond,)
        te = sym_eval(target, env)
        out.extend(SymState(l, env, branch) for l in _targets(te, branch, cap, cfg))
    return out


def weaker_than(a: AnySymState, b: AnySymState, cfg=None) -> bool:
    """``a => b``: same pc and store, and path(a) implies path(b)."""
    from .solver import check_valid

    if type(a) is not type(b):
        return False
    if isinstance(a, SymState) and (a.pc != b.pc or a.env != b.env):
        return False
    have = set(a.path)
    need = [c for c in b.path if c not in have]
    for c in need:
        if not check_valid(list(a.path), c, cfg):
            return False
    return True


def word_symbols(s) -> List[Sym]:
    return sorted((x for x in symbols_of(s) if isinstance(x.ty, WordTy)), key=lambda x: x.name)


def memory_symbols(s) -> List[Sym]:
    return sorted((x for x in symbols_of(s) if isinstance(x.ty, MemTy)), key=lambda x: x.name)
