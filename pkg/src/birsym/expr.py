"""Expression trees shared by concrete and symbolic code.

Program expressions have :class:`Var` leaves; symbolic expressions have
:class:`Sym` leaves instead. Nodes are immutable, hash-consed by value, and
typed on construction, so an ill-typed tree cannot be built.
"""

from __future__ import annotations

import weakref
from functools import lru_cache
from typing import Callable, Iterator, Mapping

from .values import BOOL, MemoryValue, MemTy, Ty, Value, Word, WordTy, mask

ARITH_OPS = ("add", "sub", "mul", "udiv", "umod", "and", "or", "xor", "shl", "lshr", "ashr")
CMP_OPS = ("eq", "neq", "ult", "ule", "slt", "sle")
BIN_OPS = ARITH_OPS + CMP_OPS
UN_OPS = ("not",)


class TypeMismatch(TypeError):
    pass


class UnboundVariable(KeyError):
    pass


class UnboundSymbol(KeyError):
    pass


_NODES: "weakref.WeakValueDictionary" = weakref.WeakValueDictionary()


class _Interned(type):
    # structurally equal nodes are the same object, so equality is mostly identity
    def __call__(cls, *args, **kwargs):
        node = super().__call__(*args, **kwargs)
        return _NODES.setdefault((cls, node._key()), node)


class Expr(metaclass=_Interned):
    __slots__ = ("ty", "_hash", "__weakref__")

    def __setattr__(self, name, value):
        raise AttributeError("expressions are immutable")

    def _init(self, ty, *key):
        object.__setattr__(self, "ty", ty)
        object.__setattr__(self, "_hash", hash((type(self).__name__,) + key))

    def _key(self) -> tuple:
        raise NotImplementedError

    def children(self) -> tuple:
        return ()

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        if self is other:
            return True
        if type(self) is not type(other) or self._hash != other._hash:
            return False
        return _struct_eq(self, other)

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        from .text import print_expr

        return f"<{type(self).__name__} {print_expr(self)}>"

    @property
    def width(self) -> int:
        if not isinstance(self.ty, WordTy):
            raise TypeMismatch(f"expected a word, got {self.ty}")
        return self.ty.width


def _struct_eq(a: Expr, b: Expr) -> bool:
    # iterative, and each pair of nodes is compared once; naive recursion is
    # exponential on shared subterms that are equal but not identical
    seen = set()
    todo = [(a, b)]
    while todo:
        x, y = todo.pop()
        if x is y:
            continue
        pair = (id(x), id(y))
        if pair in seen:
            continue
        if type(x) is not type(y) or x._hash != y._hash:
            return False
        seen.add(pair)
        kx, ky = x._key(), y._key()
        if len(kx) != len(ky):
            return False
        for u, v in zip(kx, ky):
            if isinstance(u, Expr):
                if not isinstance(v, Expr):
                    return False
                todo.append((u, v))
            elif u != v:
                return False
    return True


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Value):
        object.__setattr__(self, "value", value)
        self._init(value.ty, value)

    def _key(self):
        return (self.value,)


class Var(Expr):
    """A program variable; equality is by name and type."""

    __slots__ = ("name",)

    def __init__(self, name: str, ty: Ty):
        if not name:
            raise ValueError("variable name must be nonempty")
        object.__setattr__(self, "name", name)
        self._init(ty, name, ty)

    def _key(self):
        return (self.name, self.ty)


class Sym(Expr):
    """A symbol standing for an unknown value."""

    __slots__ = ("name",)

    def __init__(self, name: str, ty: Ty):
        if not name:
            raise ValueError("symbol name must be nonempty")
        object.__setattr__(self, "name", name)
        self._init(ty, name, ty)

    def _key(self):
        return (self.name, self.ty)


class Ite(Expr):
    __slots__ = ("cond", "then", "orelse")

    def __init__(self, cond: Expr, then: Expr, orelse: Expr):
        if cond.ty != BOOL:
            raise TypeMismatch(f"ite condition must be w1, got {cond.ty}")
        if then.ty != orelse.ty:
            raise TypeMismatch(f"ite branches differ: {then.ty} vs {orelse.ty}")
        object.__setattr__(self, "cond", cond)
        object.__setattr__(self, "then", then)
        object.__setattr__(self, "orelse", orelse)
        self._init(then.ty, cond, then, orelse)

    def _key(self):
        return (self.cond, self.then, self.orelse)

    def children(self):
        return (self.cond, self.then, self.orelse)


class UnOp(Expr):
    __slots__ = ("op", "arg")

    def __init__(self, op: str, arg: Expr):
        if op not in UN_OPS:
            raise ValueError(f"unknown unary operator {op}")
        if not isinstance(arg.ty, WordTy):
            raise TypeMismatch(f"{op} expects a word, got {arg.ty}")
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "arg", arg)
        self._init(arg.ty, op, arg)

    def _key(self):
        return (self.op, self.arg)

    def children(self):
        return (self.arg,)


class BinOp(Expr):
    __slots__ = ("op", "lhs", "rhs")

    def __init__(self, op: str, lhs: Expr, rhs: Expr):
        if op not in BIN_OPS:
            raise ValueError(f"unknown binary operator {op}")
        if lhs.ty != rhs.ty:
            raise TypeMismatch(f"{op} operands differ: {lhs.ty} vs {rhs.ty}")
        if op in ("eq", "neq"):
            ty = BOOL
        elif not isinstance(lhs.ty, WordTy):
            raise TypeMismatch(f"{op} expects words, got {lhs.ty}")
        else:
            ty = BOOL if op in CMP_OPS else lhs.ty
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "lhs", lhs)
        object.__setattr__(self, "rhs", rhs)
        self._init(ty, op, lhs, rhs)

    def _key(self):
        return (self.op, self.lhs, self.rhs)

    def children(self):
        return (self.lhs, self.rhs)


class Load(Expr):
    __slots__ = ("mem", "addr")

    def __init__(self, mem: Expr, addr: Expr):
        if not isinstance(mem.ty, MemTy):
            raise TypeMismatch(f"load from non-memory {mem.ty}")
        if addr.ty != WordTy(mem.ty.addr_width):
            raise TypeMismatch(f"load address {addr.ty} does not fit {mem.ty}")
        object.__setattr__(self, "mem", mem)
        object.__setattr__(self, "addr", addr)
        self._init(WordTy(mem.ty.val_width), mem, addr)

    def _key(self):
        return (self.mem, self.addr)

    def children(self):
        return (self.mem, self.addr)


class Store(Expr):
    __slots__ = ("mem", "addr", "val")

    def __init__(self, mem: Expr, addr: Expr, val: Expr):
        if not isinstance(mem.ty, MemTy):
            raise TypeMismatch(f"store into non-memory {mem.ty}")
        if addr.ty != WordTy(mem.ty.addr_width):
            raise TypeMismatch(f"store address {addr.ty} does not fit {mem.ty}")
        if val.ty != WordTy(mem.ty.val_width):
            raise TypeMismatch(f"stored value {val.ty} does not fit {mem.ty}")
        object.__setattr__(self, "mem", mem)
        object.__setattr__(self, "addr", addr)
        object.__setattr__(self, "val", val)
        self._init(mem.ty, mem, addr, val)

    def _key(self):
        return (self.mem, self.addr, self.val)

    def children(self):
        return (self.mem, self.addr, self.val)


# -- construction helpers ----------------------------------------------------


def const(value: int, width: int) -> Const:
    return Const(Word(width, value))


TRUE_E = const(1, 1)
FALSE_E = const(0, 1)


def rebuild(e: Expr, kids) -> Expr:
    if isinstance(e, Ite):
        return Ite(*kids)
    if isinstance(e, UnOp):
        return UnOp(e.op, *kids)
    if isinstance(e, BinOp):
        return BinOp(e.op, *kids)
    if isinstance(e, Load):
        return Load(*kids)
    if isinstance(e, Store):
        return Store(*kids)
    return e


def neg(e: Expr) -> Expr:
    """Boolean negation of a width-1 expression."""
    if e.ty != BOOL:
        raise TypeMismatch("negation of a non-boolean")
    return UnOp("not", e)


# -- word semantics ----------------------------------------------------------


def _signed(v: int, w: int) -> int:
    return v - (1 << w) if v >> (w - 1) else v


def apply_binop(op: str, w: int, a: int, b: int) -> int:
    """Apply a word operator; the result is already reduced."""
    m = mask(w)
    if op == "add":
        return (a + b) & m
    if op == "sub":
        return (a - b) & m
    if op == "mul":
        return (a * b) & m
    if op == "udiv":
        return m if b == 0 else a // b
    if op == "umod":
        return m if b == 0 else a % b
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "shl":
        return (a << b) & m if b < w else 0
    if op == "lshr":
        return a >> b if b < w else 0
    if op == "ashr":
        return (_signed(a, w) >> min(b, w - 1)) & m
    if op == "eq":
        return int(a == b)
    if op == "neq":
        return int(a != b)
    if op == "ult":
        return int(a < b)
    if op == "ule":
        return int(a <= b)
    if op == "slt":
        return int(_signed(a, w) < _signed(b, w))
    if op == "sle":
        return int(_signed(a, w) <= _signed(b, w))
    raise ValueError(op)


def evaluate(e: Expr, leaf: Callable[[Expr], Value]) -> Value:
    """Evaluate ``e``; ``leaf`` supplies values for Var and Sym nodes."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, (Var, Sym)):
        return leaf(e)
    if isinstance(e, Ite):
        c = evaluate(e.cond, leaf)
        return evaluate(e.then if c.value else e.orelse, leaf)
    if isinstance(e, UnOp):
        a = evaluate(e.arg, leaf)
        return Word(a.width, ~a.value)
    if isinstance(e, BinOp):
        a = evaluate(e.lhs, leaf)
        b = evaluate(e.rhs, leaf)
        if isinstance(a, MemoryValue):
            same = a == b
            return Word(1, int(same if e.op == "eq" else not same))
        return Word(e.ty.width, apply_binop(e.op, a.width, a.value, b.value))
    if isinstance(e, Load):
        m = evaluate(e.mem, leaf)
        a = evaluate(e.addr, leaf)
        return Word(m.val_width, m.load(a.value))
    if isinstance(e, Store):
        m = evaluate(e.mem, leaf)
        a = evaluate(e.addr, leaf)
        v = evaluate(e.val, leaf)
        return m.store(a.value, v.value)
    raise TypeError(f"not an expression: {e!r}")


# -- traversals --------------------------------------------------------------


def walk(e: Expr) -> Iterator[Expr]:
    stack = [e]
    seen = set()
    while stack:
        n = stack.pop()
        if id(n) in seen:
            continue
        seen.add(id(n))
        yield n
        stack.extend(n.children())


@lru_cache(maxsize=65536)
def symbols(e: Expr) -> frozenset:
    if isinstance(e, Sym):
        return frozenset((e,))
    out = frozenset()
    for c in e.children():
        out |= symbols(c)
    return out


@lru_cache(maxsize=65536)
def variables(e: Expr) -> frozenset:
    if isinstance(e, Var):
        return frozenset((e,))
    out = frozenset()
    for c in e.children():
        out |= variables(c)
    return out


@lru_cache(maxsize=65536)
def size(e: Expr) -> int:
    """Number of nodes of ``e`` read as a tree (shared subterms counted each time)."""
    return 1 + sum(size(c) for c in e.children())


def is_const(e: Expr) -> bool:
    return isinstance(e, Const)


def fold_node(e: Expr) -> Expr:
    """Constant-fold ``e`` if all of its children are constants; also settle an ite
    whose condition is constant or whose branches coincide."""
    if isinstance(e, Ite):
        if isinstance(e.cond, Const):
            return e.then if e.cond.value.value else e.orelse
        if e.then == e.orelse:
            return e.then
    kids = e.children()
    if kids and all(isinstance(k, Const) for k in kids):
        return Const(evaluate(e, _no_leaf))
    return e


def _no_leaf(e):
    raise AssertionError("constant subtree has a leaf")


def substitute(e: Expr, mapping: Mapping[Expr, Expr], fold: bool = True) -> Expr:
    """Replace Var/Sym leaves per ``mapping``; fold all-constant subtrees."""
    memo: dict = {}

    def go(n: Expr) -> Expr:
        hit = memo.get(id(n))
        if hit is not None:
            return hit
        if isinstance(n, (Var, Sym)):
            out = mapping.get(n, n)
        elif isinstance(n, Const):
            out = n
        else:
            kids = n.children()
            new = tuple(go(k) for k in kids)
            out = n if all(a is b for a, b in zip(kids, new)) else rebuild(n, new)
            if fold:
                out = fold_node(out)
        memo[id(n)] = out
        return out

    return go(e)


def fold(e: Expr) -> Expr:
    return substitute(e, {}, fold=True)
