"""Equivalence-preserving rewriting of formulas before brute-force search.

Every rewrite here replaces a term by one that denotes the same value under
every interpretation, except unit elimination, which removes a symbol together
with its defining equation and records the binding so models can be rebuilt.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

from ..expr import (
    ARITH_OPS,
    CMP_OPS,
    BinOp,
    Const,
    Expr,
    Ite,
    Load,
    Store,
    Sym,
    UnOp,
    Var,
    fold_node,
    rebuild,
    substitute,
    symbols,
)
from ..values import BOOL, MemoryValue, MemTy, Word, WordTy, mask

TRUE = Const(Word(1, 1))
FALSE = Const(Word(1, 0))


@lru_cache(maxsize=200_000)
def skey(e: Expr) -> str:
    from ..text import print_expr

    return f"{e.ty}:{print_expr(e)}"


def _c(v: int, w: int) -> Const:
    return Const(Word(w, v))


def _is_const(e, v=None) -> bool:
    return isinstance(e, Const) and (v is None or e.value.value == v)


# -- linear forms ---------------------------------------------------------------
# A linear form is (coefficients, constant): sum(coeff * atom) + constant mod 2**w.


def lin(e: Expr) -> Tuple[Dict[Expr, int], int]:
    w = e.width
    m = mask(w)
    if isinstance(e, Const):
        return {}, e.value.value
    if isinstance(e, BinOp) and w > 1:
        if e.op in ("add", "sub"):
            ca, ka = lin(e.lhs)
            cb, kb = lin(e.rhs)
            sign = 1 if e.op == "add" else -1
            out = dict(ca)
            for atom, c in cb.items():
                out[atom] = (out.get(atom, 0) + sign * c) & m
            return {a: c for a, c in out.items() if c}, (ka + sign * kb) & m
        if e.op == "mul":
            ca, ka = lin(e.lhs)
            cb, kb = lin(e.rhs)
            if not cb:
                ca, ka, cb, kb = cb, kb, ca, ka
            if not ca:
                return {a: (c * ka) & m for a, c in cb.items() if (c * ka) & m}, (kb * ka) & m
        if e.op == "shl" and isinstance(e.rhs, Const) and e.rhs.value.value < w:
            f = 1 << e.rhs.value.value
            ca, ka = lin(e.lhs)
            return {a: (c * f) & m for a, c in ca.items() if (c * f) & m}, (ka * f) & m
    if isinstance(e, UnOp) and w > 1:
        ca, ka = lin(e.arg)
        return {a: (-c) & m for a, c in ca.items()}, (-ka - 1) & m
    return {e: 1}, 0


def lin_build(coeffs: Dict[Expr, int], k: int, w: int) -> Expr:
    """Rebuild a canonical expression from a linear form."""
    m = mask(w)
    half = 1 << (w - 1)
    pos, neg = [], []
    for atom in sorted(coeffs, key=skey):
        c = coeffs[atom] & m
        if not c:
            continue
        (pos if c <= half else neg).append((atom, c if c <= half else (-c) & m))

    def term(atom, c):
        return atom if c == 1 else BinOp("mul", atom, _c(c, w))

    out: Optional[Expr] = None
    for atom, c in pos:
        t = term(atom, c)
        out = t if out is None else BinOp("add", out, t)
    k &= m
    if out is None and k and k <= half and neg:
        out = _c(k, w)
        k = 0
    for atom, c in neg:
        t = term(atom, c)
        out = BinOp("sub", _c(0, w) if out is None else out, t)
    if out is None:
        return _c(k, w)
    if k:
        out = BinOp("add", out, _c(k, w)) if k <= half else BinOp("sub", out, _c((-k) & m, w))
    return out


def linear_normal_form(e: Expr) -> Expr:
    if not isinstance(e.ty, WordTy) or e.width == 1:
        return e
    c, k = lin(e)
    return lin_build(c, k, e.width)


def addr_relation(a: Expr, b: Expr) -> Optional[str]:
    """"eq" if provably equal, "ne" if provably different, else None."""
    if a == b:
        return "eq"
    ca, ka = lin(a)
    cb, kb = lin(b)
    if ca == cb:
        return "eq" if ka == kb else "ne"
    return None


# -- memory helpers ---------------------------------------------------------------


def mem_bases(m: Expr) -> set:
    if isinstance(m, Store):
        return mem_bases(m.mem)
    if isinstance(m, Ite):
        return mem_bases(m.then) | mem_bases(m.orelse)
    return {m}


def mem_stored(m: Expr, out: list):
    if isinstance(m, Store):
        if m.addr not in out:
            out.append(m.addr)
        mem_stored(m.mem, out)
    elif isinstance(m, Ite):
        mem_stored(m.then, out)
        mem_stored(m.orelse, out)
    return out


def mem_outside(m: Expr) -> Expr:
    """The value read at an address no store and no cell mentions."""
    if isinstance(m, Store):
        return mem_outside(m.mem)
    if isinstance(m, Ite):
        return Ite(m.cond, mem_outside(m.then), mem_outside(m.orelse))
    assert isinstance(m, Const)
    return _c(m.value.default, m.value.val_width)


def _conj(parts: List[Expr]) -> Expr:
    out = TRUE
    for p in parts:
        out = p if out is TRUE else BinOp("and", out, p)
    return out


def expand_mem_eq(a: Expr, b: Expr) -> Optional[Expr]:
    """A word formula equivalent to ``a == b`` for memories, if one is known."""
    bases = mem_bases(a) | mem_bases(b)
    ty: MemTy = a.ty
    points = mem_stored(b, mem_stored(a, []))
    if len(bases) == 1 and isinstance(next(iter(bases)), Sym):
        return _conj([BinOp("eq", Load(a, x), Load(b, x)) for x in points])
    if all(isinstance(x, Const) for x in bases):
        cells = set()
        for x in bases:
            cells.update(addr for addr, _ in x.value.cells)
        for addr in sorted(cells):
            x = _c(addr, ty.addr_width)
            if x not in points:
                points.append(x)
        parts = [BinOp("eq", Load(a, x), Load(b, x)) for x in points]
        if len(points) < (1 << ty.addr_width):
            parts.append(BinOp("eq", mem_outside(a), mem_outside(b)))
        else:
            return None
        return _conj(parts)
    return None


# -- term simplification -------------------------------------------------------------

_FLIP = {"ult": ("ule", True), "ule": ("ult", True)}


@lru_cache(maxsize=400_000)
def simp(e: Expr) -> Expr:
    if isinstance(e, (Const, Var, Sym)):
        return e
    kids = e.children()
    new = tuple(simp(k) for k in kids)
    if any(a is not b for a, b in zip(kids, new)):
        e = rebuild(e, new)
    e = fold_node(e)
    if isinstance(e, Const):
        return e
    if isinstance(e, Ite):
        return _simp_ite(e)
    if isinstance(e, UnOp):
        return _simp_not(e)
    if isinstance(e, BinOp):
        return _simp_bin(e)
    if isinstance(e, Load):
        return _simp_load(e)
    if isinstance(e, Store):
        return _simp_store(e)
    return e


def _simp_ite(e: Ite) -> Expr:
    if isinstance(e.cond, Const):
        return e.then if e.cond.value.value else e.orelse
    if e.then == e.orelse:
        return e.then
    if e.ty == BOOL and _is_const(e.then) and _is_const(e.orelse):
        return e.cond if e.then.value.value else simp(UnOp("not", e.cond))
    return e


def _simp_not(e: UnOp) -> Expr:
    a = e.arg
    if isinstance(a, UnOp):
        return a.arg
    if e.ty == BOOL:
        if isinstance(a, BinOp):
            if a.op in ("ult", "ule"):
                flipped = "ule" if a.op == "ult" else "ult"
                return simp(BinOp(flipped, a.rhs, a.lhs))
            if a.op in ("slt", "sle"):
                flipped = "sle" if a.op == "slt" else "slt"
                return simp(BinOp(flipped, a.rhs, a.lhs))
            if a.op == "neq":
                return simp(BinOp("eq", a.lhs, a.rhs))
        return e
    return linear_normal_form(e)


def _simp_bin(e: BinOp) -> Expr:
    op, a, b = e.op, e.lhs, e.rhs
    if op in ARITH_OPS:
        w = e.width
        m = mask(w)
        if op in ("add", "sub", "mul") or (op == "shl" and isinstance(b, Const)):
            if w > 1:
                return linear_normal_form(e)
            if op == "mul":
                return simp(BinOp("and", a, b))
            if op in ("add", "sub"):
                return simp(BinOp("xor", a, b))
        if op == "and":
            if _is_const(a, 0) or _is_const(b, 0):
                return _c(0, w)
            if _is_const(a, m):
                return b
            if _is_const(b, m) or a == b:
                return a
            if _complementary(a, b):
                return _c(0, w)
        elif op == "or":
            if _is_const(a, m) or _is_const(b, m):
                return _c(m, w)
            if _is_const(a, 0):
                return b
            if _is_const(b, 0) or a == b:
                return a
            if _complementary(a, b):
                return _c(m, w)
        elif op == "xor":
            if a == b:
                return _c(0, w)
            if _is_const(a, 0):
                return b
            if _is_const(b, 0):
                return a
            if w == 1 and _is_const(a, 1):
                return simp(UnOp("not", b))
            if w == 1 and _is_const(b, 1):
                return simp(UnOp("not", a))
        elif op in ("lshr", "ashr", "shl"):
            if _is_const(b, 0):
                return a
            if _is_const(a, 0):
                return a
        elif op == "udiv":
            if _is_const(b, 1):
                return a
        elif op == "umod":
            if _is_const(b, 1):
                return _c(0, w)
        return e
    if op == "neq":
        return simp(UnOp("not", BinOp("eq", a, b)))
    if op == "eq":
        return _simp_eq(a, b)
    if a == b:
        return TRUE if op in ("ule", "sle") else FALSE
    w = a.width
    m = mask(w)
    if op == "ult":
        if _is_const(b, 0) or _is_const(a, m):
            return FALSE
        if isinstance(b, Const):
            return simp(BinOp("ule", a, _c(b.value.value - 1, w)))
        if isinstance(a, Const):
            return simp(BinOp("ule", _c(a.value.value + 1, w), b))
        return e
    if op == "ule":
        if _is_const(a, 0) or _is_const(b, m):
            return TRUE
        if _is_const(b, 0):
            return simp(BinOp("eq", a, b))
        if _is_const(a, m):
            return simp(BinOp("eq", a, b))
        return e
    return e


def _complementary(a: Expr, b: Expr) -> bool:
    return (isinstance(a, UnOp) and a.arg == b) or (isinstance(b, UnOp) and b.arg == a)


def _simp_eq(a: Expr, b: Expr) -> Expr:
    if a == b:
        return TRUE
    if isinstance(a.ty, MemTy):
        if isinstance(a, Const) and isinstance(b, Const):
            return TRUE if a.value == b.value else FALSE
        x = expand_mem_eq(a, b)
        if x is not None:
            return simp(x)
        if skey(b) < skey(a):
            a, b = b, a
        return BinOp("eq", a, b)
    w = a.width
    if w == 1:
        if isinstance(a, Const):
            a, b = b, a
        if isinstance(b, Const):
            return a if b.value.value else simp(UnOp("not", a))
        if _complementary(a, b):
            return FALSE
        if skey(b) < skey(a):
            a, b = b, a
        return BinOp("eq", a, b)
    m = mask(w)
    ca, ka = lin(a)
    cb, kb = lin(b)
    coeffs = dict(ca)
    for atom, c in cb.items():
        coeffs[atom] = (coeffs.get(atom, 0) - c) & m
    coeffs = {x: c for x, c in coeffs.items() if c}
    k = (kb - ka) & m
    if not coeffs:
        return TRUE if k == 0 else FALSE
    if len(coeffs) == 1:
        ((atom, cf),) = coeffs.items()
        if isinstance(atom, Ite) and _is_const(atom.then) and _is_const(atom.orelse):
            # a choice between two constants: the equation picks a branch
            hit_t = (cf * atom.then.value.value) & m == k
            hit_f = (cf * atom.orelse.value.value) & m == k
            if hit_t and hit_f:
                return TRUE
            if hit_t:
                return atom.cond
            if hit_f:
                return simp(UnOp("not", atom.cond))
            return FALSE
    first = min(coeffs, key=skey)
    if coeffs[first] > (1 << (w - 1)):
        coeffs = {x: (-c) & m for x, c in coeffs.items()}
        k = (-k) & m
    return BinOp("eq", lin_build(coeffs, 0, w), _c(k, w))


def _simp_load(e: Load) -> Expr:
    m, a = e.mem, e.addr
    while True:
        if isinstance(m, Store):
            rel = addr_relation(a, m.addr)
            if rel == "eq":
                return m.val
            if rel == "ne":
                m = m.mem
                continue
        elif isinstance(m, Ite):
            return simp(Ite(m.cond, Load(m.then, a), Load(m.orelse, a)))
        elif isinstance(m, Const) and isinstance(a, Const):
            return _c(m.value.load(a.value.value), m.value.val_width)
        break
    return e if m is e.mem else Load(m, a)


def _simp_store(e: Store) -> Expr:
    # drop an older store to the same address if every store in between is
    # provably at a different address
    above = []
    m = e.mem
    while isinstance(m, Store):
        rel = addr_relation(e.addr, m.addr)
        if rel == "eq":
            inner = m.mem
            for s in reversed(above):
                inner = Store(inner, s.addr, s.val)
            return Store(inner, e.addr, e.val)
        if rel != "ne":
            break
        above.append(m)
        m = m.mem
    if isinstance(e.val, Load) and e.val.mem == e.mem and addr_relation(e.val.addr, e.addr) == "eq":
        return e.mem
    return e


def negation(e: Expr) -> Expr:
    return simp(UnOp("not", e))


# -- conjunction-level normalization ---------------------------------------------------


@dataclass
class Normalized:
    conjuncts: List[Expr]
    bindings: List[Tuple[Sym, Expr]] = field(default_factory=list)
    unsat: bool = False

    def rebuild_model(self, model: dict) -> dict:
        """Extend a model of the conjuncts to the eliminated symbols."""
        from ..sym import interp_expr

        out = dict(model)
        for sym, expr in reversed(self.bindings):
            for s in symbols(expr):
                if s not in out:
                    out[s] = default_value(s)
            out[sym] = interp_expr(out, expr)
        return out


def default_value(s: Sym):
    if isinstance(s.ty, MemTy):
        return MemoryValue.filled(s.ty, 0)
    return Word(s.ty.width, 0)


def _flatten(e: Expr, out: List[Expr]) -> bool:
    """Split conjunctions; False if a conjunct is constantly false."""
    if isinstance(e, Const):
        return bool(e.value.value)
    if isinstance(e, BinOp) and e.op == "and":
        return _flatten(e.lhs, out) and _flatten(e.rhs, out)
    if isinstance(e, UnOp) and isinstance(e.arg, BinOp) and e.arg.op == "or":
        return _flatten(negation(e.arg.lhs), out) and _flatten(negation(e.arg.rhs), out)
    out.append(e)
    return True


# -- value sets -----------------------------------------------------------------
# A value set is a sorted list of disjoint closed intervals inside [0, m].


def _wrapped(start: int, length: int, m: int) -> List[Tuple[int, int]]:
    if length > m:
        return [(0, m)]
    end = start + length - 1
    if end <= m:
        return [(start, end)]
    return [(0, end - m - 1), (start, m)]


def _normset(pieces) -> List[Tuple[int, int]]:
    out: List[Tuple[int, int]] = []
    for a, b in sorted(pieces):
        if out and a <= out[-1][1] + 1:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _shift(s, d: int, m: int):
    return _normset(p for a, b in s for p in _wrapped((a + d) & m, b - a + 1, m))


def _negset(s, m: int):
    return _normset(p for a, b in s for p in _wrapped((-b) & m, b - a + 1, m))


def _complement(s, m: int):
    out, nxt = [], 0
    for a, b in s:
        if a > nxt:
            out.append((nxt, a - 1))
        nxt = b + 1
    if nxt <= m:
        out.append((nxt, m))
    return out


def _intersect(s, t):
    out, i, j = [], 0, 0
    while i < len(s) and j < len(t):
        a, b = max(s[i][0], t[j][0]), min(s[i][1], t[j][1])
        if a <= b:
            out.append((a, b))
        if s[i][1] < t[j][1]:
            i += 1
        else:
            j += 1
    return out


def _constraint(c: Expr):
    """(term, value set) when ``c`` bounds a word term by a constant."""
    neg = False
    if isinstance(c, UnOp) and c.ty == BOOL:
        c, neg = c.arg, True
    if not (isinstance(c, BinOp) and c.op in CMP_OPS and isinstance(c.lhs.ty, WordTy)):
        return None
    a, b, op = c.lhs, c.rhs, c.op
    if isinstance(a, Const) == isinstance(b, Const):
        return None
    w = a.width
    m = mask(w)
    half = 1 << (w - 1)
    term_left = isinstance(b, Const)
    t, k = (a, b.value.value) if term_left else (b, a.value.value)
    if op in ("eq", "neq"):
        s = [(k, k)]
        if op == "neq":
            neg = not neg
        return t, (_complement(s, m) if neg else s)
    signed = op in ("slt", "sle")
    if signed:
        k = (k + half) & m
    strict = op in ("ult", "slt")
    if term_left:
        hi = k - 1 if strict else k
        s = [(0, hi)] if hi >= 0 else []
    else:
        lo = k + 1 if strict else k
        s = [(lo, m)] if lo <= m else []
    if signed:
        s = _shift(s, -half, m)
    return t, (_complement(s, m) if neg else s)


def _interval_conflict(conjs: List[Expr]) -> bool:
    present = set(conjs)
    for c in conjs:
        # a < b together with b < a
        if isinstance(c, BinOp) and c.op in ("ult", "slt") and BinOp(c.op, c.rhs, c.lhs) in present:
            return True
    sets: Dict[tuple, list] = {}
    for c in conjs:
        got = _constraint(c)
        if got is None:
            continue
        t, s = got
        w = t.width
        if w == 1:
            continue
        m = mask(w)
        coeffs, k0 = lin(t)
        if not coeffs:
            continue
        first = min(coeffs, key=skey)
        flip = coeffs[first] > (1 << (w - 1))
        if flip:
            coeffs = {x: (-v) & m for x, v in coeffs.items()}
        # t = sgn * A + k0  with A the canonical constant-free part
        s = _shift(s, -k0, m)
        if flip:
            s = _negset(s, m)
        key = (w, tuple(sorted((skey(x), v) for x, v in coeffs.items())))
        cur = sets.get(key)
        cur = s if cur is None else _intersect(cur, s)
        if not cur:
            return True
        sets[key] = cur
    return False


def _binding(c: Expr) -> Optional[Tuple[Sym, Expr]]:
    if isinstance(c, Sym):
        return c, TRUE
    if isinstance(c, UnOp) and isinstance(c.arg, Sym):
        return c.arg, FALSE
    if not (isinstance(c, BinOp) and c.op == "eq"):
        return None
    a, b = c.lhs, c.rhs
    for x, y in ((a, b), (b, a)):
        if isinstance(x, Sym) and x not in symbols(y):
            return x, y
    if isinstance(a.ty, WordTy) and a.width > 1 and isinstance(b, Const):
        w = a.width
        m = mask(w)
        coeffs, k0 = lin(a)
        for atom in sorted(coeffs, key=skey):
            cf = coeffs[atom]
            if not isinstance(atom, Sym) or cf % 2 == 0:
                continue
            others = {x: v for x, v in coeffs.items() if x != atom}
            if any(atom in symbols(x) for x in others):
                continue
            inv = pow(cf, -1, 1 << w)
            rest = {x: (-v * inv) & m for x, v in others.items()}
            return atom, lin_build(rest, ((b.value.value - k0) * inv) & m, w)
    return None


def _contextual(conjs: List[Expr]) -> List[Expr]:
    out = []
    negs = [negation(k) for k in conjs]
    for i, c in enumerate(conjs):
        facts: Dict[Expr, Expr] = {}
        for j, k in enumerate(conjs):
            if j == i:
                continue
            facts[k] = TRUE
            facts[negs[j]] = FALSE
        if not facts:
            out.append(c)
            continue
        out.append(simp(_replace(c, facts)))
    return out


def _same_addr(facts, a: Expr, b: Expr) -> Optional[bool]:
    if a == b:
        return True
    for eq in (BinOp("eq", a, b), BinOp("eq", b, a)):
        for key in (eq, simp(eq)):
            hit = facts.get(key)
            if hit is not None:
                return hit == TRUE
    diff = simp(BinOp("sub", a, b))
    if isinstance(diff, Const):
        return diff.value.value == 0
    return None


def _replace(e: Expr, facts: Dict[Expr, Expr], memo: Optional[Dict[Expr, Expr]] = None) -> Expr:
    if e.ty == BOOL and e in facts:
        return facts[e]
    kids = e.children()
    if not kids:
        return e
    if memo is None:
        memo = {}
    hit = memo.get(e)
    if hit is not None:
        return hit
    out = _replace_node(e, kids, facts, memo)
    memo[e] = out
    return out


def _replace_node(e: Expr, kids, facts, memo) -> Expr:
    new = tuple(_replace(k, facts, memo) for k in kids)
    out = e if all(a is b for a, b in zip(kids, new)) else rebuild(e, new)
    if isinstance(out, Load):
        # read over write, with address (dis)equalities taken from the context
        m = out.mem
        while isinstance(m, Store):
            same = _same_addr(facts, out.addr, m.addr)
            if same is None:
                break
            if same:
                return m.val
            m = m.mem
        if m is not out.mem:
            out = Load(m, out.addr)
    return out


def normalize(conjuncts, eliminate: bool = True, keep=frozenset()) -> Normalized:
    """Simplify a conjunction; ``keep`` lists symbols that must not be eliminated."""
    work = [simp(c) for c in conjuncts]
    bindings: List[Tuple[Sym, Expr]] = []
    for _ in range(10_000):
        flat: List[Expr] = []
        for c in work:
            if not _flatten(c, flat):
                return Normalized([FALSE], bindings, True)
        seen = set()
        uniq = []
        for c in flat:
            if c not in seen:
                seen.add(c)
                uniq.append(c)
        flat = uniq
        if any(negation(c) in seen for c in flat) or _interval_conflict(flat):
            return Normalized([FALSE], bindings, True)
        if eliminate:
            found = None
            for c in flat:
                bnd = _binding(c)
                if bnd is not None and bnd[0] not in keep:
                    found = bnd
                    break
            if found is not None:
                sym, val = found
                bindings.append(found)
                work = [simp(substitute(c, {sym: val})) for c in flat]
                continue
        ctx = _contextual(flat) if len(flat) > 1 else flat
        if ctx != flat:
            work = ctx
            continue
        return Normalized(flat, bindings, False)
    raise RuntimeError("normalization did not converge")


def apply_bindings(e: Expr, bindings) -> Expr:
    for sym, val in bindings:
        e = substitute(e, {sym: val})
    return simp(e)
