"""Exhaustive and randomized search over interpretations, vectorized with numpy.

Memories are finitized: every load from a memory symbol becomes a fresh cell
variable, and cells whose addresses coincide are forced to agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..expr import BinOp, Const, Expr, Ite, Load, Store, Sym, UnOp, Var, rebuild, symbols
from ..values import BOOL, MemoryValue, MemTy, Word, WordTy, mask
from .normalize import TRUE, mem_bases, mem_outside, mem_stored, simp

U64 = np.uint64
CHUNK = 1 << 16


class Unsupported(Exception):
    pass


@dataclass
class Problem:
    conjuncts: List[Expr]
    syms: List[Sym]
    cells: Dict[Sym, List[Tuple[Sym, Expr]]] = field(default_factory=dict)
    outside: Dict[Sym, Expr] = field(default_factory=dict)
    targets: List[Expr] = field(default_factory=list)

    @property
    def bits(self) -> int:
        return sum(s.ty.width for s in self.syms)


def _read(m: Expr, a: Expr) -> Expr:
    if isinstance(m, Store):
        return Ite(BinOp("eq", a, m.addr), m.val, _read(m.mem, a))
    if isinstance(m, Ite):
        return Ite(m.cond, _read(m.then, a), _read(m.orelse, a))
    if isinstance(m, (Sym, Const)):
        return Load(m, a)
    raise Unsupported(f"memory expression {type(m).__name__}")


def _expand(e: Expr, memo: dict) -> Expr:
    hit = memo.get(e)
    if hit is not None:
        return hit
    if isinstance(e, Load):
        out = _read(_expand_mem(e.mem, memo), _expand(e.addr, memo))
    elif isinstance(e.ty, MemTy):
        raise Unsupported("memory-valued subterm outside a load")
    elif isinstance(e, BinOp) and isinstance(e.lhs.ty, MemTy):
        raise Unsupported("nested memory comparison")
    else:
        kids = e.children()
        new = tuple(_expand(k, memo) for k in kids)
        out = e if all(a is b for a, b in zip(kids, new)) else rebuild(e, new)
    memo[e] = out
    return out


def _expand_mem(m: Expr, memo: dict) -> Expr:
    if isinstance(m, Store):
        return Store(_expand_mem(m.mem, memo), _expand(m.addr, memo), _expand(m.val, memo))
    if isinstance(m, Ite):
        return Ite(_expand(m.cond, memo), _expand_mem(m.then, memo), _expand_mem(m.orelse, memo))
    return m


def _load_addrs(e: Expr, base: Sym, out: list):
    if isinstance(e, Load) and e.mem == base and e.addr not in out:
        out.append(e.addr)
    for k in e.children():
        _load_addrs(k, base, out)


def prepare(conjuncts: List[Expr], targets=()) -> Problem:
    """Reduce to a word-only problem over word symbols and memory cells."""
    memo: dict = {}
    plain: List[Expr] = []
    mem_eqs: List[Tuple[Expr, Expr]] = []
    for c in conjuncts:
        if isinstance(c, BinOp) and c.op == "eq" and isinstance(c.lhs.ty, MemTy):
            mem_eqs.append((c.lhs, c.rhs))
        else:
            plain.append(_expand(c, memo))
    tgts = [_expand(t, memo) for t in targets]
    outside: Dict[Sym, Expr] = {}
    for a, b in mem_eqs:
        ba, bb = mem_bases(a), mem_bases(b)
        if all(isinstance(x, Const) for x in ba):
            a, b, ba, bb = b, a, bb, ba
        if not (len(ba) == 1 and isinstance(next(iter(ba)), Sym) and all(isinstance(x, Const) for x in bb)):
            raise Unsupported("memory equality between unrelated memories")
        base = next(iter(ba))
        if base in outside:
            raise Unsupported("memory symbol equated twice")
        points = mem_stored(b, mem_stored(a, []))
        for x in bb:
            for addr, _ in x.value.cells:
                cx = Const(Word(base.ty.addr_width, addr))
                if cx not in points:
                    points.append(cx)
        for e in plain + tgts:
            _load_addrs(e, base, points)
        for other_a, other_b in mem_eqs:
            for m in (other_a, other_b):
                if base in mem_bases(m):
                    mem_stored(m, points)
        ea, eb = _expand_mem(a, memo), _expand_mem(b, memo)
        for x in points:
            plain.append(BinOp("eq", _read(ea, _expand(x, memo)), _read(eb, _expand(x, memo))))
        outside[base] = _expand(mem_outside(b), memo)
    # cells
    cells: Dict[Sym, List[Tuple[Sym, Expr]]] = {}
    cell_memo: dict = {}

    def cellify(e: Expr) -> Expr:
        hit = cell_memo.get(e)
        if hit is not None:
            return hit
        kids = e.children()
        new = tuple(cellify(k) for k in kids)
        out = e if all(a is b for a, b in zip(kids, new)) else rebuild(e, new)
        if isinstance(out, Load) and isinstance(out.mem, Sym):
            lst = cells.setdefault(out.mem, [])
            for cs, addr in lst:
                if addr == out.addr:
                    out = cs
                    break
            else:
                cs = Sym(f"cell!{out.mem.name}!{len(lst)}", out.ty)
                lst.append((cs, out.addr))
                out = cs
        cell_memo[e] = out
        return out

    plain = [cellify(c) for c in plain]
    tgts = [cellify(t) for t in tgts]
    outside = {k: cellify(v) for k, v in outside.items()}
    for base, lst in cells.items():
        for i in range(len(lst)):
            for j in range(i + 1, len(lst)):
                (ci, ai), (cj, aj) = lst[i], lst[j]
                plain.append(simp(Ite(BinOp("eq", ai, aj), BinOp("eq", ci, cj), TRUE)))
    plain = [c for c in (simp(c) for c in plain) if c != TRUE]
    syms = set()
    addrs = [a for lst in cells.values() for _, a in lst]
    for e in plain + tgts + list(outside.values()) + addrs:
        syms |= symbols(e)
    syms = sorted(syms, key=lambda s: s.name)
    for s in syms:
        if not isinstance(s.ty, WordTy):
            raise Unsupported(f"memory symbol {s.name} left after finitization")
    return Problem(plain, syms, cells, outside, tgts)


# -- vector evaluation ------------------------------------------------------------


def _signed(a, w):
    if w == 64:
        return a.view(np.int64)
    top = ((a >> U64(w - 1)) & U64(1)).astype(np.int64)
    return a.astype(np.int64) - (top << np.int64(w))


def veval(e: Expr, env: Dict[Sym, np.ndarray], n: int, memo: Optional[dict] = None) -> np.ndarray:
    if memo is None:
        memo = {}
    key = id(e)
    hit = memo.get(key)
    if hit is not None:
        return hit[1]
    out = _veval(e, env, n, memo)
    memo[key] = (e, out)
    return out


def _veval(e, env, n, memo):
    if isinstance(e, Const):
        return np.full(n, U64(e.value.value), dtype=np.uint64)
    if isinstance(e, Sym):
        return env[e]
    if isinstance(e, Var):
        raise Unsupported("program variable in a formula")
    w = e.width
    m = U64(mask(w))
    if isinstance(e, Ite):
        c = veval(e.cond, env, n, memo)
        return np.where(c != 0, veval(e.then, env, n, memo), veval(e.orelse, env, n, memo))
    if isinstance(e, UnOp):
        return ~veval(e.arg, env, n, memo) & m
    if isinstance(e, Load):
        if not isinstance(e.mem, Const):
            raise Unsupported("load from a non-constant memory")
        mv: MemoryValue = e.mem.value
        a = veval(e.addr, env, n, memo)
        out = np.full(n, U64(mv.default), dtype=np.uint64)
        for addr, val in mv.cells:
            out = np.where(a == U64(addr), U64(val), out)
        return out
    op = e.op
    a = veval(e.lhs, env, n, memo)
    b = veval(e.rhs, env, n, memo)
    ow = e.lhs.width
    if op == "add":
        return (a + b) & m
    if op == "sub":
        return (a - b) & m
    if op == "mul":
        return (a * b) & m
    if op == "udiv":
        z = b == 0
        return np.where(z, m, a // np.where(z, U64(1), b))
    if op == "umod":
        z = b == 0
        return np.where(z, m, a % np.where(z, U64(1), b))
    if op == "and":
        return a & b
    if op == "or":
        return a | b
    if op == "xor":
        return a ^ b
    if op == "shl":
        return np.where(b >= U64(w), U64(0), (a << np.minimum(b, U64(63))) & m)
    if op == "lshr":
        return np.where(b >= U64(w), U64(0), a >> np.minimum(b, U64(63)))
    if op == "ashr":
        s = _signed(a, w) >> np.minimum(b, U64(w - 1)).astype(np.int64)
        return s.astype(np.uint64) & m
    if op == "eq":
        return (a == b).astype(np.uint64)
    if op == "neq":
        return (a != b).astype(np.uint64)
    if op == "ult":
        return (a < b).astype(np.uint64)
    if op == "ule":
        return (a <= b).astype(np.uint64)
    if op == "slt":
        return (_signed(a, ow) < _signed(b, ow)).astype(np.uint64)
    if op == "sle":
        return (_signed(a, ow) <= _signed(b, ow)).astype(np.uint64)
    raise ValueError(op)


def satisfied(p: Problem, env, n) -> np.ndarray:
    memo: dict = {}
    ok = np.ones(n, dtype=bool)
    for c in p.conjuncts:
        ok &= veval(c, env, n, memo) != 0
        if not ok.any():
            break
    return ok


def _decode(p: Problem, idx: np.ndarray) -> Dict[Sym, np.ndarray]:
    env = {}
    off = 0
    for s in p.syms:
        w = s.ty.width
        env[s] = (idx >> U64(off)) & U64(mask(w))
        off += w
    return env


def exhaustive(p: Problem, want: str = "first", cap: Optional[int] = None):
    """Walk every assignment of ``p.syms``.

    ``want`` is "first" (return one satisfying row or None), "all" (list of
    satisfying rows as dicts of arrays) or "values" (the set of values of
    ``p.targets[0]``; stops once it exceeds ``cap``).
    """
    total = 1 << p.bits
    values: set = set()
    rows = []
    for start in range(0, total, CHUNK):
        n = min(CHUNK, total - start)
        idx = np.arange(start, start + n, dtype=np.uint64)
        env = _decode(p, idx)
        ok = satisfied(p, env, n)
        if not ok.any():
            continue
        if want == "first":
            i = int(np.argmax(ok))
            return {s: int(v[i]) for s, v in env.items()}
        if want == "all":
            rows.append({s: v[ok] for s, v in env.items()})
        else:
            vals = veval(p.targets[0], env, n)[ok]
            values.update(int(v) for v in np.unique(vals))
            if cap is not None and len(values) > cap:
                return values
    if want == "first":
        return None
    if want == "all":
        return rows
    return values


# -- randomized search ------------------------------------------------------------


def _constants(p: Problem) -> Dict[int, set]:
    out: Dict[int, set] = {}
    stack = list(p.conjuncts)
    seen = set()
    while stack:
        e = stack.pop()
        if id(e) in seen:
            continue
        seen.add(id(e))
        if isinstance(e, Const) and isinstance(e.ty, WordTy):
            w = e.width
            v = e.value.value
            out.setdefault(w, set()).update({v, (v + 1) & mask(w), (v - 1) & mask(w)})
        stack.extend(e.children())
    return out


def _random_words(rng: np.random.Generator, w: int, n: int, specials) -> np.ndarray:
    vals = rng.integers(0, mask(w), size=n, dtype=np.uint64, endpoint=True)
    pool = sorted({0, 1, mask(w)} | set(specials))
    pick = rng.random(n) < 0.25
    if pick.any():
        vals[pick] = np.array(pool, dtype=np.uint64)[rng.integers(0, len(pool), size=int(pick.sum()))]
    return vals


def _bounds(p: Problem):
    """Linear terms with a constant interval: (term, lo, hi)."""
    from .normalize import lin

    out = []
    for c in p.conjuncts:
        t = lo = hi = None
        if isinstance(c, BinOp) and c.op == "ule":
            if isinstance(c.lhs, Const):
                t, lo, hi = c.rhs, c.lhs.value.value, mask(c.rhs.width)
            elif isinstance(c.rhs, Const):
                t, lo, hi = c.lhs, 0, c.rhs.value.value
        elif isinstance(c, BinOp) and c.op == "eq" and isinstance(c.rhs, Const) and c.rhs.ty != BOOL:
            t, lo, hi = c.lhs, c.rhs.value.value, c.rhs.value.value
        if t is not None and isinstance(t.ty, WordTy) and t.width > 1:
            coeffs, k = lin(t)
            out.append((t, coeffs, k, lo, hi))
    return out


def probe(p: Problem, rng: np.random.Generator, rounds: int = 4, n: int = 4096):
    """Random search; returns a dict of satisfying rows (arrays) or None."""
    specials = _constants(p)
    bounds = _bounds(p)
    for r in range(rounds):
        env = {s: _random_words(rng, s.ty.width, n, specials.get(s.ty.width, ())) for s in p.syms}
        if bounds and r % 2 == 1:
            _propagate(p, env, bounds, rng, n)
        ok = satisfied(p, env, n)
        if ok.any():
            return {s: v[ok] for s, v in env.items()}
    return None


def _propagate(p, env, bounds, rng, n):
    """Solve interval constraints one symbol at a time where that is possible."""
    fixed = set()
    order = list(range(len(bounds)))
    rng.shuffle(order)
    for i in order:
        t, coeffs, k, lo, hi = bounds[i]
        w = t.width
        mw = mask(w)
        cands = [a for a in coeffs if isinstance(a, Sym) and a in env and a not in fixed and coeffs[a] % 2 == 1]
        cands = [a for a in cands if not any(a in symbols(o) for o in coeffs if o != a)]
        if not cands:
            continue
        x = cands[int(rng.integers(0, len(cands)))]
        span = hi - lo
        goal = (U64(lo) + rng.integers(0, span, size=n, dtype=np.uint64, endpoint=True)) & U64(mw)
        rest = np.full(n, U64(k), dtype=np.uint64)
        memo: dict = {}
        for atom, cf in coeffs.items():
            if atom == x:
                continue
            rest = (rest + veval(atom, env, n, memo) * U64(cf)) & U64(mw)
        inv = U64(pow(coeffs[x], -1, 1 << w))
        env[x] = ((goal - rest) * inv) & U64(mw)
        fixed.add(x)
        fixed.update(a for a in coeffs if isinstance(a, Sym))


def rows_to_model(p: Problem, rows: Dict[Sym, np.ndarray], i: int) -> Dict[Sym, int]:
    return {s: int(v[i]) for s, v in rows.items()}


def memories(p: Problem, model: Dict[Sym, int], fill_rng=None) -> Dict[Sym, MemoryValue]:
    """Rebuild memory symbols from their cells under a model of ``p``."""
    from ..sym import interp_expr

    words = {s: Word(s.ty.width, v) for s, v in model.items()}
    out = {}
    for base in sorted(set(p.cells) | set(p.outside), key=lambda s: s.name):
        if base in p.outside:
            default = interp_expr(words, p.outside[base]).value
        elif fill_rng is not None:
            default = fill_rng.getrandbits(base.ty.val_width)
        else:
            default = 0
        mv = MemoryValue.filled(base.ty, default)
        for cs, addr in p.cells.get(base, []):
            if cs not in model:
                # the cell was simplified out of every constraint, so any content will do
                continue
            mv = mv.store(interp_expr(words, addr).value, model[cs])
        out[base] = mv
    return out
