"""Satisfiability, validity and model enumeration for path conditions.

Two backends answer the same questions. ``brute`` rewrites the formula with
equivalence-preserving rules and then enumerates every interpretation of the
remaining symbols (falling back to randomized search when the search space is
above the bit budget, which can only ever produce Sat). ``external`` hands the
raw formula to an SMT-LIB2 solver process.
"""

from __future__ import annotations

import os
import random
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Optional, Union

import numpy as np

from ..expr import BinOp, Const, Expr, Ite, Sym, UnOp, apply_binop, symbols
from ..values import BOOL, MemoryValue, MemTy, Word, mask
from . import brute, smtlib
from .normalize import Normalized, apply_bindings, normalize


@dataclass(frozen=True)
class Sat:
    model: Dict[Sym, object]


@dataclass(frozen=True)
class Unsat:
    pass


@dataclass(frozen=True)
class Unknown:
    reason: str


SolverResult = Union[Sat, Unsat, Unknown]


class SolverUnknown(RuntimeError):
    pass


class CapExceeded(RuntimeError):
    def __init__(self, cap):
        super().__init__(f"more than {cap} models")
        self.cap = cap


@dataclass(frozen=True)
class SolverConfig:
    backend: str = "brute"
    brute_width_budget: int = 20
    command: Optional[tuple] = None
    timeout_ms: int = 10_000
    model_enum_cap: int = 64
    probe_rounds: int = 6

    def __post_init__(self):
        if self.backend not in ("brute", "external"):
            raise ValueError(f"unknown solver backend {self.backend!r}")
        if self.brute_width_budget <= 0 or self.timeout_ms <= 0 or self.model_enum_cap <= 0:
            raise ValueError("solver budgets must be positive")


_default: Optional[SolverConfig] = None


def get_config(cfg: Optional[SolverConfig] = None) -> SolverConfig:
    global _default
    if cfg is not None:
        return cfg
    if _default is None:
        _default = SolverConfig(backend=os.environ.get("BIRSYM_SOLVER", "brute"))
    return _default


def set_default_config(cfg: Optional[SolverConfig]):
    global _default
    _default = cfg


STATS: Counter = Counter()
_cache: Dict[tuple, object] = {}
_lock = threading.Lock()
_CACHE_MAX = 50_000


def _cached(key, fn):
    with _lock:
        if key in _cache:
            STATS["cache_hits"] += 1
            return _cache[key]
    out = fn()
    with _lock:
        if len(_cache) > _CACHE_MAX:
            _cache.clear()
        _cache[key] = out
    return out


def clear_cache():
    with _lock:
        _cache.clear()


def _cfg_key(cfg: SolverConfig):
    return (cfg.backend, cfg.brute_width_budget, cfg.command)


def negate(e: Expr) -> Expr:
    if isinstance(e, Const):
        return Const(Word(1, 1 - e.value.value))
    return UnOp("not", e)


def _syms(conjuncts) -> frozenset:
    out = frozenset()
    for c in conjuncts:
        out |= symbols(c)
    return out


def _holds(model, conjuncts) -> bool:
    from ..sym import interp_expr

    return all(interp_expr(model, c).value for c in conjuncts)


def _random_value(ty, rng: random.Random):
    if isinstance(ty, MemTy):
        cells = [(rng.getrandbits(ty.addr_width), rng.getrandbits(ty.val_width)) for _ in range(rng.randint(0, 3))]
        return MemoryValue.filled(ty, rng.getrandbits(ty.val_width), cells)
    return Word(ty.width, rng.getrandbits(ty.width))


def _zero(ty, rng=None):
    if isinstance(ty, MemTy):
        return MemoryValue.filled(ty, 0)
    return Word(ty.width, 0)


# -- brute backend --------------------------------------------------------------------


def _complete(norm: Normalized, prob: Optional[brute.Problem], words: Dict[Sym, int], want, fill, rng):
    model: Dict[Sym, object] = {}
    if prob is not None:
        for s, v in words.items():
            if not s.name.startswith("cell!"):
                model[s] = Word(s.ty.width, v)
        model.update(brute.memories(prob, words, fill_rng=rng))
    for s, expr in reversed(norm.bindings):
        for x in symbols(expr):
            if x not in model:
                model[x] = fill(x.ty, rng)
        from ..sym import interp_expr

        model[s] = interp_expr(model, expr)
    out = {}
    for s in want:
        out[s] = model[s] if s in model else fill(s.ty, rng)
    return out


def _brute_sat(conjuncts, cfg: SolverConfig) -> SolverResult:
    norm = normalize(conjuncts)
    if norm.unsat:
        return Unsat()
    want = _syms(conjuncts)
    if not norm.conjuncts:
        return Sat(_complete(norm, None, {}, want, _zero, None))
    try:
        prob = brute.prepare(norm.conjuncts)
    except brute.Unsupported as exc:
        return Unknown(str(exc))
    if prob.bits <= cfg.brute_width_budget:
        row = brute.exhaustive(prob, "first")
        if row is None:
            return Unsat()
        return Sat(_complete(norm, prob, row, want, _zero, None))
    rows = brute.probe(prob, np.random.default_rng(0), rounds=cfg.probe_rounds)
    if rows is None:
        return Unknown(f"{prob.bits} free bits exceed the brute-force budget of {cfg.brute_width_budget}")
    return Sat(_complete(norm, prob, brute.rows_to_model(prob, rows, 0), want, _zero, None))


def _leaf_values(e: Expr, limit: int = 256):
    """A finite superset of the values of ``e`` when it is built from constants by ite
    and word operators, else None."""
    if isinstance(e, Const):
        return {e.value.value}
    if isinstance(e, Ite):
        a = _leaf_values(e.then, limit)
        b = _leaf_values(e.orelse, limit)
        return None if a is None or b is None else a | b
    if isinstance(e, UnOp):
        a = _leaf_values(e.arg, limit)
        return None if a is None else {x ^ mask(e.width) for x in a}
    if isinstance(e, BinOp) and e.ty != BOOL:
        a = _leaf_values(e.lhs, limit)
        b = _leaf_values(e.rhs, limit) if a is not None else None
        if a is None or b is None or len(a) * len(b) > limit:
            return None
        return {apply_binop(e.op, e.width, x, y) for x in a for y in b}
    return None


def _brute_enumerate(conjuncts, v: Expr, cap: int, cfg: SolverConfig):
    norm = normalize(conjuncts)
    if norm.unsat:
        return set()
    target = apply_bindings(v, norm.bindings)
    if isinstance(target, Const):
        res = _brute_sat(conjuncts, cfg)
        if isinstance(res, Unknown):
            raise SolverUnknown(res.reason)
        return {target.value.value} if isinstance(res, Sat) else set()
    try:
        prob = brute.prepare(norm.conjuncts, [target])
    except brute.Unsupported as exc:
        raise SolverUnknown(str(exc)) from None
    if prob.bits <= cfg.brute_width_budget:
        vals = brute.exhaustive(prob, "values", cap)
        if len(vals) > cap:
            raise CapExceeded(cap)
        return vals
    cands = _leaf_values(target)
    if cands is None:
        raise SolverUnknown(f"{prob.bits} free bits exceed the brute-force budget")
    out = set()
    for c in sorted(cands):
        res = check_sat(list(conjuncts) + [BinOp("eq", v, Const(Word(v.width, c)))], cfg)
        if isinstance(res, Unknown):
            raise SolverUnknown(res.reason)
        if isinstance(res, Sat):
            out.add(c)
    if len(out) > cap:
        raise CapExceeded(cap)
    return out


# -- external backend ----------------------------------------------------------------------


def _session(cfg: SolverConfig):
    return smtlib.Session(list(cfg.command) if cfg.command else None, cfg.timeout_ms)


def _ext_sat(conjuncts, cfg: SolverConfig) -> SolverResult:
    want = sorted(_syms(conjuncts), key=lambda s: s.name)
    try:
        with _session(cfg) as sess:
            sess.send(*smtlib.script(list(conjuncts), want))
            ans = sess.check()
            if ans == "unsat":
                return Unsat()
            if ans == "unknown":
                return Unknown("solver said unknown")
            model = {}
            if want:
                vals = sess.values([smtlib.name(s) for s in want])
                for s, t in zip(want, vals):
                    model[s] = smtlib.model_value(t, s.ty)
            return Sat(model)
    except TimeoutError:
        return Unknown("solver timeout")
    except smtlib.SmtError as exc:
        return Unknown(str(exc))


def _ext_enumerate(conjuncts, v: Expr, cap: int, cfg: SolverConfig):
    syms = _syms(list(conjuncts) + [v])
    out = set()
    try:
        with _session(cfg) as sess:
            sess.send(*smtlib.script(list(conjuncts), syms))
            term = smtlib.encode(v)
            while True:
                ans = sess.check()
                if ans == "unsat":
                    return out
                if ans == "unknown":
                    raise SolverUnknown("solver said unknown")
                val = smtlib.model_value(sess.values([term])[0], v.ty).value
                out.add(val)
                if len(out) > cap:
                    raise CapExceeded(cap)
                sess.send(f"(assert (not (= {term} {smtlib.literal(val, v.width)})))")
    except TimeoutError:
        raise SolverUnknown("solver timeout") from None
    except smtlib.SmtError as exc:
        raise SolverUnknown(str(exc)) from None


# -- public API --------------------------------------------------------------------------


def check_sat(conjuncts, cfg: Optional[SolverConfig] = None) -> SolverResult:
    """Decide the conjunction of width-1 expressions; Sat models are verified."""
    cfg = get_config(cfg)
    conjuncts = tuple(conjuncts)
    for c in conjuncts:
        if c.ty != BOOL:
            raise TypeError(f"formula conjunct of type {c.ty}")

    def run():
        STATS["queries"] += 1
        STATS[cfg.backend] += 1
        res = _brute_sat(conjuncts, cfg) if cfg.backend == "brute" else _ext_sat(conjuncts, cfg)
        if isinstance(res, Sat) and not _holds(res.model, conjuncts):
            return Unknown("model failed verification")
        return res

    return _cached(("sat", _cfg_key(cfg), conjuncts), run)


def check_valid(conjuncts, psi: Expr, cfg: Optional[SolverConfig] = None) -> bool:
    """Whether the conjunction implies ``psi``; raises SolverUnknown if undecided."""
    res = check_sat(list(conjuncts) + [negate(psi)], cfg)
    if isinstance(res, Unknown):
        raise SolverUnknown(res.reason)
    return isinstance(res, Unsat)


def enumerate_models(conjuncts, v: Expr, cap: Optional[int] = None, cfg: Optional[SolverConfig] = None) -> set:
    """The exact set of values of ``v`` over all models, as words."""
    cfg = get_config(cfg)
    cap = cap if cap is not None else cfg.model_enum_cap
    conjuncts = tuple(conjuncts)

    def run():
        STATS["queries"] += 1
        STATS[cfg.backend] += 1
        if cfg.backend == "brute":
            vals = _brute_enumerate(conjuncts, v, cap, cfg)
        else:
            vals = _ext_enumerate(conjuncts, v, cap, cfg)
        return frozenset(Word(v.width, x) for x in vals)

    key = ("enum", _cfg_key(cfg), conjuncts, v, cap)
    try:
        return set(_cached(key, run))
    except CapExceeded:
        raise


def sample_model(conjuncts, syms, rng: random.Random, cfg: Optional[SolverConfig] = None):
    """A random model of ``conjuncts`` whose domain is exactly ``syms``, or None."""
    cfg = get_config(cfg)
    conjuncts = list(conjuncts)
    want = set(syms) | _syms(conjuncts)
    norm = normalize(conjuncts)
    if norm.unsat:
        return None
    nprng = np.random.default_rng(rng.getrandbits(63))
    fill = _random_value
    model = None
    if not norm.conjuncts:
        model = _complete(norm, None, {}, want, fill, rng)
    else:
        try:
            prob = brute.prepare(norm.conjuncts)
        except brute.Unsupported:
            prob = None
        if prob is not None:
            if prob.bits <= cfg.brute_width_budget:
                rows = brute.exhaustive(prob, "all")
                if not rows:
                    return None
                total = sum(len(next(iter(r.values()))) if r else 0 for r in rows)
                pick = rng.randrange(total) if total else 0
                for r in rows:
                    n = len(next(iter(r.values()))) if r else 0
                    if pick < n:
                        words = brute.rows_to_model(prob, r, pick)
                        break
                    pick -= n
                else:
                    words = {}
                model = _complete(norm, prob, words, want, fill, rng)
            else:
                rows = brute.probe(prob, nprng, rounds=cfg.probe_rounds)
                if rows is not None:
                    n = len(next(iter(rows.values())))
                    model = _complete(norm, prob, brute.rows_to_model(prob, rows, rng.randrange(n)), want, fill, rng)
    if model is not None and _holds(model, conjuncts):
        return {s: model[s] for s in syms}
    model = _pinned_model(conjuncts, sorted(want, key=lambda s: s.name), rng, cfg)
    if model is None:
        return None
    for s in syms:
        if s not in model:
            model[s] = _random_value(s.ty, rng)
    return {s: model[s] for s in syms}


def _pinned_model(conjuncts, want, rng, cfg):
    words = [s for s in want if not isinstance(s.ty, MemTy)]
    pins = list(words)
    rng.shuffle(pins)
    while True:
        extra = [BinOp("eq", s, Const(_random_value(s.ty, rng))) for s in pins]
        res = check_sat(conjuncts + extra, cfg)
        if isinstance(res, Sat):
            return dict(res.model)
        if not pins:
            if isinstance(res, Unsat):
                return None
            raise SolverUnknown(res.reason)
        pins = pins[: len(pins) // 2]
