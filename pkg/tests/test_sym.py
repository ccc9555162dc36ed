import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birsym.expr import BinOp, Const, Sym, Var, apply_binop
from birsym.program import Assert, Assign, CJmp, ErrorState, Jmp, Program, State, eval_expr, step
from birsym.sym import (
    SymError,
    SymState,
    SymStore,
    concretize,
    initial_state,
    interp_expr,
    interp_store,
    loose_matches,
    matches,
    sstep,
    sym_eval,
)
from birsym.values import BOOL, MemoryValue, MemTy, Word, WordTy, mask
from randgen import SMALL_TYPING, WIDE_TYPING, rand_expr, rand_program, rand_value, sym_leaves, var_leaves

W8 = WordTy(8)


def _sym_store(rng, typing, syms):
    """Each variable maps to a random symbolic expression over ``syms``."""
    return SymStore({Var(n, t): rand_expr(rng, t, syms, depth=2) for n, t in typing.items()})


def _interpretation(rng, syms):
    return {s: rand_value(rng, s.ty) for pool in syms.values() for s in pool}


@given(st.randoms(use_true_random=False))
@settings(max_examples=300)
def test_symbolic_evaluation_commutes_with_interpretation(rng):
    syms = sym_leaves(WIDE_TYPING)
    env = _sym_store(rng, WIDE_TYPING, syms)
    h = _interpretation(rng, syms)
    ty = rng.choice(sorted(set(WIDE_TYPING.values()), key=str))
    e = rand_expr(rng, ty, var_leaves(WIDE_TYPING), depth=3)
    assert interp_expr(h, sym_eval(e, env)) == eval_expr(e, interp_store(h, env))


def _signed(v, w):
    return v - (1 << w) if v >> (w - 1) else v


def _oracle(op, w, a, b):
    """Straight from the usual machine semantics, written independently."""
    m = (1 << w) - 1
    table = {
        "add": lambda: (a + b) % (1 << w),
        "sub": lambda: (a - b) % (1 << w),
        "mul": lambda: (a * b) % (1 << w),
        "udiv": lambda: m if b == 0 else a // b,
        "umod": lambda: m if b == 0 else a - (a // b) * b,
        "and": lambda: a & b,
        "or": lambda: a | b,
        "xor": lambda: a ^ b,
        "shl": lambda: 0 if b >= w else (a * 2**b) % (1 << w),
        "lshr": lambda: 0 if b >= w else a // 2**b,
        "ashr": lambda: (_signed(a, w) // 2 ** min(b, w - 1)) % (1 << w),
        "eq": lambda: int(a == b),
        "neq": lambda: int(a != b),
        "ult": lambda: int(a < b),
        "ule": lambda: int(a <= b),
        "slt": lambda: int(_signed(a, w) < _signed(b, w)),
        "sle": lambda: int(_signed(a, w) <= _signed(b, w)),
    }
    return table[op]()


@pytest.mark.parametrize("w", [1, 8])
@pytest.mark.parametrize(
    "op", ["add", "sub", "mul", "udiv", "umod", "and", "or", "xor", "shl", "lshr", "ashr", "eq", "neq", "ult", "ule", "slt", "sle"]
)
def test_binop_matches_oracle_exhaustively(op, w):
    for a in range(1 << w):
        for b in range(1 << w):
            assert apply_binop(op, w, a, b) == _oracle(op, w, a, b), (op, a, b)


def test_known_values():
    assert apply_binop("ashr", 8, 0x80, 1) == 0xC0
    assert apply_binop("ashr", 8, 0x80, 200) == 0xFF
    assert apply_binop("udiv", 32, 5, 0) == mask(32)
    assert apply_binop("umod", 32, 5, 0) == mask(32)
    assert apply_binop("slt", 8, 0xFF, 0) == 1


def _prog(stmts, exits=(), typing=None):
    return Program(stmts, 1, 8, "t", frozenset(exits), {}, typing or {})


def test_assignment_step():
    a = Var("A", W8)
    p = _prog({1: Assign(a, BinOp("add", a, Const(Word(8, 1))))}, {2})
    s = initial_state(p)
    (t,) = sstep(p, s)
    assert t.pc == 2
    assert t.env[a] == BinOp("add", Sym("A", W8), Const(Word(8, 1)))
    assert t.path == ()


def test_assert_splits_into_running_and_error():
    a = Var("A", W8)
    cond = BinOp("ult", a, Const(Word(8, 10)))
    p = _prog({1: Assert(cond)}, {2})
    ok, bad = sstep(p, initial_state(p))
    assert isinstance(ok, SymState) and ok.pc == 2
    assert isinstance(bad, SymError)
    assert len(ok.path) == 1 and len(bad.path) == 1


def test_conditional_jump_successors_carry_the_condition():
    a = Var("A", W8)
    cond = BinOp("eq", a, Const(Word(8, 0)))
    p = _prog({1: CJmp(cond, Const(Word(8, 3)), Const(Word(8, 2))), 2: Jmp(Const(Word(8, 3)))}, {3})
    t, f = sstep(p, initial_state(p))
    assert (t.pc, f.pc) == (3, 2)
    assert t.path == (sym_eval(cond, initial_state(p).env),)


def test_computed_jump_enumerates_every_target():
    a = Var("A", W8)
    target = BinOp("add", Const(Word(8, 2)), BinOp("and", a, Const(Word(8, 3))))
    p = _prog({1: Jmp(target)}, {2, 3, 4, 5})
    succ = sstep(p, initial_state(p))
    assert [s.pc for s in succ] == [2, 3, 4, 5]


def test_computed_jump_respects_the_path():
    a = Var("A", W8)
    target = BinOp("add", Const(Word(8, 2)), BinOp("and", a, Const(Word(8, 3))))
    p = _prog({1: Jmp(target)}, {2, 3, 4, 5})
    s = initial_state(p)
    s = s.with_path((BinOp("ult", Sym("A", W8), Const(Word(8, 2))),))
    assert [t.pc for t in sstep(p, s)] == [2, 3]


def test_missing_label_steps_to_error():
    a = Var("A", W8)
    p = _prog({1: Jmp(Const(Word(8, 9)))}, typing={"A": W8})
    (t,) = sstep(p, SymState(5, initial_state(p).env))
    assert isinstance(t, SymError)
    assert isinstance(step(p, State(5, {a: Word(8, 0)})), ErrorState)


@given(st.integers(0, 10**9))
@settings(max_examples=150)
def test_symbolic_step_covers_the_concrete_step(seed):
    rng = random.Random(seed)
    p = rand_program(rng, max_stmts=8)
    s = initial_state(p, rng.choice(sorted(p.stmts)))
    h = {x: rand_value(rng, x.ty) for x in s.env.values()}
    c = concretize(s, h)
    nxt = step(p, c)
    succ = sstep(p, s)
    assert sum(matches(t, h, nxt) for t in succ) == 1


def test_loose_matching_extends_the_interpretation():
    a = Var("A", W8)
    alpha, fresh = Sym("A", W8), Sym("f", W8)
    env = SymStore({a: fresh})
    t = SymState(2, env, (BinOp("ult", fresh, Const(Word(8, 5))),))
    h = {alpha: Word(8, 0)}
    assert loose_matches(t, h, State(2, {a: Word(8, 4)}))
    assert not loose_matches(t, h, State(2, {a: Word(8, 5)}))
    assert not matches(t, h, State(2, {a: Word(8, 4)}))


def test_memory_values_are_extensional():
    ty = MemTy(8, 8)
    a = MemoryValue.filled(ty, 0).store(3, 7).store(3, 0)
    assert a == MemoryValue.filled(ty, 0)
    assert MemoryValue.filled(ty, 5, [(1, 5)]) == MemoryValue.filled(ty, 5)


def test_initial_state_uses_variable_names():
    p = _prog({1: Assign(Var("A", W8), Const(Word(8, 0)))}, {2}, dict(SMALL_TYPING))
    s = initial_state(p)
    assert all(e == Sym(v.name, v.ty) for v, e in s.env.items())
    assert s.path == ()
    assert s.env[Var("F", BOOL)] == Sym("F", BOOL)
