import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from birsym import solver
from birsym.expr import BinOp, Const, Ite, Load, Store, Sym, UnOp
from birsym.solver import (
    CapExceeded,
    Sat,
    SolverConfig,
    SolverUnknown,
    Unknown,
    Unsat,
    check_sat,
    check_valid,
    enumerate_models,
    sample_model,
)
from birsym.solver.normalize import normalize
from birsym.sym import interp_expr
from birsym.values import MemTy, Word, WordTy
from conftest import needs_smt
from oracle import SMALL_SYMS, TWENTY_BIT_SYMS, free_bits, rand_formula, ref_sat, ref_values
from randgen import rand_expr

BRUTE = SolverConfig(backend="brute")
EXTERNAL = SolverConfig(backend="external")
W8, W32 = WordTy(8), WordTy(32)
a, b = Sym("a", W8), Sym("b", W8)
x, y, z = Sym("x", W32), Sym("y", W32), Sym("z", W32)


def c8(v):
    return Const(Word(8, v))


def c32(v):
    return Const(Word(32, v))


def _holds(model, conjuncts):
    return all(interp_expr(model, c).value for c in conjuncts)


@given(st.integers(0, 10**9))
@settings(max_examples=300)
def test_brute_agrees_with_reference_enumeration(seed):
    rng = random.Random(seed)
    conj = rand_formula(rng, SMALL_SYMS)
    expected = ref_sat(conj)
    res = check_sat(conj, BRUTE)
    if expected is None:
        assert isinstance(res, Unsat)
    else:
        assert isinstance(res, Sat)
        assert _holds(res.model, conj)


@given(st.integers(0, 10**9))
@settings(max_examples=150)
def test_brute_enumeration_agrees_with_reference(seed):
    rng = random.Random(seed)
    conj = rand_formula(rng, SMALL_SYMS, max_conjuncts=2)
    v = rand_expr(rng, W8, SMALL_SYMS, 2)
    want = ref_values(conj, v)
    if len(want) > 256:
        return
    got = enumerate_models(conj, v, cap=256, cfg=BRUTE)
    assert {w.value for w in got} == want


@needs_smt
@given(st.integers(0, 10**9))
@settings(max_examples=60)
def test_external_agrees_with_reference_enumeration(seed):
    rng = random.Random(seed)
    conj = rand_formula(rng, SMALL_SYMS)
    expected = ref_sat(conj)
    res = check_sat(conj, EXTERNAL)
    assert isinstance(res, Unsat) == (expected is None)
    if isinstance(res, Sat):
        assert _holds(res.model, conj)


@needs_smt
@pytest.mark.parametrize("seed", range(40))
def test_backends_agree_on_twenty_bit_formulas(seed):
    rng = random.Random(seed)
    while True:
        conj = rand_formula(rng, TWENTY_BIT_SYMS)
        if free_bits(conj) <= 20:
            break
    r1, r2 = check_sat(conj, BRUTE), check_sat(conj, EXTERNAL)
    assert not isinstance(r1, Unknown) and not isinstance(r2, Unknown)
    assert type(r1) is type(r2)


@needs_smt
@pytest.mark.parametrize("op", ["udiv", "umod", "shl", "lshr", "ashr", "slt", "sle"])
def test_smt_encoding_matches_evaluation_for_every_operand(op):
    # the encoded operator agrees with evaluation, including the corner cases
    from birsym.expr import apply_binop

    for av in (0, 1, 7, 127, 128, 200, 255):
        for bv in (0, 1, 3, 7, 8, 9, 128, 255):
            want = apply_binop(op, 8, av, bv)
            # build over symbols so nothing is folded away before reaching the solver
            sa, sb = Sym("p", W8), Sym("q", W8)
            lhs = BinOp(op, sa, sb)
            width = lhs.width
            conj = [BinOp("eq", sa, c8(av)), BinOp("eq", sb, c8(bv)), BinOp("eq", lhs, Const(Word(width, want)))]
            assert isinstance(check_sat(conj, EXTERNAL), Sat), (op, av, bv)


def test_division_by_zero_is_all_ones():
    assert check_valid([BinOp("eq", b, c8(0))], BinOp("eq", BinOp("umod", a, b), c8(255)), BRUTE)
    assert check_valid([BinOp("eq", b, c8(0))], BinOp("eq", BinOp("udiv", a, b), c8(255)), BRUTE)


def test_models_are_total_over_the_formula_symbols():
    conj = [BinOp("ult", a, b), BinOp("eq", BinOp("add", a, c8(1)), b)]
    res = check_sat(conj, BRUTE)
    assert isinstance(res, Sat)
    assert set(res.model) == {a, b}
    assert _holds(res.model, conj)


def test_unsat_beyond_budget_is_unknown():
    # three 32-bit symbols with a non-linear constraint; nothing to normalize away
    conj = [
        BinOp("eq", BinOp("mul", x, y), c32(7)),
        BinOp("eq", BinOp("and", BinOp("mul", y, z), c32(1)), c32(0)),
        BinOp("eq", BinOp("and", z, c32(1)), c32(1)),
        BinOp("eq", BinOp("and", y, c32(1)), c32(0)),
    ]
    res = check_sat(conj, BRUTE)
    assert isinstance(res, Unknown)
    with pytest.raises(SolverUnknown):
        check_valid(conj, BinOp("eq", x, c32(3)), BRUTE)
    # a goal that holds trivially needs no search
    assert check_valid(conj, BinOp("eq", x, x), BRUTE)


def test_wrapped_intervals_decide_32_bit_counter_bounds():
    base, alpha = Sym("base", W32), Sym("alpha", W32)
    d = BinOp("sub", alpha, base)
    path = [BinOp("ule", c32(2), d), BinOp("ule", d, c32(4))]
    assert check_valid(path, BinOp("ule", d, c32(10)), BRUTE)
    assert not check_valid(path, BinOp("ule", d, c32(3)), BRUTE)
    assert isinstance(check_sat(path + [BinOp("ult", d, c32(2))], BRUTE), Unsat)


def test_normalizer_eliminates_definitions():
    n = normalize([BinOp("eq", x, BinOp("add", y, c32(1))), BinOp("eq", y, c32(5))])
    assert not n.unsat
    assert n.conjuncts == []


def test_memory_read_over_write():
    m = Sym("m", MemTy(32, 32))
    stored = Store(m, x, c32(9))
    assert check_valid([], BinOp("eq", Load(stored, x), c32(9)), BRUTE)
    assert check_valid([BinOp("neq", x, y)], BinOp("eq", Load(stored, y), Load(m, y)), BRUTE)
    small = Sym("m8", MemTy(8, 8))
    assert not check_valid([], BinOp("eq", Load(Store(small, a, c8(9)), b), Load(small, b)), BRUTE)


def test_memory_equality_between_overlays():
    m = Sym("m", MemTy(8, 8))
    one = Store(Store(m, a, c8(1)), b, c8(2))
    two = Store(Store(m, b, c8(2)), a, c8(1))
    assert check_valid([BinOp("neq", a, b)], BinOp("eq", one, two), BRUTE)
    assert not check_valid([], BinOp("eq", one, two), BRUTE)


def test_enumeration_cap():
    with pytest.raises(CapExceeded):
        enumerate_models([], a, cap=10, cfg=BRUTE)
    vals = enumerate_models([BinOp("ult", a, c8(3))], a, cfg=BRUTE)
    assert {v.value for v in vals} == {0, 1, 2}


def test_enumeration_over_wide_ite_targets():
    # 64 free bits, but the target can only take finitely many values
    e = BinOp("add", c32(18), Ite(BinOp("eq", BinOp("and", x, c32(1)), c32(0)), c32(0), c32(1)))
    assert {v.value for v in enumerate_models([BinOp("ult", y, x)], e, cfg=BRUTE)} == {18, 19}
    flipped = BinOp("add", c32(5), UnOp("not", Ite(BinOp("ult", x, y), c32(0), c32(1))))
    assert {v.value for v in enumerate_models([BinOp("ult", y, x)], flipped, cfg=BRUTE)} == {3}


def test_constant_target_on_unsat_path_has_no_values():
    assert enumerate_models([BinOp("ult", a, c8(0))], c8(4), cfg=BRUTE) == set()


def test_sample_model_respects_the_domain():
    rng = random.Random(3)
    conj = [BinOp("ult", a, c8(10))]
    for _ in range(20):
        h = sample_model(conj, {a, b}, rng, BRUTE)
        assert set(h) == {a, b}
        assert h[a].value < 10
    assert sample_model([BinOp("ult", a, c8(0))], {a}, rng, BRUTE) is None


def test_bad_config():
    with pytest.raises(ValueError):
        SolverConfig(backend="magic")
    with pytest.raises(ValueError):
        SolverConfig(brute_width_budget=0)


def test_non_boolean_conjunct_rejected():
    with pytest.raises(TypeError):
        check_sat([a], BRUTE)


def test_results_are_cached():
    solver.clear_cache()
    before = solver.STATS["cache_hits"]
    conj = [BinOp("ult", a, c8(77))]
    check_sat(conj, BRUTE)
    check_sat(conj, BRUTE)
    assert solver.STATS["cache_hits"] == before + 1
