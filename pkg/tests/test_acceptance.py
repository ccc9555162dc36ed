"""End-to-end acceptance checks.

Each test prints one ``criterion N: PASS|FAIL ...`` line to the terminal, so
``pytest tests/test_acceptance.py`` doubles as a report.
"""

import json
import random
import time
from collections import Counter

import pytest

from birsym.derivations import load_program, modexp_derivation, modexp_entry_state, modexp_expected_final
from birsym.engine import BudgetExhausted, ExploreOptions, explore
from birsym.expr import BinOp, Const, Store, Sym
from birsym.kernel import (
    Branches,
    Kernel,
    NeitherInfeasible,
    NoSuchTarget,
    NotInfeasible,
    NotSuperset,
    NotWeaker,
    PcNotInL,
    ReplayMismatch,
    RuleError,
    SideConditionFailed,
    SourceNotATarget,
    SubstOfFreeSymbol,
    SymbolNotFresh,
    replay_certificate,
)
from birsym.program import eval_expr
from birsym.sampling import check_structure
from birsym.solver import CapExceeded, Sat, SolverConfig, SolverUnknown, Unknown, check_sat, enumerate_models
from birsym.sym import SymStore, initial_state, interp_expr, interp_store, sym_eval
from birsym.text import parse_program
from birsym.timing import analyze_wcet
from birsym.values import BOOL, Word, WordTy
from conftest import external_solver_available
from oracle import TWENTY_BIT_SYMS, free_bits, rand_formula
from randgen import WIDE_TYPING, rand_expr, rand_program, rand_value, sym_leaves, var_leaves

TABLE = {
    "9nopsubadd": (9, 9),
    "cmpbeq": (2, 4),
    "ld": (2, 2),
    "st": (2, 2),
    "ldnop": (3, 3),
    "ldldbr8": (57, 57),
}

W8, W32 = WordTy(8), WordTy(32)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'} {detail}")

    return emit


@pytest.fixture(scope="module")
def wcet_results():
    out = {}
    for name in TABLE:
        t0 = time.monotonic()
        res = analyze_wcet(load_program(name), cfg=SolverConfig(backend="brute"))
        out[name] = (res, time.monotonic() - t0)
    return out


@pytest.fixture(scope="module")
def modexp():
    return modexp_derivation(SolverConfig(backend="brute"))


# -- 1 ---------------------------------------------------------------------------------------


def test_criterion_1_tiny_benchmarks(wcet_results, report):
    bad = []
    parts = []
    for name, want in TABLE.items():
        res, secs = wcet_results[name]
        got = (res.interval.lo, res.interval.hi)
        parts.append(f"{name}=[{got[0]},{got[1]}]")
        if got != want or secs >= 10:
            bad.append(f"{name}: got {got} in {secs:.1f}s, want {want} under 10s")
    report(1, not bad, " ".join(parts) + ("" if not bad else " | " + "; ".join(bad)))
    assert not bad


# -- 2 ---------------------------------------------------------------------------------------


def test_criterion_2_modexp(modexp, report):
    p = modexp.kernel.program
    ps = modexp.structure
    problems = []
    if len(ps.targets) != 1:
        problems.append(f"{len(ps.targets)} targets")
    else:
        (t,) = ps.targets
        s0 = modexp_entry_state(p)
        env = t.env
        a_sp, a_r3 = Sym("SP", W32), Sym("R3", W32)
        if t.pc != 15:
            problems.append(f"target at {t.pc}")
        if env[env.lookup("SP")] != a_sp or env[env.lookup("R3")] != a_r3:
            problems.append("SP or R3 changed")
        for r in ("R0", "R1"):
            if env[env.lookup(r)] not in ps.free:
                problems.append(f"{r} is not a fresh symbol")
        mem = env[env.lookup("M")]
        if not (isinstance(mem, Store) and isinstance(mem.mem, Store) and mem.mem.mem == Sym("M", mem.ty)):
            problems.append("memory is not a two-overlay store")
        elif mem.mem.addr != a_sp or mem.addr != BinOp("sub", a_sp, Const(Word(32, 4))):
            problems.append("overlays at the wrong addresses")
        if tuple(t.path) != tuple(s0.path):
            problems.append("path condition differs from the entry one")
        if t != modexp_expected_final(p):
            problems.append("not structurally equal to the expected state")
    cert = modexp.kernel.emit_certificate(ps)
    try:
        replays = replay_certificate(cert, p) == ps
    except (ReplayMismatch, RuleError) as exc:
        replays = False
        problems.append(f"replay failed: {exc}")
    if not replays and not problems:
        problems.append("replay produced another structure")
    report(2, not problems, "single target at 15, certificate replays" if not problems else "; ".join(problems))
    assert not problems


# -- 3 ---------------------------------------------------------------------------------------


def test_criterion_3_symbolic_evaluation_fuzz(report):
    syms = sym_leaves(WIDE_TYPING)
    vleaves = var_leaves(WIDE_TYPING)
    widths = [WordTy(1), WordTy(8), WordTy(32)]
    per_width = Counter()
    failures = []
    rng = random.Random(20261019)
    n = 10_002
    for i in range(n):
        env = SymStore({v: rand_expr(rng, v.ty, syms, depth=2) for vs in vleaves.values() for v in vs})
        h = {s: rand_value(rng, s.ty) for pool in syms.values() for s in pool}
        ty = widths[i % 3]
        e = rand_expr(rng, ty, vleaves, depth=3)
        per_width[ty.width] += 1
        if interp_expr(h, sym_eval(e, env)) != eval_expr(e, interp_store(h, env)):
            failures.append(i)
    detail = f"{n} pairs (w1={per_width[1]}, w8={per_width[8]}, w32={per_width[32]}), {len(failures)} failures"
    report(3, not failures, detail)
    assert not failures


# -- 4 ---------------------------------------------------------------------------------------


def _random_case(seed):
    """A random program, a source state and options for the engine, all from ``seed``."""
    rng = random.Random(seed)
    p = rand_program(rng)
    s0 = initial_state(p)
    if rng.random() < 0.4:
        s0 = s0.with_path((sym_eval(rand_expr(rng, BOOL, var_leaves(p.typing()), 2), s0.env),))
    labels = set(p.stmts)
    if rng.random() < 0.3:
        labels = {l for l in labels if l == 1 or rng.random() < 0.7}
    opts = ExploreOptions(
        merge_policy=rng.choice(["none", "join", "aggressive"]),
        forget_vars=tuple(v for v in ("A", "G", "F") if rng.random() < 0.2),
        simplify_memory=rng.random() < 0.7,
        max_paths=64,
        max_steps=500,
    )
    return p, s0, labels, opts


def _widths(ty):
    return (ty.width,) if isinstance(ty, WordTy) else (ty.addr_width, ty.val_width)


def test_criterion_4_differential_soundness(report):
    want = 1000
    stats = Counter()
    violations = []
    seed = 0
    while stats["checked"] < want and seed < 2 * want:
        p, s0, labels, opts = _random_case(seed)
        assert len(p.stmts) <= 20 and all(max(_widths(t)) <= 8 for t in p.typing().values())
        try:
            ps = explore(p, s0, labels, opts).structure
            rep = check_structure(ps, p, samples=8, seed=seed)
        except BudgetExhausted:
            stats["budget"] += 1
        except SolverUnknown:
            stats["unknown"] += 1
        else:
            if rep.vacuous:
                stats["vacuous"] += 1
            else:
                stats["checked"] += 1
                stats["runs"] += rep.runs
                if rep.violations:
                    violations.append((seed, rep.violations[0]))
        seed += 1
    ok = stats["checked"] >= want and not violations
    detail = (
        f"{stats['checked']} programs checked ({stats['runs']} concrete runs), {len(violations)} violations; "
        f"skipped: {stats['vacuous']} unsatisfiable sources, {stats['budget']} over budget, "
        f"{stats['unknown']} undecided queries"
    )
    report(4, ok, detail)
    assert not violations, violations[:3]
    assert stats["checked"] >= want


# -- 5 ---------------------------------------------------------------------------------------

SMALL = parse_program(
    """program small
entry 1
exit 5
var A : w8
var B : w8

1: assert A < 200
2: cjmp A == 0 -> 4, 3
3: B := A + 1
4: A := 0
"""
)


def _c8(v):
    return Const(Word(8, v))


def _alpha(name="A"):
    return Sym(name, W8)


def _with_free(k):
    ps = k.symbstep(initial_state(SMALL, 3), {3})
    (t,) = ps.targets
    f = Sym("f", W8)
    return k.simplify(ps, t, t.env.lookup("B"), f, f, BinOp("add", _alpha(), _c8(1))), f


def _neg_symbstep(k):
    k.symbstep(initial_state(SMALL), {2})


def _neg_case(k):
    ps = k.symbstep(initial_state(SMALL, 4), {4})
    k.case(ps, initial_state(SMALL, 9), BinOp("eq", _alpha(), _c8(1)))


def _neg_infeasible(k):
    ps = k.symbstep(initial_state(SMALL, 4), {4})
    k.infeasible(ps, ps.targets[0])


def _neg_rename(k):
    ps = k.symbstep(initial_state(SMALL, 3), {3})
    k.rename(ps, _alpha("A"), _alpha("B"))


def _neg_subst(k):
    ps, f = _with_free(k)
    k.subst(ps, f, _c8(0))


def _neg_simplify(k):
    ps = k.symbstep(initial_state(SMALL, 3), {3})
    (t,) = ps.targets
    f = Sym("f", W8)
    k.simplify(ps, t, t.env.lookup("B"), f, f, BinOp("add", _alpha(), _c8(2)))


def _neg_consequence(k):
    s = initial_state(SMALL, 4)
    ps = k.symbstep(s, {4})
    (t,) = ps.targets
    k.consequence(ps, s, t, t.with_path((BinOp("ult", _alpha(), _c8(3)),)))


def _neg_transfer(k):
    ps = k.symbstep(initial_state(SMALL, 4).with_path((BinOp("ult", _alpha(), _c8(9)),)), {4})
    k.transfer(ps, ps.targets[0], BinOp("ult", _alpha(), _c8(3)))


def _neg_sequence(k):
    a = k.symbstep(initial_state(SMALL, 4), {4})
    b = k.symbstep(initial_state(SMALL, 3), {3})
    k.sequence(a, b)


def _neg_widen(k):
    ps = k.symbstep(initial_state(SMALL, 4), {3, 4})
    k.widen(ps, {4})


def _neg_symbstep_n(k):
    k.symbstep_n(initial_state(SMALL), 2, {1, 2})


def _neg_inf_branch(k):
    k.inf_branch(initial_state(SMALL, 2))


NEGATIVE = [
    ("symbstep", _neg_symbstep, PcNotInL),
    ("case", _neg_case, NoSuchTarget),
    ("infeasible", _neg_infeasible, NotInfeasible),
    ("rename", _neg_rename, SymbolNotFresh),
    ("subst", _neg_subst, SubstOfFreeSymbol),
    ("simplify", _neg_simplify, SideConditionFailed),
    ("consequence", _neg_consequence, NotWeaker),
    ("transfer", _neg_transfer, SideConditionFailed),
    ("sequence", _neg_sequence, SourceNotATarget),
    ("widen", _neg_widen, NotSuperset),
    ("symbstep_n", _neg_symbstep_n, Branches),
    ("inf_branch", _neg_inf_branch, NeitherInfeasible),
]


def test_criterion_5_negative_suite(report):
    wrong = []
    for rule, attempt, expected in NEGATIVE:
        try:
            attempt(Kernel(SMALL))
        except expected:
            continue
        except Exception as exc:  # noqa: BLE001 - any other outcome is a failure
            wrong.append(f"{rule}: {type(exc).__name__}")
        else:
            wrong.append(f"{rule}: accepted")
    detail = f"{len(NEGATIVE) - len(wrong)}/{len(NEGATIVE)} crafted violations rejected with the documented error"
    report(5, not wrong, detail + ("" if not wrong else " | " + ", ".join(wrong)))
    assert not wrong


# -- 6 ---------------------------------------------------------------------------------------


def test_criterion_6_solver_backends_agree(report):
    if not external_solver_available():
        report(6, False, "no SMT-LIB solver on PATH, criterion not checked")
        pytest.skip("no SMT-LIB solver on PATH")
    brute, external = SolverConfig(backend="brute"), SolverConfig(backend="external")
    rng = random.Random(6)
    stats = Counter()
    disagreements = []
    while stats["formulas"] < 1000:
        conj = rand_formula(rng, TWENTY_BIT_SYMS)
        v = rand_expr(rng, W8, TWENTY_BIT_SYMS, 2)
        if free_bits(conj + [v]) > 20:
            continue
        stats["formulas"] += 1
        r1, r2 = check_sat(conj, brute), check_sat(conj, external)
        if isinstance(r1, Unknown) or isinstance(r2, Unknown) or type(r1) is not type(r2):
            disagreements.append((conj, "sat", r1, r2))
            continue
        stats["sat" if isinstance(r1, Sat) else "unsat"] += 1
        try:
            e1 = enumerate_models(conj, v, cap=256, cfg=brute)
            e2 = enumerate_models(conj, v, cap=256, cfg=external)
        except (CapExceeded, SolverUnknown) as exc:
            disagreements.append((conj, "enum", exc, None))
            continue
        if e1 != e2:
            disagreements.append((conj, "enum", sorted(e1), sorted(e2)))
        stats["values"] += len(e1)
    detail = (
        f"{stats['formulas']} formulas ({stats['sat']} sat, {stats['unsat']} unsat, "
        f"{stats['values']} enumerated values), {len(disagreements)} disagreements"
    )
    report(6, not disagreements, detail)
    assert not disagreements, disagreements[:3]


# -- 7 ---------------------------------------------------------------------------------------

STATE_KEYS = ("state", "target", "source", "new_target")


def state_spans(cert: str):
    """Character ranges of every symbolic state recorded in the certificate."""
    spans = []
    offset = 0
    for line in cert.split("\n"):
        if line.startswith('{"args"'):
            args = json.loads(line)["args"]
            for key in STATE_KEYS:
                if isinstance(args.get(key), dict):
                    frag = json.dumps(args[key], sort_keys=True, separators=(",", ":"))
                    at = line.find(frag)
                    assert at >= 0, "state not found verbatim in its record"
                    spans.append((offset + at, offset + at + len(frag)))
        offset += len(line) + 1
    return spans


def _mutants(cert, rng, limit):
    positions = [i for a, b in state_spans(cert) for i in range(a, b)]
    if len(positions) > limit:
        positions = sorted(rng.sample(positions, limit))
    printable = [chr(c) for c in range(32, 127)]
    for i in positions:
        new = rng.choice([c for c in printable if c != cert[i]])
        yield i, cert[:i] + new + cert[i + 1 :]


def test_criterion_7_certificate_integrity(wcet_results, modexp, report):
    certs = {name: (res.report.certificate, res.program) for name, (res, _) in wcet_results.items()}
    certs["modexp"] = (modexp.kernel.emit_certificate(modexp.structure), modexp.kernel.program)
    rng = random.Random(7)
    replay_failures = []
    undetected = []
    mutated = 0
    for name, (cert, program) in certs.items():
        try:
            replay_certificate(cert, program)
        except Exception as exc:  # noqa: BLE001
            replay_failures.append(f"{name}: {type(exc).__name__}")
            continue
        for pos, bad in _mutants(cert, rng, limit=150):
            mutated += 1
            try:
                replay_certificate(bad, program)
            except (ReplayMismatch, RuleError):
                continue
            undetected.append((name, pos))
    ok = not replay_failures and not undetected and mutated > 0
    detail = (
        f"{len(certs) - len(replay_failures)}/{len(certs)} certificates replay; "
        f"{mutated - len(undetected)}/{mutated} single-byte state mutations detected"
    )
    report(7, ok, detail)
    assert not replay_failures and not undetected, (replay_failures, undetected[:5])


# -- 8 ---------------------------------------------------------------------------------------


def test_criterion_8_side_channel(report):
    bal = analyze_wcet(load_program("branch_balanced")).interval
    unbal = analyze_wcet(load_program("branch_unbalanced")).interval
    ok = bal.lo == bal.hi and unbal.lo < unbal.hi
    report(8, ok, f"balanced [{bal.lo},{bal.hi}], unbalanced [{unbal.lo},{unbal.hi}]")
    assert ok
