"""Hand-scripted derivations driving the kernel rule by rule.

:func:`modexp_derivation` analyses the bundled ``modexp`` program in three
parts: the function entry up to the loop body, one generic loop iteration
that is instantiated eight times, and the loop exit through the epilogue.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from typing import Dict, Optional

from .engine import Engine
from .expr import BinOp, Const, Store, Sym
from .kernel import Kernel, ProgressStructure
from .program import Program
from .sym import SymState, initial_state, sym_eval
from .text import parse_expr, parse_program
from .values import BOOL, MemTy, Word, WordTy

W32 = WordTy(32)
MEM = MemTy(32, 32)
STACK_PRE = "0x1000 <= SP - 4 & SP - 4 <= 0x1500 - 8"


def bundled_programs() -> list:
    root = resources.files("birsym").joinpath("programs")
    return sorted(f.name[: -len(".bir")] for f in root.iterdir() if f.name.endswith(".bir"))


def load_program(name: str) -> Program:
    text = resources.files("birsym").joinpath("programs", f"{name}.bir").read_text()
    return parse_program(text)


def _w(v: int) -> Const:
    return Const(Word(32, v))


@dataclass
class Derivation:
    kernel: Kernel
    structure: ProgressStructure
    parts: Dict[str, ProgressStructure] = field(default_factory=dict)


def modexp_entry_state(p: Program) -> SymState:
    s = initial_state(p)
    pre = parse_expr(STACK_PRE, p.typing(), expected=BOOL)
    return s.with_path((sym_eval(pre, s.env),))


def modexp_expected_final(p: Program) -> SymState:
    """The single exit state: only the two stack words differ from the entry state."""
    s0 = modexp_entry_state(p)
    env = s0.env
    sp, r3, m = Sym("SP", W32), Sym("R3", W32), Sym("M", MEM)
    a, b = Sym("a", W32), Sym("b", W32)
    mem = Store(Store(m, sp, r3), BinOp("sub", sp, _w(4)), a)
    env = env.set(env.lookup("R0"), a).set(env.lookup("R1"), b).set(env.lookup("M"), mem)
    return SymState(15, env, s0.path)


def modexp_derivation(cfg=None, program: Optional[Program] = None) -> Derivation:
    p = program or load_program("modexp")
    k = Kernel(p, cfg)
    eng = Engine(k)
    s0 = modexp_entry_state(p)
    phi0 = s0.path
    lk = s0.env.lookup
    SP, R0, R1, R3, M = (lk(n) for n in ("SP", "R0", "R1", "R3", "M"))
    a_sp, a_r1, a_r2, a_r3, a_m = Sym("SP", W32), Sym("R1", W32), Sym("R2", W32), Sym("R3", W32), Sym("M", MEM)
    sp4 = BinOp("sub", a_sp, _w(4))
    frame = Store(a_m, a_sp, a_r3)

    # part 1: entry up to the loop body, the failing assertion and the loop exit pruned
    part1 = k.inf_branch(s0, range(1, 7))
    part1 = k.sequence(part1, k.symbstep_n(part1.targets[0], 4, range(1, 7)))
    part1 = k.sequence(part1, k.inf_branch(part1.targets[0], range(1, 7)))

    # part 2: one iteration from label 7 back to 6, with R3 and r generalized
    x1, x2 = Sym("x1", W32), Sym("x2", W32)
    xp, xpp = Sym("xp", W32), Sym("xpp", W32)
    body_src = SymState(7, s0.env.set(SP, sp4).set(R3, x2).set(M, Store(frame, sp4, x1)), phi0)
    body = k.symbstep(body_src, range(7, 12))
    body = k.sequence(body, k.symbstep(body.targets[0], range(7, 12)))
    at9 = next(t for t in body.targets if t.pc == 9)
    at10 = next(t for t in body.targets if t.pc == 10)
    step9 = k.symbstep(at9, range(7, 12))
    body = k.sequence(body, step9)
    mult = step9.targets[0]
    # the product replaces r, so the old store at SP - 4 goes away; the product itself is abstracted
    merged_mem = Store(frame, sp4, xp)
    product = BinOp("umod", BinOp("mul", x1, a_r1), a_r2)
    body = k.simplify(body, mult, M, merged_mem, xp, product)
    mult = SymState(10, mult.env.set(M, merged_mem), mult.path + (BinOp("eq", xp, product),))
    body, _ = eng.drop_conjuncts(body, mult, phi0)
    body = k.simplify(body, at10, M, merged_mem, xp, x1)
    skip = SymState(10, at10.env.set(M, merged_mem), at10.path + (BinOp("eq", xp, x1),))
    body, joined = eng.drop_conjuncts(body, skip, phi0)
    body = k.sequence(body, k.symbstep_n(joined, 2, range(7, 12)))
    square = body.targets[0]
    body = k.simplify(body, square, R1, xpp, xpp, square.env[R1])
    sq = SymState(6, square.env.set(R1, xpp), square.path + (BinOp("eq", xpp, square.env[R1]),))
    body, _ = eng.drop_conjuncts(body, sq, phi0)

    # eight instantiations; r and R1 of each iteration are renamed to a and b
    a, b = Sym("a", W32), Sym("b", W32)
    acc = part1
    for i in range(8):
        inst = k.subst(body, x2, _w(8 - i))
        inst = k.subst(inst, x1, _w(1) if i == 0 else a)
        if i > 0:
            inst = k.subst(inst, a_r1, b)
        if i > 0:
            acc = k.sequence(acc, k.inf_branch(acc.targets[0], {6}))
        acc = k.sequence(acc, inst)
        acc = k.rename(acc, xp, a)
        acc = k.rename(acc, xpp, b)

    # part 3: leave the loop with R3 = 0 and run the epilogue
    exit_src = acc.targets[0]
    part3 = k.inf_branch(exit_src, {6, 12, 13, 14})
    part3 = k.sequence(part3, k.symbstep(part3.targets[0], {6, 12, 13, 14}))
    part3, t = eng.plain_simplify(part3, part3.targets[0], R0, a)
    part3 = k.sequence(part3, k.symbstep(t, {6, 12, 13, 14}))
    part3, t = eng.plain_simplify(part3, part3.targets[0], SP, a_sp)
    part3 = k.sequence(part3, k.symbstep(t, {6, 12, 13, 14}))
    part3, _ = eng.plain_simplify(part3, part3.targets[0], R3, a_r3)

    final = k.sequence(acc, part3)
    return Derivation(k, final, {"entry": part1, "iteration": body, "exit": part3})
