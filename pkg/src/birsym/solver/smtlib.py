"""SMT-LIB2 encoding and a child-process backend (z3 by default)."""

from __future__ import annotations

import os
import select
import shlex
import subprocess
import time
from typing import Dict, List, Optional

from ..expr import Const, Expr, Ite, Load, Store, Sym, UnOp, Var
from ..values import MemoryValue, MemTy, Word, WordTy, mask

DEFAULT_COMMAND = "z3 -in -smt2"

_BV = {
    "add": "bvadd",
    "sub": "bvsub",
    "mul": "bvmul",
    "udiv": "bvudiv",
    "and": "bvand",
    "or": "bvor",
    "xor": "bvxor",
    "shl": "bvshl",
    "lshr": "bvlshr",
    "ashr": "bvashr",
}
_CMP = {"ult": "bvult", "ule": "bvule", "slt": "bvslt", "sle": "bvsle"}


class SmtError(RuntimeError):
    pass


def sort(ty) -> str:
    if isinstance(ty, MemTy):
        return f"(Array (_ BitVec {ty.addr_width}) (_ BitVec {ty.val_width}))"
    return f"(_ BitVec {ty.width})"


def literal(v: int, w: int) -> str:
    if w % 4 == 0:
        return "#x" + format(v, f"0{w // 4}x")
    return "#b" + format(v, f"0{w}b")


def name(s: Sym) -> str:
    return f"|s!{s.name}|"


def encode(e: Expr, memo: Optional[Dict[Expr, str]] = None) -> str:
    if memo is None:
        memo = {}
    hit = memo.get(e)
    if hit is not None:
        return hit
    out = _encode(e, memo)
    memo[e] = out
    return out


def _encode(e: Expr, memo) -> str:
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, MemoryValue):
            out = f"((as const {sort(v.ty)}) {literal(v.default, v.val_width)})"
            for a, x in v.cells:
                out = f"(store {out} {literal(a, v.addr_width)} {literal(x, v.val_width)})"
            return out
        return literal(v.value, v.width)
    if isinstance(e, Sym):
        return name(e)
    if isinstance(e, Var):
        raise SmtError(f"program variable {e.name} in a formula")
    if isinstance(e, Ite):
        return f"(ite (= {encode(e.cond, memo)} #b1) {encode(e.then, memo)} {encode(e.orelse, memo)})"
    if isinstance(e, UnOp):
        return f"(bvnot {encode(e.arg, memo)})"
    if isinstance(e, Load):
        return f"(select {encode(e.mem, memo)} {encode(e.addr, memo)})"
    if isinstance(e, Store):
        return f"(store {encode(e.mem, memo)} {encode(e.addr, memo)} {encode(e.val, memo)})"
    a = encode(e.lhs, memo)
    b = encode(e.rhs, memo)
    op = e.op
    if op in _BV:
        return f"({_BV[op]} {a} {b})"
    if op == "umod":
        w = e.width
        return f"(ite (= {b} {literal(0, w)}) {literal(mask(w), w)} (bvurem {a} {b}))"
    if op == "eq":
        return f"(ite (= {a} {b}) #b1 #b0)"
    if op == "neq":
        return f"(ite (= {a} {b}) #b0 #b1)"
    return f"(ite ({_CMP[op]} {a} {b}) #b1 #b0)"


def script(conjuncts: List[Expr], syms) -> List[str]:
    lines = ["(set-option :produce-models true)", "(set-logic QF_ABV)"]
    for s in sorted(syms, key=lambda s: s.name):
        lines.append(f"(declare-fun {name(s)} () {sort(s.ty)})")
    memo: dict = {}
    for c in conjuncts:
        lines.append(f"(assert (= {encode(c, memo)} #b1))")
    return lines


# -- s-expressions -----------------------------------------------------------------


def parse_sexpr(text: str):
    toks = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "()":
            toks.append(ch)
            i += 1
        elif ch == "|":
            j = text.index("|", i + 1)
            toks.append(text[i : j + 1])
            i = j + 1
        elif ch == '"':
            j = text.index('"', i + 1)
            toks.append(text[i : j + 1])
            i = j + 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "()":
                j += 1
            toks.append(text[i:j])
            i = j
    pos = 0

    def go():
        nonlocal pos
        t = toks[pos]
        pos += 1
        if t == "(":
            out = []
            while toks[pos] != ")":
                out.append(go())
            pos += 1
            return out
        return t

    return go()


def _word(term, width: Optional[int] = None) -> Word:
    if isinstance(term, str):
        if term.startswith("#x"):
            return Word(len(term[2:]) * 4, int(term[2:], 16))
        if term.startswith("#b"):
            return Word(len(term[2:]), int(term[2:], 2))
    if isinstance(term, list) and len(term) == 3 and term[0] == "_" and term[1].startswith("bv"):
        return Word(int(term[2]), int(term[1][2:]))
    raise SmtError(f"unrecognized model value {term!r}")


def model_value(term, ty):
    if isinstance(ty, WordTy):
        return _word(term)
    if isinstance(term, list) and len(term) == 2 and isinstance(term[0], list) and term[0][:2] == ["as", "const"]:
        return MemoryValue.filled(ty, _word(term[1]).value)
    if isinstance(term, list) and len(term) == 4 and term[0] == "store":
        inner = model_value(term[1], ty)
        return inner.store(_word(term[2]).value, _word(term[3]).value)
    raise SmtError(f"unrecognized array value {str(term)[:80]}")


# -- process session ------------------------------------------------------------------


def command() -> List[str]:
    return shlex.split(os.environ.get("BIRSYM_SMT_CMD", DEFAULT_COMMAND))


class Session:
    """One solver process; closed after the query."""

    def __init__(self, cmd: Optional[List[str]] = None, timeout_ms: int = 10_000):
        self.timeout = timeout_ms / 1000.0
        try:
            self.proc = subprocess.Popen(
                cmd or command(),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SmtError(f"cannot start solver: {exc}") from None
        self.deadline = time.monotonic() + self.timeout
        self.buf = ""

    def send(self, *lines: str):
        try:
            self.proc.stdin.write("\n".join(lines) + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise SmtError("solver process died") from None

    def _fill(self):
        left = self.deadline - time.monotonic()
        if left <= 0:
            raise TimeoutError
        ready, _, _ = select.select([self.proc.stdout], [], [], left)
        if not ready:
            raise TimeoutError
        chunk = os.read(self.proc.stdout.fileno(), 65536).decode()
        if not chunk:
            raise SmtError("solver closed its output")
        self.buf += chunk

    def read_sexpr(self) -> str:
        while True:
            text = self.buf.lstrip()
            if text:
                if text[0] != "(":
                    line, sep, rest = text.partition("\n")
                    if sep:
                        self.buf = rest
                        return line.strip()
                else:
                    depth = 0
                    in_bar = False
                    for i, ch in enumerate(text):
                        if ch == "|":
                            in_bar = not in_bar
                        elif in_bar:
                            continue
                        elif ch == "(":
                            depth += 1
                        elif ch == ")":
                            depth -= 1
                            if depth == 0:
                                self.buf = text[i + 1 :]
                                return text[: i + 1]
            self._fill()

    def check(self) -> str:
        self.send("(check-sat)")
        ans = self.read_sexpr()
        if ans.startswith("(error"):
            raise SmtError(ans)
        if ans not in ("sat", "unsat", "unknown"):
            raise SmtError(f"unexpected solver answer {ans!r}")
        return ans

    def values(self, terms: List[str]):
        self.send(f"(get-value ({' '.join(terms)}))")
        text = self.read_sexpr()
        if text.startswith("(error"):
            raise SmtError(text)
        return [pair[1] for pair in parse_sexpr(text)]

    def close(self):
        try:
            self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.kill()
        except OSError:
            pass
        self.proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
