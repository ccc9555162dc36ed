"""Concrete syntax for programs and expressions (the ``.bir`` format).

::

    program modexp
    entry 1
    var SP : w32
    var M : mem32x32

    1: assert 0x1000 <= SP - 4 & SP - 4 <= 0x1500 - 8
    2: M := st(M, SP, R3)
    6: cjmp R3 == 0 -> 12, 7   [cycles taken=3 fall=1]

Unsuffixed literals take their width from the context; ``8w32`` forces one.
Symbols are written ``$name`` and only appear in symbolic states.
"""

from __future__ import annotations

import re
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Tuple

from .expr import (
    ARITH_OPS,
    BinOp,
    Const,
    Expr,
    Ite,
    Load,
    Store,
    Sym,
    TypeMismatch,
    UnOp,
    Var,
)
from .program import Assert, Assign, CJmp, Cycles, Jmp, Program, ProgramTypeError, typecheck_program
from .values import BOOL, MemoryValue, MemTy, Ty, Word, WordTy, parse_ty


class BirSyntaxError(ValueError):
    """Malformed input; ``line`` and ``col`` are 1-based."""

    def __init__(self, line: int, col: int, expected: str):
        super().__init__(f"line {line} col {col}: expected {expected}")
        self.line = line
        self.col = col
        self.expected = expected


class BirTypeError(TypeError):
    def __init__(self, line: int, col: int, reason: str):
        super().__init__(f"line {line} col {col}: {reason}")
        self.line = line
        self.col = col
        self.reason = reason


KEYWORDS = {"ld", "st", "ite", "assert", "jmp", "cjmp"}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>0[xX][0-9a-fA-F]+(?:w\d+)?|\d+(?:w\d+)?)
  | (?P<sym>\$(?:\#\d+|[A-Za-z_][A-Za-z0-9_']*))
  | (?P<memty>mem\d+x\d+(?=\[))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|->|>>a(?![A-Za-z0-9_])|<=s(?![A-Za-z0-9_])|<s(?![A-Za-z0-9_])|<<|>>|==|!=|<=|[-+*/%&|^<!(),:\[\];=])
    """,
    re.VERBOSE,
)

BINARY = {
    "|": ("or", 1),
    "^": ("xor", 2),
    "&": ("and", 3),
    "==": ("eq", 4),
    "!=": ("neq", 4),
    "<": ("ult", 5),
    "<=": ("ule", 5),
    "<s": ("slt", 5),
    "<=s": ("sle", 5),
    "<<": ("shl", 6),
    ">>": ("lshr", 6),
    ">>a": ("ashr", 6),
    "+": ("add", 7),
    "-": ("sub", 7),
    "*": ("mul", 8),
    "/": ("udiv", 8),
    "%": ("umod", 8),
}
OP_TEXT = {op: (tok, prec) for tok, (op, prec) in BINARY.items()}


def _tokenize(text: str, line: int) -> List[Tuple[str, str, int]]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise BirSyntaxError(line, pos + 1, f"a token, found {text[pos]!r}")
        kind = m.lastgroup
        if kind != "ws":
            out.append((kind, m.group(), pos + 1))
        pos = m.end()
    out.append(("eof", "", len(text) + 1))
    return out


def _int(text: str) -> Tuple[int, Optional[int]]:
    body, _, width = text.partition("w")
    if body.lower().startswith("0x"):
        value = int(body, 16)
    else:
        value = int(body, 10)
    return value, (int(width) if width else None)


# -- untyped parse trees ---------------------------------------------------------
# Nodes are tuples whose first element is the kind and last is the column.


class _Parser:
    def __init__(self, text: str, line: int):
        self.toks = _tokenize(text, line)
        self.i = 0
        self.line = line

    @property
    def tok(self):
        return self.toks[self.i]

    def fail(self, expected: str):
        kind, text, col = self.tok
        found = "end of line" if kind == "eof" else repr(text)
        raise BirSyntaxError(self.line, col, f"{expected}, found {found}")

    def accept(self, text: str) -> bool:
        if self.tok[1] == text and self.tok[0] in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            self.fail(repr(text))

    def at_end(self) -> bool:
        return self.tok[0] == "eof"

    def expect_end(self):
        if not self.at_end():
            self.fail("end of line")

    def ident(self) -> str:
        kind, text, _ = self.tok
        if kind != "ident" or text in KEYWORDS:
            self.fail("an identifier")
        self.i += 1
        return text

    def number(self) -> int:
        kind, text, _ = self.tok
        if kind != "num":
            self.fail("a number")
        self.i += 1
        value, width = _int(text)
        if width is not None:
            self.fail_at_prev("an unsuffixed number")
        return value

    def fail_at_prev(self, expected):
        self.i -= 1
        self.fail(expected)

    def expr(self, min_prec: int = 1):
        lhs = self.unary()
        while True:
            kind, text, col = self.tok
            if kind != "op" or text not in BINARY:
                return lhs
            op, prec = BINARY[text]
            if prec < min_prec:
                return lhs
            self.i += 1
            rhs = self.expr(prec + 1)
            lhs = ("bin", op, lhs, rhs, col)

    def unary(self):
        kind, text, col = self.tok
        if kind == "op" and text == "!":
            self.i += 1
            return ("not", self.unary(), col)
        return self.primary()

    def primary(self):
        kind, text, col = self.tok
        if kind == "num":
            self.i += 1
            value, width = _int(text)
            return ("num", value, width, col)
        if kind == "sym":
            self.i += 1
            return ("sym", text[1:], col)
        if kind == "memty":
            self.i += 1
            return self.memlit(parse_ty(text), col)
        if kind == "op" and text == "(":
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if kind == "ident":
            if text in ("ite", "ld", "st"):
                self.i += 1
                self.expect("(")
                args = [self.expr()]
                while self.accept(","):
                    args.append(self.expr())
                self.expect(")")
                arity = {"ite": 3, "ld": 2, "st": 3}[text]
                if len(args) != arity:
                    raise BirSyntaxError(self.line, col, f"{arity} arguments to {text}")
                return (text, *args, col)
            if text in KEYWORDS:
                self.fail("an expression")
            self.i += 1
            return ("var", text, col)
        self.fail("an expression")

    def memlit(self, ty, col):
        self.expect("[")
        default = self.number()
        cells = []
        if self.accept(";"):
            if self.tok[1] != "]":
                while True:
                    a = self.number()
                    self.expect("=")
                    cells.append((a, self.number()))
                    if not self.accept(","):
                        break
        self.expect("]")
        return ("mem", ty, default, tuple(cells), col)


# -- elaboration into typed expressions -------------------------------------------


class _Elab:
    def __init__(self, line: int, typing: Mapping[str, Ty], symbols: Mapping[str, Ty]):
        self.line = line
        self.typing = typing
        self.symbols = symbols

    def err(self, col, reason):
        raise BirTypeError(self.line, col, reason)

    def synth(self, t) -> Optional[Ty]:
        kind = t[0]
        if kind == "num":
            return WordTy(t[2]) if t[2] is not None else None
        if kind == "var":
            return self.typing.get(t[1])
        if kind == "sym":
            return self.symbols.get(t[1])
        if kind == "mem":
            return t[1]
        if kind == "bin":
            if t[1] in ARITH_OPS:
                return self.synth(t[2]) or self.synth(t[3])
            return BOOL
        if kind == "not":
            return self.synth(t[1])
        if kind == "ite":
            return self.synth(t[2]) or self.synth(t[3])
        if kind == "ld":
            m = self.synth(t[1])
            return WordTy(m.val_width) if isinstance(m, MemTy) else None
        if kind == "st":
            return self.synth(t[1])
        return None

    def elab(self, t, expected: Optional[Ty]) -> Expr:
        try:
            e = self._elab(t, expected)
        except TypeMismatch as exc:
            self.err(t[-1], str(exc))
        if expected is not None and e.ty != expected:
            self.err(t[-1], f"expected {expected}, got {e.ty}")
        return e

    def _elab(self, t, expected):
        kind = t[0]
        col = t[-1]
        if kind == "num":
            width = t[2]
            if width is None:
                if expected is None:
                    self.err(col, "cannot infer the width of this literal")
                if not isinstance(expected, WordTy):
                    self.err(col, f"number where {expected} expected")
                width = expected.width
            try:
                return Const(Word(width, t[1]))
            except ValueError as exc:
                self.err(col, str(exc))
        if kind == "var":
            ty = self.typing.get(t[1])
            if ty is None:
                self.err(col, f"undeclared variable {t[1]}")
            return Var(t[1], ty)
        if kind == "sym":
            ty = self.symbols.get(t[1])
            if ty is None:
                self.err(col, f"undeclared symbol ${t[1]}")
            return Sym(t[1], ty)
        if kind == "mem":
            ty = t[1]
            return Const(MemoryValue.filled(ty, t[2], t[3]))
        if kind == "bin":
            op, a, b = t[1], t[2], t[3]
            if op in ARITH_OPS:
                ty = self.synth(a) or self.synth(b) or expected
            else:
                ty = self.synth(a) or self.synth(b)
            if ty is None:
                self.err(col, "cannot infer operand widths")
            return BinOp(op, self.elab(a, ty), self.elab(b, ty))
        if kind == "not":
            ty = self.synth(t[1]) or expected
            return UnOp("not", self.elab(t[1], ty))
        if kind == "ite":
            ty = self.synth(t[2]) or self.synth(t[3]) or expected
            return Ite(self.elab(t[1], BOOL), self.elab(t[2], ty), self.elab(t[3], ty))
        if kind == "ld":
            mty = self.synth(t[1])
            if not isinstance(mty, MemTy):
                self.err(col, "ld needs a memory")
            return Load(self.elab(t[1], mty), self.elab(t[2], WordTy(mty.addr_width)))
        if kind == "st":
            mty = self.synth(t[1]) or expected
            if not isinstance(mty, MemTy):
                self.err(col, "st needs a memory")
            return Store(
                self.elab(t[1], mty),
                self.elab(t[2], WordTy(mty.addr_width)),
                self.elab(t[3], WordTy(mty.val_width)),
            )
        raise AssertionError(kind)


def parse_expr(
    text: str,
    typing: Mapping[str, Ty],
    symbols: Optional[Mapping[str, Ty]] = None,
    expected: Optional[Ty] = None,
    line: int = 1,
) -> Expr:
    """Parse and type one expression against a variable typing."""
    p = _Parser(text, line)
    if p.at_end():
        p.fail("an expression")
    tree = p.expr()
    p.expect_end()
    return _Elab(line, typing, symbols or {}).elab(tree, expected)


# -- programs -------------------------------------------------------------------


def _strip_comment(line: str) -> str:
    idx = line.find("//")
    return line if idx < 0 else line[:idx]


def _mem_uses(t, out: set):
    if not isinstance(t, tuple):
        return
    if t[0] in ("ld", "st") and t[1][0] == "var":
        out.add(t[1][1])
    for x in t[1:-1]:
        if isinstance(x, tuple):
            _mem_uses(x, out)


def _stmt_trees(kind, args):
    if kind == "assign":
        return [args[1]]
    return list(args)


def parse_program(text: str) -> Program:
    """Parse a ``.bir`` program and type check it."""
    name = None
    entry = None
    label_width = 32
    exits: set = set()
    decls: Dict[str, Ty] = {}
    raw = []  # (line, label, kind, args, cycles)
    for lineno, full in enumerate(text.splitlines(), start=1):
        body = _strip_comment(full)
        if not body.strip():
            continue
        p = _Parser(body, lineno)
        kind, tok, col = p.tok
        if name is None:
            if tok != "program":
                p.fail("'program <name>' header")
            rest = body.strip()[len("program") :].strip()
            if not re.fullmatch(r"[A-Za-z0-9_.\-]+", rest):
                raise BirSyntaxError(lineno, body.find("program") + 9, "a program name")
            name = rest
            continue
        if kind == "ident" and tok in ("entry", "exit", "var", "labelwidth") and p.toks[1][1] != ":":
            p.i += 1
            if tok == "entry":
                entry = p.number()
            elif tok == "labelwidth":
                label_width = p.number()
                if label_width not in (1, 8, 16, 32, 64):
                    p.fail_at_prev("a word width")
            elif tok == "exit":
                exits.add(p.number())
                while p.accept(","):
                    exits.add(p.number())
            else:
                vname = p.ident()
                p.expect(":")
                tkind, ttext, _ = p.tok
                try:
                    if tkind == "memty" or tkind != "ident":
                        raise ValueError
                    decls[vname] = parse_ty(ttext)
                except ValueError:
                    p.fail("a type like w32 or mem32x32")
                p.i += 1
            p.expect_end()
            continue
        if entry is None:
            p.fail("'entry <label>' before statements")
        label = p.number()
        p.expect(":")
        kind, tok, col = p.tok
        if tok == "assert" and kind == "ident":
            p.i += 1
            stmt = ("assert", (p.expr(),))
        elif tok == "jmp" and kind == "ident":
            p.i += 1
            stmt = ("jmp", (p.expr(),))
        elif tok == "cjmp" and kind == "ident":
            p.i += 1
            cond = p.expr()
            p.expect("->")
            t = p.expr()
            p.expect(",")
            f = p.expr()
            stmt = ("cjmp", (cond, t, f))
        else:
            vcol = col
            vname = p.ident()
            p.expect(":=")
            stmt = ("assign", (("var", vname, vcol), p.expr()))
        cycles = None
        if p.accept("["):
            if p.tok[1] != "cycles":
                p.fail("'cycles'")
            p.i += 1
            if p.tok[0] == "num":
                cycles = Cycles(p.number())
            else:
                got = {}
                for _ in range(2):
                    key = p.ident()
                    if key not in ("taken", "fall") or key in got:
                        p.fail_at_prev("'taken=' or 'fall='")
                    p.expect("=")
                    got[key] = p.number()
                cycles = Cycles(got["taken"], got["fall"])
            p.expect("]")
        p.expect_end()
        if any(r[1] == label for r in raw):
            raise BirSyntaxError(lineno, 1, f"a fresh label, {label} is already defined")
        raw.append((lineno, label, stmt[0], stmt[1], cycles))
    if name is None:
        raise BirSyntaxError(1, 1, "'program <name>' header")
    if entry is None:
        raise BirSyntaxError(max(1, len(text.splitlines())), 1, "'entry <label>'")

    typing = _infer_typing(raw, decls, label_width)
    stmts = {}
    cycles = {}
    lw = WordTy(label_width)
    for lineno, label, kind, args, cyc in raw:
        el = _Elab(lineno, typing, {})
        if kind == "assign":
            var = Var(args[0][1], typing[args[0][1]])
            stmts[label] = Assign(var, el.elab(args[1], var.ty))
        elif kind == "assert":
            stmts[label] = Assert(el.elab(args[0], BOOL))
        elif kind == "jmp":
            stmts[label] = Jmp(el.elab(args[0], lw))
        else:
            stmts[label] = CJmp(el.elab(args[0], BOOL), el.elab(args[1], lw), el.elab(args[2], lw))
        if cyc is not None:
            if (cyc.fall is not None) != (kind == "cjmp"):
                raise BirSyntaxError(lineno, 1, "taken=/fall= annotations exactly on cjmp lines")
            cycles[label] = cyc
    prog = Program(
        stmts=stmts,
        entry=entry,
        label_width=label_width,
        name=name,
        exits=frozenset(exits),
        cycles=cycles,
        decls=dict(typing),
    )
    try:
        typecheck_program(prog)
    except ProgramTypeError as exc:
        line = next((r[0] for r in raw if r[1] == exc.label), 1)
        raise BirTypeError(line, 1, str(exc)) from None
    return prog


def _infer_typing(raw, decls, label_width) -> Dict[str, Ty]:
    typing = dict(decls)
    used: set = set()
    mem_used: set = set()

    def collect(t):
        if isinstance(t, tuple):
            if t[0] == "var":
                used.add(t[1])
            for x in t[1:-1]:
                collect(x)

    for _, _, kind, args, _ in raw:
        for t in args:
            collect(t)
            _mem_uses(t, mem_used)
    changed = True
    while changed:
        changed = False
        for lineno, _, kind, args, _ in raw:
            if kind == "assign" and args[0][1] not in typing:
                ty = _Elab(lineno, typing, {}).synth(args[1])
                if ty is not None:
                    typing[args[0][1]] = ty
                    changed = True
    for v in sorted(used - set(typing)):
        if v in mem_used:
            typing[v] = MemTy(label_width, label_width)
        else:
            typing[v] = WordTy(label_width)
    return typing


# -- printing --------------------------------------------------------------------


@lru_cache(maxsize=1 << 16)
def _psynth(e: Expr) -> Optional[Ty]:
    """The type the parser can synthesize for ``e`` printed without suffixes."""
    if isinstance(e, Const):
        return e.ty if isinstance(e.value, MemoryValue) else None
    if isinstance(e, (Var, Sym, Load, Store)):
        return e.ty
    if isinstance(e, BinOp):
        if e.op in ARITH_OPS:
            return _psynth(e.lhs) or _psynth(e.rhs)
        return BOOL
    if isinstance(e, UnOp):
        return _psynth(e.arg)
    if isinstance(e, Ite):
        return _psynth(e.then) or _psynth(e.orelse)
    return None


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return OP_TEXT[e.op][1]
    if isinstance(e, UnOp):
        return 9
    return 10


# symbolic values share subterms heavily, so printing is memoized per node
@lru_cache(maxsize=1 << 16)
def print_expr(e: Expr, expected: Optional[Ty] = None) -> str:
    """Canonical text; literal widths are printed only where context lacks them."""
    if isinstance(e, Const):
        v = e.value
        if isinstance(v, MemoryValue):
            cells = ", ".join(f"{a}={x}" for a, x in v.cells)
            return f"mem{v.addr_width}x{v.val_width}[{v.default}; {cells}]"
        return str(v.value) if expected == e.ty else f"{v.value}w{v.width}"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Sym):
        return "$" + e.name
    if isinstance(e, Ite):
        if expected == e.ty or _psynth(e.then) or _psynth(e.orelse):
            a = print_expr(e.then, e.ty)
        else:
            a = print_expr(e.then, None)
        return f"ite({print_expr(e.cond, BOOL)}, {a}, {print_expr(e.orelse, e.ty)})"
    if isinstance(e, Load):
        return f"ld({print_expr(e.mem, e.mem.ty)}, {print_expr(e.addr, e.addr.ty)})"
    if isinstance(e, Store):
        return (
            f"st({print_expr(e.mem, e.mem.ty)}, {print_expr(e.addr, e.addr.ty)}, "
            f"{print_expr(e.val, e.val.ty)})"
        )
    if isinstance(e, UnOp):
        if expected == e.ty or _psynth(e.arg):
            inner = print_expr(e.arg, e.ty)
        else:
            inner = print_expr(e.arg, None)
        if _prec(e.arg) < 9:
            inner = f"({inner})"
        return "!" + inner
    if isinstance(e, BinOp):
        tok, prec = OP_TEXT[e.op]
        oty = e.lhs.ty
        if e.op in ARITH_OPS:
            known = expected == e.ty or _psynth(e.lhs) or _psynth(e.rhs)
        else:
            known = _psynth(e.lhs) or _psynth(e.rhs)
        a = print_expr(e.lhs, oty if known else None)
        b = print_expr(e.rhs, oty)
        if _prec(e.lhs) < prec:
            a = f"({a})"
        if _prec(e.rhs) <= prec:
            b = f"({b})"
        return f"{a} {tok} {b}"
    raise TypeError(e)


def print_stmt(stmt, label_width: int = 32) -> str:
    lw = WordTy(label_width)
    if isinstance(stmt, Assign):
        return f"{stmt.var.name} := {print_expr(stmt.expr, stmt.var.ty)}"
    if isinstance(stmt, Assert):
        return f"assert {print_expr(stmt.cond, BOOL)}"
    if isinstance(stmt, Jmp):
        return f"jmp {print_expr(stmt.target, lw)}"
    return (
        f"cjmp {print_expr(stmt.cond, BOOL)} -> {print_expr(stmt.target_true, lw)}, "
        f"{print_expr(stmt.target_false, lw)}"
    )


def print_program(p: Program) -> str:
    lines = [f"program {p.name}"]
    if p.label_width != 32:
        lines.append(f"labelwidth {p.label_width}")
    lines.append(f"entry {p.entry}")
    if p.exits:
        lines.append("exit " + ", ".join(str(x) for x in sorted(p.exits)))
    for vname, ty in sorted(p.typing().items()):
        lines.append(f"var {vname} : {ty}")
    lines.append("")
    for label in sorted(p.stmts):
        line = f"{label}: {print_stmt(p.stmts[label], p.label_width)}"
        cyc = p.cycles.get(label)
        if cyc is not None:
            if cyc.fall is None:
                line += f" [cycles {cyc.taken}]"
            else:
                line += f" [cycles taken={cyc.taken} fall={cyc.fall}]"
        lines.append(line)
    return "\n".join(lines) + "\n"


def parse_labels(text: str) -> frozenset:
    """Parse label sets such as ``1-14`` or ``1..6, 12, 20-22``."""
    out = set()
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        m = re.fullmatch(r"(\d+|0x[0-9a-fA-F]+)(?:(?:-|\.\.)(\d+|0x[0-9a-fA-F]+))?", part)
        if m is None:
            raise BirSyntaxError(1, 1, f"a label or label range, found {part!r}")
        lo = int(m.group(1), 0)
        hi = int(m.group(2), 0) if m.group(2) else lo
        out.update(range(lo, hi + 1))
    return frozenset(out)


def print_labels(labels) -> str:
    labels = sorted(labels)
    parts = []
    i = 0
    while i < len(labels):
        j = i
        while j + 1 < len(labels) and labels[j + 1] == labels[j] + 1:
            j += 1
        parts.append(str(labels[i]) if i == j else f"{labels[i]}-{labels[j]}")
        i = j + 1
    return ",".join(parts)
