"""Canonical JSON encoding of symbolic states, used for digests and certificates."""

from __future__ import annotations

import hashlib
import json
from typing import Dict, Mapping

from .expr import Expr, Sym
from .sym import AnySymState, SymError, SymState, SymStore, symbols_of
from .text import parse_expr, print_expr
from .values import BOOL, Ty, parse_ty


class DecodeError(ValueError):
    pass


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def symbol_table(syms) -> Dict[str, str]:
    table: Dict[str, str] = {}
    for s in syms:
        known = table.setdefault(s.name, str(s.ty))
        if known != str(s.ty):
            raise ValueError(f"symbol name {s.name} used at types {known} and {s.ty}")
    return dict(sorted(table.items()))


def encode_expr(e: Expr, ty: Ty = None) -> str:
    return print_expr(e, ty if ty is not None else e.ty)


def encode_state(s: AnySymState) -> dict:
    path = [print_expr(c, BOOL) for c in s.path]
    if isinstance(s, SymError):
        return {"error": True, "path": path}
    return {
        "pc": s.pc,
        "env": {v.name: print_expr(e, v.ty) for v, e in s.env.items()},
        "path": path,
    }


def state_key(s: AnySymState) -> str:
    return dumps(encode_state(s))


class Decoder:
    def __init__(self, typing: Mapping[str, Ty], table: Mapping[str, str]):
        self.typing = typing
        try:
            self.symbols = {n: parse_ty(t) for n, t in table.items()}
        except (ValueError, AttributeError) as exc:
            raise DecodeError(f"bad symbol table: {exc}") from None

    def expr(self, text, ty=None) -> Expr:
        if not isinstance(text, str):
            raise DecodeError("expression must be a string")
        try:
            return parse_expr(text, {}, self.symbols, expected=ty)
        except (ValueError, TypeError) as exc:
            raise DecodeError(str(exc)) from None

    def sym(self, name) -> Sym:
        if name not in self.symbols:
            raise DecodeError(f"unknown symbol {name!r}")
        return Sym(name, self.symbols[name])

    def state(self, obj) -> AnySymState:
        if not isinstance(obj, dict):
            raise DecodeError("state must be an object")
        path = [self.expr(c, BOOL) for c in obj.get("path", [])]
        if obj.get("error"):
            if set(obj) != {"error", "path"}:
                raise DecodeError("unexpected keys in error state")
            return SymError(path)
        if set(obj) != {"pc", "env", "path"} or not isinstance(obj["pc"], int):
            raise DecodeError("malformed state")
        env = {}
        for name, text in obj["env"].items():
            if name not in self.typing:
                raise DecodeError(f"unknown variable {name!r}")
            from .expr import Var

            ty = self.typing[name]
            env[Var(name, ty)] = self.expr(text, ty)
        return SymState(obj["pc"], SymStore(env), path)


def structure_text(labels, source, targets) -> str:
    from .text import print_labels

    syms = symbols_of(source) | symbols_of(targets)
    return dumps(
        {
            "labels": print_labels(labels),
            "source": encode_state(source),
            "targets": [encode_state(t) for t in targets],
            "symbols": symbol_table(syms),
        }
    )
