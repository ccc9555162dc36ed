"""Value types of the intermediate language: fixed-width words and memories."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

WIDTHS = (1, 8, 16, 32, 64)


def mask(width: int) -> int:
    return (1 << width) - 1


@dataclass(frozen=True)
class WordTy:
    width: int

    def __post_init__(self):
        if self.width not in WIDTHS:
            raise ValueError(f"unsupported word width {self.width}")

    def __str__(self):
        return f"w{self.width}"


@dataclass(frozen=True)
class MemTy:
    addr_width: int
    val_width: int

    def __post_init__(self):
        if self.addr_width not in WIDTHS or self.val_width not in WIDTHS:
            raise ValueError(f"unsupported memory widths {self.addr_width}x{self.val_width}")

    def __str__(self):
        return f"mem{self.addr_width}x{self.val_width}"


Ty = Union[WordTy, MemTy]
BOOL = WordTy(1)


def parse_ty(text: str) -> Ty:
    text = text.strip()
    if text.startswith("mem"):
        aw, _, vw = text[3:].partition("x")
        return MemTy(int(aw), int(vw))
    if text.startswith("w"):
        return WordTy(int(text[1:]))
    raise ValueError(f"bad type {text!r}")


@dataclass(frozen=True)
class Word:
    """An unsigned ``width``-bit word; the value is reduced modulo 2**width."""

    width: int
    value: int

    def __post_init__(self):
        if self.width not in WIDTHS:
            raise ValueError(f"unsupported word width {self.width}")
        object.__setattr__(self, "value", self.value & mask(self.width))

    @property
    def ty(self) -> WordTy:
        return WordTy(self.width)

    @property
    def signed(self) -> int:
        if self.value >> (self.width - 1):
            return self.value - (1 << self.width)
        return self.value

    def __bool__(self):
        return self.value != 0

    def __str__(self):
        return f"{self.value}w{self.width}"


TRUE = Word(1, 1)
FALSE = Word(1, 0)


@dataclass(frozen=True)
class MemoryValue:
    """A total map from ``addr_width`` words to ``val_width`` words.

    Stored as a default fill value plus the finitely many cells that differ
    from it, so equality is extensional.
    """

    addr_width: int
    val_width: int
    default: int = 0
    cells: tuple = ()

    def __post_init__(self):
        am, vm = mask(self.addr_width), mask(self.val_width)
        d = self.default & vm
        norm = {}
        for a, v in self.cells:
            norm[a & am] = v & vm
        object.__setattr__(self, "default", d)
        object.__setattr__(
            self, "cells", tuple(sorted((a, v) for a, v in norm.items() if v != d))
        )

    @classmethod
    def filled(cls, ty: MemTy, default: int = 0, cells: Iterable = ()) -> "MemoryValue":
        return cls(ty.addr_width, ty.val_width, default, tuple(cells))

    @property
    def ty(self) -> MemTy:
        return MemTy(self.addr_width, self.val_width)

    def load(self, addr: int) -> int:
        addr &= mask(self.addr_width)
        for a, v in self.cells:
            if a == addr:
                return v
        return self.default

    def store(self, addr: int, value: int) -> "MemoryValue":
        addr &= mask(self.addr_width)
        rest = tuple((a, v) for a, v in self.cells if a != addr)
        return MemoryValue(self.addr_width, self.val_width, self.default, rest + ((addr, value),))

    def __str__(self):
        body = ", ".join(f"{hex(a)}={v}" for a, v in self.cells)
        return f"mem{self.addr_width}x{self.val_width}[{self.default}; {body}]"


Value = Union[Word, MemoryValue]


def type_of(value: Value) -> Ty:
    return value.ty
