"""Pre/postcondition contracts established from progress structures.

A contract ``{P} l -> L {Q}`` says: every state at ``l`` satisfying ``P``
runs inside ``L`` for at least one step and leaves it in a state satisfying
``Q``. It follows from a structure whose source describes all ``P``-states,
whose targets all lie outside ``L`` and whose targets each imply ``Q``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import List, Mapping, Optional

from .engine import AnalysisReport, ExploreOptions, explore
from .expr import Expr, variables
from .kernel import ProgressStructure
from .program import Program
from .solver import SolverUnknown, check_sat, check_valid
from .sym import SymError, SymState, initial_store, negate, sym_eval
from .text import parse_expr, parse_labels, print_expr, print_labels
from .values import BOOL, Ty


class ContractError(ValueError):
    pass


# postconditions relate final states to entry values only through the precondition
_RELATIONAL = re.compile(r"\bold\s*\(|\bold_\w")


@dataclass(frozen=True)
class Contract:
    pre: Expr
    entry: int
    labels: frozenset
    post: Expr

    def format(self) -> str:
        return "\n".join(
            [
                f"pre {print_expr(self.pre, BOOL)}",
                f"entry {self.entry}",
                f"fragment {print_labels(self.labels)}",
                f"post {print_expr(self.post, BOOL)}",
            ]
        )


@dataclass
class Verdict:
    holds: bool
    condition: Optional[int] = None
    detail: str = ""
    witness: Optional[dict] = None
    notes: List[str] = field(default_factory=list)

    def __bool__(self):
        return self.holds

    def format(self) -> str:
        if self.holds:
            return "holds"
        return f"failed condition {self.condition}: {self.detail}"


def _check_formula(e: Expr, typing: Mapping[str, Ty], what: str):
    if e.ty != BOOL:
        raise TypeError(f"{what} must have width 1")
    for v in variables(e):
        if typing.get(v.name) != v.ty:
            raise TypeError(f"{what} mentions unknown variable {v.name}")


def parse_contract(text: str, typing: Mapping[str, Ty]) -> Contract:
    """Read ``pre``/``entry``/``fragment``/``post`` lines; ``//`` starts a comment."""
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("//", 1)[0].strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        if key not in ("pre", "entry", "fragment", "post"):
            raise ContractError(f"line {lineno}: unknown field {key!r}")
        if key in fields:
            raise ContractError(f"line {lineno}: {key} given twice")
        fields[key] = (lineno, rest.strip())
    missing = {"entry", "fragment", "post"} - set(fields)
    if missing:
        raise ContractError("missing " + ", ".join(sorted(missing)))
    if _RELATIONAL.search(fields["post"][1]):
        raise ContractError(f"line {fields['post'][0]}: relational postconditions are not supported")
    pre_line, pre_text = fields.get("pre", (0, "1w1"))
    pre = parse_expr(pre_text, typing, expected=BOOL, line=pre_line)
    post = parse_expr(fields["post"][1], typing, expected=BOOL, line=fields["post"][0])
    try:
        entry = int(fields["entry"][1], 0)
    except ValueError:
        raise ContractError(f"line {fields['entry'][0]}: bad entry label") from None
    labels = parse_labels(fields["fragment"][1])
    return Contract(pre, entry, labels, post)


def source_from_precondition(label: int, pre: Expr, typing: Mapping[str, Ty]) -> SymState:
    """The state at ``label`` whose matches are exactly the states satisfying ``pre``."""
    _check_formula(pre, typing, "precondition")
    s = SymState(label, initial_store(typing), ())
    return s.with_path((sym_eval(pre, s.env),))


def check_contract(ps: ProgressStructure, contract: Contract, cfg=None) -> Verdict:
    typing = ps.kernel.typing
    _check_formula(contract.post, typing, "postcondition")
    expected = source_from_precondition(contract.entry, contract.pre, typing)
    if ps.source != expected:
        return Verdict(False, 1, "the source is not the state described by the precondition")
    notes = ["condition 1 holds by construction of the source"]
    if not ps.labels <= contract.labels:
        return Verdict(False, 1, "the structure runs outside the contract fragment", notes=notes)
    for t in ps.targets:
        if isinstance(t, SymError):
            return Verdict(False, 3, "an assertion can fail", notes=notes)
        if t.pc in contract.labels:
            return Verdict(False, 3, f"a target stays inside the fragment at label {t.pc}", notes=notes)
    for t in ps.targets:
        goal = sym_eval(contract.post, t.env)
        try:
            ok = check_valid(list(t.path), goal, cfg)
        except SolverUnknown as exc:
            return Verdict(False, 2, f"unknown: {exc}", notes=notes)
        if not ok:
            res = check_sat(list(t.path) + [negate(goal)], cfg)
            witness = {s.name: str(v) for s, v in getattr(res, "model", {}).items()}
            return Verdict(False, 2, f"postcondition can fail at label {t.pc}", witness, notes)
    return Verdict(True, notes=notes)


def prove_contract(
    program: Program,
    contract: Contract,
    opts: Optional[ExploreOptions] = None,
    cfg=None,
):
    """Explore from the precondition and check the contract on the result."""
    typing = program.typing()
    s0 = source_from_precondition(contract.entry, contract.pre, typing)
    labels = frozenset(contract.labels) & program.labels
    if s0.pc not in labels:
        raise ContractError(f"entry {contract.entry} is not in the fragment")
    report: AnalysisReport = explore(program, s0, labels, opts, cfg)
    return check_contract(report.structure, contract, cfg), report
