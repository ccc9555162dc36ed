"""Differential soundness check of progress structures against concrete runs.

For a structure ``L, s |-> targets`` we draw interpretations of exactly the
source symbols that satisfy the source path, build the concrete state they
describe, run it inside ``L`` and require that the run leaves ``L`` (or
fails) after at least one step in a state loosely matched by some target.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import List, Optional

from .program import Program, Truncated, run_in_fragment
from .sym import concretize, loose_matches, sample_minimal_interpretation, symbols_of


@dataclass
class Violation:
    seed: int
    reason: str
    interpretation: dict
    trace: list = field(default_factory=list, repr=False)


@dataclass
class SampleReport:
    runs: int = 0
    vacuous: bool = False
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_structure(
    ps,
    program: Program,
    samples: int = 100,
    seed: int = 0,
    max_steps: int = 10_000,
    cfg=None,
) -> SampleReport:
    rep = SampleReport()
    labels = ps.labels
    bound = symbols_of(ps.source)
    for i in range(samples):
        rng = random.Random(seed * 1_000_003 + i)
        h = sample_minimal_interpretation(ps.source, rng, cfg)
        if h is None:
            rep.vacuous = True
            return rep
        h = {k: v for k, v in h.items() if k in bound}
        start = concretize(ps.source, h)
        try:
            trace = run_in_fragment(program, start, labels, max_steps)
        except Truncated as exc:
            rep.violations.append(Violation(i, "did not leave the fragment", h, exc.trace[-5:]))
            continue
        rep.runs += 1
        if len(trace) < 2:
            rep.violations.append(Violation(i, "no step taken", h, trace))
            continue
        final = trace[-1]
        if not any(loose_matches(t, h, final, cfg) for t in ps.targets):
            rep.violations.append(Violation(i, "final state matches no target", h, trace[-5:]))
    return rep


def find_violation(ps, program: Program, samples: int = 100, seed: int = 0, cfg=None) -> Optional[Violation]:
    rep = check_structure(ps, program, samples, seed, cfg=cfg)
    return rep.violations[0] if rep.violations else None
