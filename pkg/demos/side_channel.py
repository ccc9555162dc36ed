"""Timing leaks show up as a gap between the best and worst case.

Both programs branch on the low bit of a secret K.  In the first one the
cheap branch is padded with no-ops until both branches cost the same, so the
cycle count no longer depends on K.
"""

from birsym.derivations import load_program
from birsym.text import print_program
from birsym.timing import analyze_wcet

for name in ["branch_unbalanced", "branch_balanced"]:
    p = load_program(name)
    res = analyze_wcet(p)
    print(print_program(p))
    iv = res.interval
    verdict = "constant time" if iv.lo == iv.hi else f"leaks: {iv.hi - iv.lo} cycles apart"
    print(f"=> [{iv.lo}, {iv.hi}]  {verdict}")
    for label, piv in res.paths:
        print(f"   a path to {label} costs [{piv.lo}, {piv.hi}]")
    print()
