"""Cycle bounds for the bundled micro benchmarks.

Each program is instrumented with a cycle counter, explored symbolically, and
the counter's offset at the exit is read off the resulting structure.
"""

import time

from birsym.derivations import load_program
from birsym.kernel import replay_certificate
from birsym.timing import analyze_wcet

NAMES = ["9nopsubadd", "cmpbeq", "ld", "st", "ldnop", "ldldbr8"]

print(f"{'program':<12} {'best':>5} {'worst':>6} {'paths':>6} {'secs':>6}  replay")
for name in NAMES:
    t0 = time.monotonic()
    res = analyze_wcet(load_program(name))
    secs = time.monotonic() - t0
    ok = replay_certificate(res.report.certificate, res.program) == res.report.structure
    print(f"{name:<12} {res.interval.lo:>5} {res.interval.hi:>6} {len(res.paths):>6} {secs:>6.2f}  {'ok' if ok else 'FAILED'}")

# cmpbeq is the only one with two paths: a taken branch costs more.
res = analyze_wcet(load_program("cmpbeq"))
print("\ncmpbeq per path:")
for label, iv in res.paths:
    print(f"  exit {label}: [{iv.lo}, {iv.hi}]")
