"""Check a pre/post contract on the modexp function.

The first contract says the function leaves the stack pointer inside the
stack.  The second also claims the result register is always 1, which is
false; the checker reports which condition broke and a concrete witness.
"""

from birsym.contracts import parse_contract, prove_contract
from birsym.derivations import load_program
from birsym.engine import ExploreOptions

p = load_program("modexp")
opts = ExploreOptions(merge_policy="join", unroll_bound=8)

GOOD = """pre 0x1000 <= SP - 4 & SP - 4 <= 0x1500 - 8
entry 1
fragment 1-14
post 0x1000 <= SP - 4 & SP - 4 <= 0x1500 - 8
"""

for title, text in [("stack pointer restored", GOOD), ("result is 1", GOOD.replace("post ", "post R0 == 1 & "))]:
    c = parse_contract(text, p.typing())
    verdict, report = prove_contract(p, c, opts)
    print(f"{title}: {verdict.format()}")
    print(f"  explored {report.stats.get('steps', 0)} steps, {report.stats.get('merges', 0)} merges")
    if not verdict.holds and verdict.witness:
        print("  witness:", ", ".join(f"{k}={v}" for k, v in sorted(verdict.witness.items())))
