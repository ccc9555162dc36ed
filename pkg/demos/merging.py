"""How merge policies keep path counts down.

A chain of independent branches doubles the number of paths at each step
unless paths are merged where the branches join again.

"join" holds paths back at the labels where control flow meets and merges
them there.  "aggressive" merges any two paths that happen to sit at the same
label, but never waits for one, so paths that drift apart can reach the exit
separately.
"""

from birsym.engine import ExploreOptions, explore
from birsym.sym import initial_state
from birsym.text import parse_program

N = 6
lines = ["program chain", "entry 1", f"exit {3 * N + 1}", "var A : w8", "var B : w8", ""]
for i in range(N):
    l = 3 * i + 1
    lines.append(f"{l}: cjmp ((A >> {i}) & 1) == 1 -> {l + 1}, {l + 2}")
    lines.append(f"{l + 1}: B := B + {i + 1}")
    lines.append(f"{l + 2}: B := B ^ {1 << i}")
p = parse_program("\n".join(lines) + "\n")

for policy in ["none", "join", "aggressive"]:
    rep = explore(p, initial_state(p), set(p.stmts), ExploreOptions(merge_policy=policy))
    ps = rep.structure
    print(f"{policy:<10} {len(ps.targets):>3} target(s), {rep.stats['steps']:>4} steps, {rep.stats.get('merges', 0)} merges")
