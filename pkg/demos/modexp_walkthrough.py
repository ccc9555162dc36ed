"""Walk through the scripted modular exponentiation derivation.

Run with ``python3 demos/modexp_walkthrough.py``.  Every structure printed
below was built by the kernel's rule functions; the script only decides which
rule to apply next.
"""

from birsym.derivations import load_program, modexp_derivation
from birsym.kernel import replay_certificate
from birsym.sampling import check_structure
from birsym.sym import format_state
from birsym.text import print_program

p = load_program("modexp")
print("The program, as the kernel sees it:\n")
print(print_program(p))

d = modexp_derivation()
ps = d.structure

print("Intermediate results kept by the script:")
for name, part in d.parts.items():
    labels = sorted(part.labels)
    print(f"  {name:<10} labels {labels[0]}..{labels[-1]}  source pc {part.source.pc}  {len(part.targets)} target(s)")

print("\nSource state (the stack pointer precondition is the only path conjunct):")
print(format_state(ps.source))
print("\nThe single target at the exit label:")
print(format_state(ps.targets[0]))
print("\nSymbols the target may rebind while matching:", ", ".join(sorted(s.name for s in ps.free)))

# The certificate lists only the rule applications the final structure needs.
cert = d.kernel.emit_certificate(ps)
print(f"\nCertificate: {len(cert.splitlines()) - 1} steps, {len(cert)} bytes")
again = replay_certificate(cert, p)
print("Replayed structure equal to the original:", again == ps)

# Concrete runs from sampled interpretations of the source must end in a state
# the target matches.
rep = check_structure(ps, p, samples=50, seed=3)
print(f"Sampled concrete runs: {rep.runs}, violations: {len(rep.violations)}")
