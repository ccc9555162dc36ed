"""Command line interface: ``birsym <command> ...``.

Exit codes: 0 success, 1 analysis failure, 2 usage or input error,
3 budget exhausted or solver gave up. Failures print one line
``error <Class>: <detail>`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import shlex
import sys
from pathlib import Path
from typing import List, Optional

from . import solver
from .contracts import ContractError, parse_contract, prove_contract
from .derivations import bundled_programs, load_program
from .engine import BudgetExhausted, CannotAlign, CannotDecideAliasing, ExploreOptions, UnboundedCounter, explore
from .expr import Const, UnboundVariable
from .kernel import ReplayMismatch, RuleError, program_digest, replay_certificate
from .program import ErrorState, ProgramTypeError, State, Truncated, default_store, step
from .sampling import check_structure
from .serial import DecodeError, encode_state
from .sym import UnresolvedJump, initial_state, sym_eval
from .text import BirSyntaxError, BirTypeError, parse_expr, parse_labels, parse_program, print_labels
from .timing import VariableCReserved, analyze_wcet, instrument
from .values import BOOL


class UsageError(Exception):
    pass


EXIT_CODES = [
    ((UsageError, BirSyntaxError, BirTypeError, ProgramTypeError, ContractError, DecodeError, OSError, VariableCReserved), 2),
    ((BudgetExhausted, solver.SolverUnknown, solver.CapExceeded, UnresolvedJump, Truncated), 3),
    ((ReplayMismatch, RuleError, CannotAlign, CannotDecideAliasing, UnboundedCounter), 1),
]


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--solver", choices=["brute", "external"], default=None, help="solver backend")
    common.add_argument("--smt-cmd", default=None, help="command line of the external solver")
    common.add_argument("--seed", type=int, default=0, help="seed for all sampling")
    common.add_argument("--json", action="store_true", help="print JSON records")
    common.add_argument("--jobs", type=int, default=1, help="targets stepped in parallel")

    explore_opts = argparse.ArgumentParser(add_help=False)
    explore_opts.add_argument("--pre", default=None, help="precondition over program variables")
    explore_opts.add_argument("--merge", default="none", help="none, join, aggressive or a label list")
    explore_opts.add_argument("--unroll", type=int, default=None, help="maximum visits of a label minus one")
    explore_opts.add_argument("--forget", default="", help="comma separated variables to forget")
    explore_opts.add_argument("--no-simplify-memory", action="store_true")
    explore_opts.add_argument("--max-paths", type=int, default=256)
    explore_opts.add_argument("--max-steps", type=int, default=100_000)
    explore_opts.add_argument("--cert", default=None, help="write the certificate here")

    ap = argparse.ArgumentParser(prog="birsym", description="Proof-producing symbolic execution for a small binary IL.")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("check", parents=[common], help="parse and type check a program")
    p.add_argument("file")

    p = sub.add_parser("interp", parents=[common], help="run a program concretely")
    p.add_argument("file")
    p.add_argument("--entry", type=lambda s: int(s, 0), default=None)
    p.add_argument("--env", nargs="*", default=[], metavar="VAR=VALUE")
    p.add_argument("--max-steps", type=int, default=10_000)

    p = sub.add_parser("symexec", parents=[common, explore_opts], help="explore symbolically")
    p.add_argument("file")
    p.add_argument("--entry", type=lambda s: int(s, 0), default=None)
    p.add_argument("--fragment", default=None, help="label ranges; default all labels but the exits")
    p.add_argument("--samples", type=int, default=0, help="differential soundness samples")

    p = sub.add_parser("wcet", parents=[common, explore_opts], help="cycle bounds between labels")
    p.add_argument("file")
    p.add_argument("--entry", type=lambda s: int(s, 0), default=None)
    p.add_argument("--exit", dest="exits", type=lambda s: int(s, 0), action="append", default=None)

    p = sub.add_parser("replay", parents=[common], help="check a certificate against a program")
    p.add_argument("cert")
    p.add_argument("file")

    p = sub.add_parser("contract", parents=[common, explore_opts], help="prove a contract")
    p.add_argument("file")
    p.add_argument("contract")
    return ap


def _configure(args):
    backend = args.solver
    cmd = tuple(shlex.split(args.smt_cmd)) if args.smt_cmd else None
    base = solver.get_config()
    cfg = solver.SolverConfig(
        backend=backend or base.backend,
        brute_width_budget=base.brute_width_budget,
        command=cmd or base.command,
        timeout_ms=base.timeout_ms,
        model_enum_cap=base.model_enum_cap,
        probe_rounds=base.probe_rounds,
    )
    solver.set_default_config(cfg)
    return cfg


def _load(path: str):
    # a bare name that is not a file refers to a bundled program
    if not Path(path).exists() and path in bundled_programs():
        return load_program(path)
    return parse_program(Path(path).read_text())


def _options(args) -> ExploreOptions:
    merge = args.merge
    if merge not in ("none", "join", "aggressive"):
        merge = parse_labels(merge)
    forget = tuple(v for v in args.forget.split(",") if v)
    try:
        return ExploreOptions(
            max_paths=args.max_paths,
            max_steps=args.max_steps,
            merge_policy=merge,
            forget_vars=forget,
            simplify_memory=not args.no_simplify_memory,
            unroll_bound=args.unroll,
            jobs=args.jobs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _pre(args, p):
    return parse_expr(args.pre, p.typing(), expected=BOOL) if args.pre else None


def _out(args, text: str, record: dict):
    if args.json:
        print(json.dumps(record, sort_keys=True))
    else:
        print(text)


def _structure_record(ps) -> dict:
    return {
        "labels": print_labels(ps.labels),
        "source": encode_state(ps.source),
        "targets": [encode_state(t) for t in ps.targets],
        "digest": ps.digest,
    }


def _write_cert(args, report) -> Optional[str]:
    if not args.cert:
        return None
    Path(args.cert).write_text(report.certificate)
    return args.cert


def cmd_check(args) -> int:
    p = _load(args.file)
    _out(
        args,
        f"ok {p.name}: {len(p.stmts)} statements, entry {p.entry}",
        {"ok": True, "name": p.name, "statements": len(p.stmts), "entry": p.entry},
    )
    return 0


def cmd_interp(args) -> int:
    p = _load(args.file)
    typing = p.typing()
    env = default_store(p)
    byname = {v.name: v for v in env}
    for item in args.env:
        name, sep, text = item.partition("=")
        if not sep or name not in byname:
            raise UsageError(f"bad --env item {item!r}")
        e = parse_expr(text, {}, expected=typing[name])
        if not isinstance(e, Const):
            raise UsageError(f"--env value for {name} must be a constant")
        env[byname[name]] = e.value
    s = State(p.entry if args.entry is None else args.entry, env)
    trace = [s]
    while isinstance(s, State) and s.pc in p.stmts and s.pc not in p.exits:
        if len(trace) > args.max_steps:
            raise Truncated(args.max_steps, trace)
        s = step(p, s)
        trace.append(s)
    records = []
    lines = []
    for st in trace:
        vals = {v.name: str(x) for v, x in sorted(st.env.items(), key=lambda kv: kv[0].name)}
        if isinstance(st, ErrorState):
            records.append({"error": True, "env": vals})
            lines.append("error " + " ".join(f"{k}={v}" for k, v in vals.items()))
        else:
            records.append({"pc": st.pc, "env": vals})
            lines.append(f"{st.pc} " + " ".join(f"{k}={v}" for k, v in vals.items()))
    _out(args, "\n".join(lines), {"trace": records})
    return 1 if isinstance(s, ErrorState) else 0


def cmd_symexec(args) -> int:
    p = _load(args.file)
    entry = p.entry if args.entry is None else args.entry
    labels = parse_labels(args.fragment) if args.fragment else p.labels - p.exits
    s0 = initial_state(p, entry)
    pre = _pre(args, p)
    if pre is not None:
        s0 = s0.with_path((sym_eval(pre, s0.env),))
    report = explore(p, s0, labels, _options(args))
    ps = report.structure
    cert = _write_cert(args, report)
    rec = _structure_record(ps)
    rec["stats"] = report.stats
    text = ps.format()
    if args.samples:
        sr = check_structure(ps, p, args.samples, args.seed)
        rec["samples"] = {"runs": sr.runs, "violations": len(sr.violations)}
        text += f"\nsamples {sr.runs} violations {len(sr.violations)}"
        if sr.violations:
            _out(args, text, rec)
            return 1
    if cert:
        text += f"\ncertificate {cert}"
    _out(args, text, rec)
    return 0


def cmd_wcet(args) -> int:
    p = _load(args.file)
    res = analyze_wcet(p, args.entry, args.exits, _pre(args, p), _options(args))
    cert = _write_cert(args, res.report)
    rec = {
        "interval": [res.interval.lo, res.interval.hi],
        "entry": res.entry,
        "exits": list(res.exits),
        "paths": [[pc, iv.lo, iv.hi] for pc, iv in res.paths],
        "digest": res.report.structure.digest,
    }
    _out(args, res.format(cert), rec)
    return 0


def cmd_replay(args) -> int:
    p = _load(args.file)
    text = Path(args.cert).read_text()
    # timing certificates talk about the instrumented program
    try:
        header = json.loads(text.split("\n", 1)[0])
    except ValueError:
        header = {}
    if isinstance(header, dict) and header.get("program") != program_digest(p):
        try:
            q = instrument(p).program
        except ValueError:
            q = None
        if q is not None and header.get("program") == program_digest(q):
            p = q
    ps = replay_certificate(text, p)
    _out(args, f"ok {ps.digest}", {"ok": True, "digest": ps.digest, "structure": _structure_record(ps)})
    return 0


def cmd_contract(args) -> int:
    p = _load(args.file)
    contract = parse_contract(Path(args.contract).read_text(), p.typing())
    verdict, report = prove_contract(p, contract, _options(args))
    cert = _write_cert(args, report)
    text = verdict.format() + (f"\ncertificate {cert}" if cert else "")
    rec = {"holds": verdict.holds, "condition": verdict.condition, "detail": verdict.detail}
    if verdict.witness:
        rec["witness"] = verdict.witness
    _out(args, text, rec)
    return 0 if verdict.holds else 1


COMMANDS = {
    "check": cmd_check,
    "interp": cmd_interp,
    "symexec": cmd_symexec,
    "wcet": cmd_wcet,
    "replay": cmd_replay,
    "contract": cmd_contract,
}


def _fail(exc: BaseException, code: int) -> int:
    detail = " ".join(str(exc).split()) or type(exc).__name__
    print(f"error {type(exc).__name__}: {detail}", file=sys.stderr)
    return code


def run(argv: Optional[List[str]] = None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        _configure(args)
        return COMMANDS[args.cmd](args)
    except BaseException as exc:  # noqa: BLE001 - mapped to exit codes below
        if isinstance(exc, KeyboardInterrupt):
            raise
        for classes, code in EXIT_CODES:
            if isinstance(exc, classes):
                return _fail(exc, code)
        if isinstance(exc, (TypeError, ValueError, UnboundVariable)):
            return _fail(exc, 2)
        raise


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
