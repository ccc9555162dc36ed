"""Proof-producing symbolic execution for a small binary intermediate language.

Quick start::

    from birsym import parse_program, analyze_wcet
    p = parse_program(open("prog.bir").read())
    print(analyze_wcet(p).interval)
"""

from .contracts import Contract, ContractError, Verdict, check_contract, parse_contract, prove_contract
from .engine import AnalysisReport, BudgetExhausted, Engine, ExploreOptions, explore
from .expr import BinOp, Const, Expr, Ite, Load, Store, Sym, UnOp, Var, evaluate
from .kernel import Kernel, ProgressStructure, ReplayMismatch, RuleError, replay_certificate
from .program import Assert, Assign, CJmp, Cycles, ErrorState, Jmp, Program, State, run_in_fragment, step
from .sampling import check_structure
from .solver import SolverConfig, SolverUnknown, check_sat, check_valid, set_default_config
from .sym import SymError, SymState, initial_state, sstep
from .text import BirSyntaxError, BirTypeError, parse_expr, parse_labels, parse_program, print_expr, print_program
from .timing import CostModel, TimeInterval, analyze_wcet, instrument
from .values import BOOL, MemTy, MemoryValue, Word, WordTy

__version__ = "0.1.0"

__all__ = [
    "AnalysisReport",
    "Assert",
    "Assign",
    "BOOL",
    "BinOp",
    "BirSyntaxError",
    "BirTypeError",
    "BudgetExhausted",
    "CJmp",
    "Const",
    "Contract",
    "ContractError",
    "CostModel",
    "Cycles",
    "Engine",
    "ErrorState",
    "ExploreOptions",
    "Expr",
    "Ite",
    "Jmp",
    "Kernel",
    "Load",
    "MemTy",
    "MemoryValue",
    "Program",
    "ProgressStructure",
    "ReplayMismatch",
    "RuleError",
    "SolverConfig",
    "SolverUnknown",
    "State",
    "Store",
    "Sym",
    "SymError",
    "SymState",
    "TimeInterval",
    "UnOp",
    "Var",
    "Verdict",
    "Word",
    "WordTy",
    "analyze_wcet",
    "check_contract",
    "check_sat",
    "check_structure",
    "check_valid",
    "evaluate",
    "explore",
    "initial_state",
    "instrument",
    "parse_contract",
    "parse_expr",
    "parse_labels",
    "parse_program",
    "print_expr",
    "print_program",
    "prove_contract",
    "replay_certificate",
    "run_in_fragment",
    "set_default_config",
    "sstep",
    "step",
]
