import pytest

from birsym.contracts import (
    Contract,
    ContractError,
    check_contract,
    parse_contract,
    prove_contract,
    source_from_precondition,
)
from birsym.derivations import load_program
from birsym.engine import ExploreOptions
from birsym.kernel import Kernel
from birsym.sym import SymError
from birsym.text import BirSyntaxError, parse_expr, parse_program
from birsym.values import BOOL

INC = parse_program(
    """program inc
entry 1
exit 3
var A : w8
var B : w8

1: assert A < 100
2: B := A + 1
"""
)

MODEXP_CONTRACT = """// the function returns with the stack pointer restored
pre 0x1000 <= SP - 4 & SP - 4 <= 0x1500 - 8
entry 1
fragment 1-14
post 0x1000 <= SP - 4 & SP - 4 <= 0x1500 - 8
"""


def _contract(pre, post, entry=1, fragment="1-2"):
    return parse_contract(f"pre {pre}\nentry {entry}\nfragment {fragment}\npost {post}\n", INC.typing())


def test_parse_round_trip():
    c = _contract("A < 5", "B == A + 1")
    again = parse_contract(c.format(), INC.typing())
    assert again == c
    assert c.labels == {1, 2}


def test_missing_precondition_means_true():
    c = parse_contract("entry 1\nfragment 1-2\npost B == A + 1\n", INC.typing())
    assert c.pre == parse_expr("1w1", {})


@pytest.mark.parametrize(
    "text, message",
    [
        ("entry 1\nfragment 1\n", "missing post"),
        ("entry 1\nentry 2\nfragment 1\npost A == A\n", "given twice"),
        ("entry x\nfragment 1\npost A == A\n", "bad entry"),
        ("entry 1\nfragment 1\npost A == A\ncolor blue\n", "unknown field"),
        ("entry 1\nfragment 1\npost B == old(B)\n", "relational"),
    ],
)
def test_malformed_contracts(text, message):
    with pytest.raises(ContractError, match=message):
        parse_contract(text, INC.typing())


def test_syntax_errors_carry_the_line():
    with pytest.raises(BirSyntaxError) as info:
        parse_contract("entry 1\nfragment 1\npost A == \n", INC.typing())
    assert info.value.line == 3


def test_contract_holds():
    verdict, report = prove_contract(INC, _contract("A < 5", "B == A + 1 & B < 6"))
    assert verdict.holds
    assert verdict.format() == "holds"
    assert report.structure.labels <= {1, 2}


def test_failing_postcondition_gives_a_witness():
    verdict, _ = prove_contract(INC, _contract("A < 5", "B < 5"))
    assert not verdict
    assert verdict.condition == 2
    assert int(verdict.witness["A"].split("w")[0], 0) == 4


def test_failing_assertion_violates_the_contract():
    verdict, _ = prove_contract(INC, _contract("1w1", "B == A + 1"))
    assert verdict.condition == 3
    assert "assertion" in verdict.detail


def test_target_inside_the_fragment_is_rejected():
    k = Kernel(INC)
    c = _contract("A < 5", "B == B")
    s = source_from_precondition(1, c.pre, INC.typing())
    ps = k.symbstep(s, {1})
    ps = k.infeasible(ps, next(t for t in ps.targets if isinstance(t, SymError)))
    verdict = check_contract(ps, c)
    assert verdict.condition == 3


def test_structure_for_another_precondition_is_rejected():
    k = Kernel(INC)
    c = _contract("A < 5", "B == B")
    ps = k.symbstep(source_from_precondition(1, parse_expr("A < 7", INC.typing(), expected=BOOL), INC.typing()), {1})
    assert check_contract(ps, c).condition == 1


def test_entry_outside_fragment():
    with pytest.raises(ContractError):
        prove_contract(INC, _contract("A < 5", "B == B", entry=2, fragment="1"))


def test_precondition_must_be_well_typed():
    bad = Contract(parse_expr("A", INC.typing()), 1, frozenset({1, 2}), parse_expr("B == B", INC.typing()))
    with pytest.raises(TypeError):
        prove_contract(INC, bad)


def test_modexp_restores_the_stack_pointer():
    p = load_program("modexp")
    c = parse_contract(MODEXP_CONTRACT, p.typing())
    opts = ExploreOptions(merge_policy="join", unroll_bound=8)
    verdict, _ = prove_contract(p, c, opts)
    assert verdict.holds


def test_modexp_does_not_promise_a_result():
    p = load_program("modexp")
    c = parse_contract(MODEXP_CONTRACT.replace("post 0x1000", "post R0 == 1 & 0x1000"), p.typing())
    verdict, _ = prove_contract(p, c, ExploreOptions(merge_policy="join", unroll_bound=8))
    assert verdict.condition == 2
