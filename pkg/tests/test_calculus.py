from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cobitlab.calculus import (
    CertificationError, NotSimulable, ParseError, certify_rule_by_simulation, check_equality, expand, get_rule,
    parse, prove, rule_db,
)
from cobitlab.resources import KINDS, ResourceVector, ZERO

R = ResourceVector
P = parse


def test_rule_db_shape():
    rules = rule_db()
    assert len(rules) == 16
    assert len({r.id for r in rules}) == 16
    assert all(r.source for r in rules)


def test_rule_lookups():
    sdc = get_rule("coherent-sdc")
    assert sdc.lhs == R({"qubit->": 1, "ebit": 1}) and sdc.rhs == R({"cobit->": 2})
    bidir = get_rule("cnot-coherent-bidir")
    assert bidir.catalyst == ZERO and bidir.lhs == R({"gate:CNOT": 1, "ebit": 1})
    assert get_rule("coherent-teleport").catalyst == R(ebit=1)
    assert get_rule("coherent-rsp").asymptotic
    with pytest.raises(KeyError):
        get_rule("nope")


def test_mirrored_rules():
    ids = {r.id for r in expand(rule_db())}
    assert "coherent-sdc(<-)" in ids
    m = next(r for r in expand(rule_db()) if r.id == "coherent-sdc(<-)")
    assert m.lhs == R({"qubit<-": 1, "ebit": 1}) and m.rhs == R({"cobit<-": 2})


@pytest.mark.parametrize("text,want", [
    ("2 cobit-> + 1 ebit", {"cobit->": 2, "ebit": 1}),
    ("1 swap", {"gate:SWAP": 1}),
    ("cnot", {"gate:CNOT": 1}),
    ("1/2 qubit<- + 0.5 cbit", {"qubit<-": Fraction(1, 2), "cbit->": Fraction(1, 2)}),
    ("2 coh→ + eb", {"cobit->": 2, "ebit": 1}),
    ("3 cobits(<-)", {"cobit<-": 3}),
    ("1 gate:U_psi + 2 remote-qubits", {"gate:U_psi": 1, "remote-qubit": 2}),
    ("1 ebit + 1 ebit", {"ebit": 2}),
])
def test_parse(text, want):
    assert parse(text) == R(want)


@pytest.mark.parametrize("text,pos", [("-1 ebit", 0), ("2 foo", 2), ("", 0), ("1 ebit->", 6)])
def test_parse_errors(text, pos):
    with pytest.raises(ParseError) as info:
        parse(text)
    assert info.value.position == pos


def test_prove_coherent_teleportation_with_catalyst():
    d = prove(P("2 cobit->"), P("1 qubit-> + 1 ebit"), allow_catalysis=True, catalyst_budget=P("1 ebit"))
    assert d is not None and d.replay()
    assert [s.rule_id for s in d.steps] == ["coherent-teleport"]
    assert d.borrowed == R(ebit=1) and d.used_catalysis


def test_prove_without_budget_fails_for_catalytic_rule():
    assert prove(P("2 cobit->"), P("1 qubit-> + 1 ebit")) is None


def test_prove_degradation_chain():
    d = prove(P("1 qubit->"), P("1 cbit->"))
    assert [s.rule_id for s in d.steps] == ["qubit-to-cobit", "cobit-to-cbit"]
    assert not d.used_catalysis and not d.used_asymptotic


@pytest.mark.parametrize("a,b,ok", [
    ("1 qubit->", "1 cobit->", True), ("1 cobit->", "1 cbit->", True), ("1 cobit->", "1 ebit", True),
    ("1 cbit->", "1 cobit->", False), ("1 cbit->", "1 ebit", False), ("1 ebit", "1 cbit->", False),
])
def test_degradation_properties(a, b, ok):
    assert (prove(P(a), P(b), max_depth=12) is not None) == ok


def test_check_equality():
    cat = dict(allow_catalysis=True, catalyst_budget=P("2 ebit"))
    assert check_equality(P("2 cobit->"), P("1 qubit-> + 1 ebit"), **cat).kind == "equal"
    assert check_equality(P("1 cnot + 1 ebit"), P("1 cobit-> + 1 cobit<-"), **cat).kind == "equal"
    assert check_equality(P("2 cnot"), P("1 swap"), **cat).kind == "equal"
    assert check_equality(P("1 qubit->"), P("1 cbit->")).kind == "forward"
    assert check_equality(P("1 cbit->"), P("1 qubit->")).kind == "backward"
    assert check_equality(P("1 cbit->"), P("1 ebit")).kind == "neither"


def test_smallest_catalyst_is_borrowed():
    d = prove(P("1 cnot + 1 ebit"), P("1 cobit-> + 1 cobit<-"), allow_catalysis=True, catalyst_budget=P("3 ebit"))
    assert d.borrowed == ZERO


def test_asymptotic_mode():
    assert prove(P("1 cobit->"), P("1 remote-qubit")) is None
    d = prove(P("1 cobit->"), P("1 remote-qubit"), allow_asymptotic=True)
    assert d.used_asymptotic
    d = prove(P("1/2 qubit-> + 1/2 ebit"), P("1 cobit->"), allow_asymptotic=True)
    assert d.scale == 2 and d.replay()
    assert prove(P("1/2 qubit-> + 1/2 ebit"), P("1 cobit->")) is None


def test_depth_bounds():
    with pytest.raises(ValueError):
        prove(P("1 qubit->"), P("1 cbit->"), max_depth=33)
    assert prove(P("1 qubit->"), P("1 cbit->"), max_depth=1) is None
    assert prove(P("1 qubit->"), P("1 qubit->"), max_depth=0).steps == []


def test_replay_detects_tampering():
    d = prove(P("1 qubit->"), P("1 cbit->"))
    d.steps[1] = type(d.steps[1])("cobit-to-ebit", d.steps[1].before, d.steps[1].after)
    with pytest.raises(ValueError):
        d.replay()


def test_derivation_json_and_format():
    d = prove(P("2 cnot"), P("1 swap"), allow_catalysis=True, catalyst_budget=P("2 ebit"))
    data = d.to_json()
    assert data["borrowed"] == {"ebit": 2} and data["steps"][0]["rule"] == "cnot-to-swap"
    text = d.format()
    assert "borrow: 2 ebit" in text and "return: 2 ebit" in text


@pytest.mark.parametrize("rule_id", [r.id for r in rule_db() if r.simulable])
def test_simulable_rules_certify(rule_id):
    cert = certify_rule_by_simulation(rule_id)
    assert cert.final_fidelity >= 1 - 1e-9


def test_certification_errors():
    with pytest.raises(NotSimulable):
        certify_rule_by_simulation("coherent-rsp")
    with pytest.raises(KeyError):
        certify_rule_by_simulation("missing")


def test_certification_reports_mismatch(monkeypatch):
    import cobitlab.calculus as calc

    wrong = calc.ConversionRule("bogus", P("1 qubit->"), P("2 cobit->"), simulable="coherent-sdc")
    monkeypatch.setattr(calc, "rule_db", lambda: (wrong,))
    with pytest.raises(CertificationError, match="consumed"):
        calc.certify_rule_by_simulation("bogus")


# --- properties

kinds = st.sampled_from(KINDS)
vectors = st.dictionaries(kinds, st.integers(0, 2), max_size=3).map(R)

CASES = [("1 qubit->", "1 cbit->"), ("2 cobit->", "1 ebit + 1 cbit->"), ("1 cnot + 1 ebit", "1 cobit->")]


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(CASES), vectors)
def test_monotonicity(case, extra):
    start, goal = P(case[0]), P(case[1])
    assert prove(start, goal, max_depth=6) is not None
    assert prove(start + extra, goal, max_depth=6) is not None


@settings(max_examples=30, deadline=None)
@given(vectors, vectors, st.integers(0, 2))
def test_soundness_and_catalyst_return(start, goal, budget):
    d = prove(start, goal, allow_catalysis=True, catalyst_budget=R(ebit=budget), max_depth=4)
    if d is None:
        return
    assert d.replay()
    assert d.final - goal >= d.borrowed
