import json
from math import comb, log2

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobitlab.core import Povm, PureState, RegisterLayout, haar_vector, make_bell, schmidt
from cobitlab.protocols import (
    PROTOCOLS, PreconditionError, Transcript, bidir_encoding_output, cobit_degrade, coherent_cnot_bidirectional,
    coherent_distributed_cnot, coherent_hsw_demo, coherent_sdc, coherent_teleport, entanglement_concentrate,
    gentle_measurement_check, run_protocol, sdc_cobits,
)
from cobitlab.resources import ResourceVector

seeds = st.integers(0, 2**32 - 1)
R = ResourceVector


@pytest.mark.parametrize("bits", range(4))
def test_coherent_sdc_basis_messages(bits):
    t = coherent_sdc(np.eye(4)[bits])
    assert t.final_fidelity == pytest.approx(1.0, abs=1e-12)
    assert t.consumed == R({"qubit->": 1, "ebit": 1})
    assert t.produced == R({"cobit->": 2})
    assert not t.catalysts


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_coherent_sdc_haar_messages(seed):
    t = coherent_sdc(haar_vector(4, np.random.default_rng(seed)))
    assert t.final_fidelity >= 1 - 1e-10


def test_coherent_sdc_rejects_non_ebit():
    bad = PureState(RegisterLayout.of(("c1", "A", 2), ("c2", "B", 2)), [1, 0, 0, 0])
    with pytest.raises(PreconditionError):
        coherent_sdc([1, 0, 0, 0], shared=bad)


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_coherent_teleport(seed):
    t = coherent_teleport(haar_vector(2, np.random.default_rng(seed)))
    assert t.final_fidelity >= 1 - 1e-10
    assert t.checks["rotated_state_fidelity"] == pytest.approx(1.0, abs=1e-12)
    assert t.catalysts == R(ebit=1)
    assert t.consumed == R({"cobit->": 2, "ebit": 1})
    assert t.produced == R({"qubit->": 1, "ebit": 2})
    ops = [s.op for s in t.steps]
    assert ops.index("borrow") < ops.index("return")


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_teleport_through_super_dense_coding_closes_the_loop(seed):
    t = coherent_teleport(haar_vector(2, np.random.default_rng(seed)), cobits=sdc_cobits)
    assert t.final_fidelity >= 1 - 1e-9
    # the two cobits were paid for with one qubit and one ebit
    assert t.consumed == R({"qubit->": 1, "ebit": 2})
    assert t.produced == R({"qubit->": 1, "ebit": 2})


def test_bidirectional_encoding_output_table():
    # worked by hand: Y|0> = i|1>, Y|1> = -i|0>; the output is phase * |a xor b>_A |a>_B
    phases = {(0, 0): 1, (0, 1): 1, (1, 0): -1j, (1, 1): 1j}
    for (a, b), ph in phases.items():
        want = np.zeros(4, dtype=complex)
        want[2 * (a ^ b) + a] = ph
        np.testing.assert_allclose(bidir_encoding_output(a, b), want, atol=1e-15)


@pytest.mark.parametrize("a,b", [(0, 0), (0, 1), (1, 0), (1, 1)])
def test_coherent_cnot_basis(a, b):
    t = coherent_cnot_bidirectional(np.eye(2)[a], np.eye(2)[b])
    assert t.final_fidelity == pytest.approx(1.0, abs=1e-12)
    assert t.consumed == R({"gate:CNOT": 1, "ebit": 1})
    assert t.produced == R({"cobit->": 1, "cobit<-": 1})


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_coherent_cnot_superpositions(seed):
    t = coherent_cnot_bidirectional(haar_vector(4, np.random.default_rng(seed)))
    assert t.final_fidelity >= 1 - 1e-10


@pytest.mark.parametrize("x,y", [((1, 0), (1, 0)), ((1, 0), (0, 1)), ((0, 1), (1, 0)), ((0, 1), (0, 1)),
                                 ((1, 1), (1, 0))])
def test_coherent_distributed_cnot(x, y):
    t = coherent_distributed_cnot(np.array(x) / np.linalg.norm(x), np.array(y, dtype=float))
    assert t.final_fidelity >= 1 - 1e-10
    assert schmidt(t.final_state, ["ea", "ga"], by="label").entropy_bits == pytest.approx(2.0, abs=1e-9)
    assert t.catalysts == R(ebit=1)
    assert t.consumed - t.catalysts == R({"cobit->": 1, "cobit<-": 1})
    assert t.produced - t.catalysts == R({"gate:CNOT": 1, "ebit": 1})


def test_degradations():
    t = cobit_degrade("to-cbit", [0.6, 0.8])
    assert t.final_fidelity == pytest.approx(1.0)
    assert t.produced == R({"cbit->": 1}) and t.consumed == R({"cobit->": 1})
    assert "E" in t.final_state.layout.parties
    t = cobit_degrade("to-ebit")
    assert t.produced == R(ebit=1)
    assert schmidt(t.final_state, ["A"]).entropy_bits == pytest.approx(1.0)
    with pytest.raises(ValueError):
        cobit_degrade("to-qubit")


@pytest.mark.parametrize("p", [0.5, 0.7])
def test_concentration_outcome_entropy(p):
    psi = np.array([np.sqrt(p), 0, 0, np.sqrt(1 - p)])
    rng = np.random.default_rng(11)
    for _ in range(20):
        t = entanglement_concentrate(psi, 4, rng)
        k = int(t.outcomes[0]["label"])
        assert t.checks["entropy"] == pytest.approx(log2(comb(4, k)), abs=1e-9)
        assert t.outcomes[0]["probability"] == pytest.approx(t.checks["binomial_probability"], abs=1e-12)
        assert t.final_fidelity >= 1 - 1e-9


def test_concentration_in_a_rotated_schmidt_basis():
    rng = np.random.default_rng(2)
    t = entanglement_concentrate(haar_vector(4, rng), 3, rng)
    assert t.final_fidelity >= 1 - 1e-9
    with pytest.raises(ValueError):
        entanglement_concentrate(haar_vector(4, rng), 11, rng)


def test_hsw_demo_exact_decoding():
    rng = np.random.default_rng(4)
    t = coherent_hsw_demo([[1, 0, 0, 0], [0, 0, 0, 1]], haar_vector(2, rng))
    assert t.final_fidelity >= 1 - 1e-10
    # chi weights the codewords by |c_x|^2; a uniform message gives one bit
    t = coherent_hsw_demo([[1, 0, 0, 0], [0, 0, 0, 1]], np.array([1, 1]) / np.sqrt(2))
    assert t.checks["chi"] == pytest.approx(1.0, abs=1e-12)
    assert t.checks["E"] == pytest.approx(0.0, abs=1e-12)
    assert t.produced == R({"cobit->": 1})


def test_hsw_demo_rejects_overlapping_codewords():
    # two Bell states leave Bob with I/2 either way
    with pytest.raises(PreconditionError):
        coherent_hsw_demo([[1, 0, 0, 1], [0, 1, 1, 0]], [1, 0])
    # |0>|0> and |+>|0> give Bob the same |0>
    with pytest.raises(PreconditionError):
        coherent_hsw_demo([[1, 0, 0, 0], [1, 0, 1, 0]], [1, 0])


@settings(max_examples=40, deadline=None)
@given(seeds, st.floats(0.0, 0.3))
def test_gentle_measurement_bound(seed, angle):
    rng = np.random.default_rng(seed)
    s = PureState(RegisterLayout.of(("a", "A", 2), ("b", "B", 2)), haar_vector(4, rng))
    u = np.linalg.svd(s.tensor)[0]
    # project close to the dominant Schmidt vector of a
    v = u[:, 0] * np.cos(angle) + u[:, 1] * np.sin(angle)
    proj = np.outer(v, v.conj())
    g = gentle_measurement_check(s, Povm.from_operators([proj, np.eye(2) - proj], ["near", "far"]), "near", ["a"])
    assert g.disturbance <= g.bound + 1e-12


def test_transcript_json_round_trip():
    t = run_protocol("coherent-teleport", "haar", 5)
    data = json.loads(t.dumps())
    assert set(data) >= {"protocol", "seed", "steps", "consumed", "produced", "catalysts", "final_fidelity"}
    back = Transcript.from_json(data)
    assert back.consumed == t.consumed and back.catalysts == t.catalysts
    assert back.final_fidelity == t.final_fidelity and back.seed == 5


@pytest.mark.parametrize("name", sorted(PROTOCOLS))
def test_registry_runs(name):
    t = run_protocol(name, "haar", 3)
    assert t.ok and t.final_fidelity >= 1 - 1e-9


def test_run_protocol_inputs():
    t = run_protocol("coherent-sdc", "10", 7)
    assert t.final_fidelity == pytest.approx(1.0)
    with pytest.raises(ValueError):
        run_protocol("coherent-sdc", "101")
    with pytest.raises(ValueError):
        run_protocol("nope")
