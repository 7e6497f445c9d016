import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cobitlab.core import (
    CNOT, H, MAX_DIM, X, Z, DensityMatrix, Isometry, Povm, PureState, RegisterLayout,
    apply, basis_state, copy_basis, discard, fidelity, haar_unitary, haar_vector, make_bell,
    measure, move, neumark_dilate, partial_trace, psd_sqrt, reduced_matrix, reorder, restrict,
    schmidt, state_from_json, state_to_json, tensor, von_neumann_entropy, weyl_operators,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 5)


def two_qubits(vec, parties=("A", "B")):
    return PureState(RegisterLayout.of(("a", parties[0], 2), ("b", parties[1], 2)), vec)


# --- layouts and values


def test_layout_rejects_bad_input():
    with pytest.raises(ValueError):
        RegisterLayout.of(("a", "A", 2), ("a", "B", 2))
    with pytest.raises(ValueError):
        RegisterLayout.of(("a", "Q", 2))
    with pytest.raises(ValueError):
        RegisterLayout.of(("a", "A", 1))
    with pytest.raises(ValueError):
        RegisterLayout.of(*[(f"q{i}", "A", 2) for i in range(21)])
    assert RegisterLayout.of(*[(f"q{i}", "A", 2) for i in range(20)]).total_dim == MAX_DIM


def test_state_norm_and_immutability():
    with pytest.raises(ValueError):
        two_qubits([1, 1, 0, 0])
    s = two_qubits([1, 1, 0, 0] / np.sqrt(2))
    with pytest.raises(ValueError):
        s.amplitudes[0] = 0
    assert PureState.from_vector([3, 4], RegisterLayout.of(("a", "A", 2)), normalize=True).amplitudes[1] == 0.8


def test_bell_state():
    phi = make_bell(2)
    np.testing.assert_allclose(phi.amplitudes, np.array([1, 0, 0, 1]) / np.sqrt(2))
    assert make_bell(3).layout.dims == (3, 3)
    with pytest.raises(ValueError):
        make_bell(1)


def test_partial_trace_of_bell_is_maximally_mixed():
    rho = partial_trace(make_bell(2), ["B"])
    np.testing.assert_allclose(rho.entries, np.eye(2) / 2, atol=1e-15)
    assert von_neumann_entropy(rho) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ValueError):
        partial_trace(make_bell(2), ["A", "B"])
    with pytest.raises(ValueError):
        partial_trace(make_bell(2), ["E"])


def test_partial_trace_by_label():
    s = tensor(make_bell(2), basis_state(RegisterLayout.of(("c", "A", 2)), [1]))
    rho = partial_trace(s, ["c"], by="label")
    np.testing.assert_allclose(rho.entries, np.diag([0, 1]), atol=1e-15)


def test_schmidt_coefficients():
    sch = schmidt(make_bell(4), ["A"])
    np.testing.assert_allclose(sch.coefficients, np.full(4, 0.5), atol=1e-12)
    assert sch.entropy_bits == pytest.approx(2.0, abs=1e-12)
    product = two_qubits([1, 0, 0, 0])
    assert schmidt(product, ["A"]).entropy_bits == 0.0


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.5, 0.6]))
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([1.5, -0.5]))
    with pytest.raises(ValueError):
        DensityMatrix(np.array([[0.5, 1], [0, 0.5]]))


def test_povm_validation():
    with pytest.raises(ValueError):
        Povm.from_operators([np.diag([1, 0]), np.diag([0, 0.9])])
    with pytest.raises(ValueError):
        Povm.from_operators([np.diag([1.5, 0]), np.diag([-0.5, 1])])
    p = Povm.computational(3)
    assert p.labels == ("0", "1", "2") and p.dim == 3


def test_isometry_validation():
    with pytest.raises(ValueError):
        Isometry(np.ones((2, 2)))
    with pytest.raises(ValueError):
        Isometry(np.ones((1, 2)))
    assert Isometry(np.eye(4)[:, :2]).output_dim == 4


def test_apply_cnot_and_hadamard_make_bell():
    s = apply(apply(two_qubits([1, 0, 0, 0]), H, ["a"]), CNOT, ["a", "b"])
    assert fidelity(s, make_bell(2)) == pytest.approx(1.0, abs=1e-15)


def test_apply_target_order_matters():
    s = two_qubits([0, 1, 0, 0])  # |0>_a |1>_b
    out = apply(s, CNOT, ["b", "a"])
    np.testing.assert_allclose(out.amplitudes, [0, 0, 0, 1])


def test_apply_isometry_appends_register():
    s = PureState(RegisterLayout.of(("a", "A", 2)), [0, 1])
    copier = np.zeros((4, 2))
    copier[0, 0] = copier[3, 1] = 1
    out = apply(s, copier, ["a"], new=[("c", "B", 2)])
    assert out.layout.labels == ("a", "c")
    np.testing.assert_allclose(out.amplitudes, [0, 0, 0, 1])


def test_copy_basis_matches_copier_isometry():
    rng = np.random.default_rng(1)
    s = PureState(RegisterLayout.of(("x", "A", 2), ("y", "B", 3)), haar_vector(6, rng))
    copier = np.zeros((4, 2))
    copier[0, 0] = copier[3, 1] = 1
    via_iso = apply(s, copier, ["x"], new=[("x_B", "B", 2)])
    assert fidelity(copy_basis(s, "x", "x_B", "B"), via_iso) == pytest.approx(1.0, abs=1e-14)


def test_move_rename_reorder():
    s = move(make_bell(2), "a", "E")
    assert s.layout.parties == ("E", "B")
    r = reorder(s, ["b", "a"])
    np.testing.assert_allclose(r.amplitudes, s.amplitudes)
    with pytest.raises(ValueError):
        reorder(s, ["a"])


def test_discard_and_restrict():
    s = tensor(basis_state(RegisterLayout.of(("a", "A", 2)), [1]), make_bell(2, ("c", "d")))
    left = discard(s, "a", expected=[0, 1])
    assert fidelity(left, make_bell(2, ("c", "d"))) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        discard(make_bell(2), "a")
    r = restrict(PureState(RegisterLayout.of(("k", "A", 3)), [0.6, 0.8, 0]), "k", [0, 1])
    np.testing.assert_allclose(r.amplitudes, [0.6, 0.8])
    with pytest.raises(ValueError):
        restrict(PureState(RegisterLayout.of(("k", "A", 3)), [0.6, 0, 0.8]), "k", [0, 1])


def test_measure_computational_basis():
    rng = np.random.default_rng(0)
    m = measure(make_bell(2), Povm.computational(2), ["a"], rng)
    assert m.probability == pytest.approx(0.5)
    k = int(m.label)
    np.testing.assert_allclose(np.abs(m.post_state.amplitudes), np.eye(4)[3 * k])


def test_json_round_trip():
    rng = np.random.default_rng(3)
    s = PureState(RegisterLayout.of(("a", "A", 2), ("e", "E", 3)), haar_vector(6, rng))
    back = state_from_json(state_to_json(s))
    assert back.layout == s.layout
    np.testing.assert_array_equal(back.amplitudes, s.amplitudes)


def test_weyl_operators_are_orthogonal_unitaries():
    ops = weyl_operators(3)
    gram = np.array([[np.trace(a.conj().T @ b) for b in ops] for a in ops])
    np.testing.assert_allclose(gram, 3 * np.eye(9), atol=1e-12)


# --- randomized invariants


@settings(max_examples=60, deadline=None)
@given(seeds, dims)
def test_haar_unitary_is_unitary_and_preserves_norm(seed, d):
    rng = np.random.default_rng(seed)
    u = haar_unitary(d, rng)
    np.testing.assert_allclose(u.conj().T @ u, np.eye(d), atol=1e-12)
    s = PureState(RegisterLayout.of(("a", "A", d), ("b", "B", 2)), haar_vector(2 * d, rng))
    out = apply(s, u, ["a"])
    assert np.linalg.norm(out.amplitudes) == pytest.approx(1.0, abs=1e-12)


def _random_povm(d, k, rng):
    raw = [(lambda g: g @ g.conj().T)(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) for _ in range(k)]
    s_inv = np.linalg.inv(psd_sqrt(sum(raw)))
    return Povm.from_operators([s_inv @ a @ s_inv for a in raw])


@settings(max_examples=60, deadline=None)
@given(seeds, dims, st.integers(2, 5))
def test_neumark_dilation_is_sound(seed, d, k):
    rng = np.random.default_rng(seed)
    povm = _random_povm(d, k, rng)
    assert np.abs(sum(povm.operators) - np.eye(d)).max() < 1e-8
    v = neumark_dilate(povm)
    np.testing.assert_allclose(v.matrix.conj().T @ v.matrix, np.eye(d), atol=1e-10)
    s = PureState(RegisterLayout.of(("a", "A", d), ("r", "B", 2)), haar_vector(2 * d, rng))
    out = apply(s, v, ["a"], new=[("k", "A", k)])
    rho_a = reduced_matrix(s, ["a"])
    born = [np.trace(rho_a @ op).real for op in povm.operators]
    np.testing.assert_allclose(np.diag(reduced_matrix(out, ["k"])).real, born, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(seeds, dims)
def test_transpose_trick(seed, d):
    rng = np.random.default_rng(seed)
    o = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    phi = make_bell(d).amplitudes
    np.testing.assert_allclose(np.kron(o, np.eye(d)) @ phi, np.kron(np.eye(d), o.T) @ phi, atol=1e-12)
