"""Coherent remote state preparation.

A covering set ``{R_k}`` twirls every pure state close to ``I/d``.  From it
Alice builds the POVM ``A_k = d/(n(1+eps/2)) (R_k psi R_k^dag)^T`` plus a
failure element, runs it unitarily on her half of ``|Phi_d>``, cleans up her
system with a controlled ``R_k^T``, and ships ``k`` to Bob with ``log2 n``
cobits.  Bob's controlled ``R_k^dag`` leaves ``|Phi_n> (x) |psi>_B``.

Transposes are taken in the computational basis, which is the Schmidt basis
of the stored ``|Phi_d>``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    PAULIS, Povm, PureState, apply, controlled, discard, fidelity, haar_unitary, haar_vector,
    measure, neumark_dilate, reduced_matrix, restrict, schmidt, tensor, to_pairs, from_pairs,
    weyl_operators, RegisterLayout,
)
from .protocols import PreconditionError, Recorder, Transcript, bell_pair, ideal_cobits, log2_count
from .resources import Delta

SAFETY_FACTOR = 1.1


@dataclass(frozen=True, eq=False)
class CoveringSet:
    d: int
    n: int
    unitaries: tuple[np.ndarray, ...]
    epsilon: float
    certified: bool = True
    test_states: int = 0
    seed: int | None = None

    def __post_init__(self):
        us = tuple(np.array(u, dtype=complex) for u in self.unitaries)
        object.__setattr__(self, "unitaries", us)
        if len(us) != self.n:
            raise ValueError(f"expected {self.n} unitaries, got {len(us)}")
        eye = np.eye(self.d)
        for k, u in enumerate(us):
            if u.shape != (self.d, self.d) or np.abs(u.conj().T @ u - eye).max() > 1e-10:
                raise ValueError(f"R_{k} is not a {self.d}x{self.d} unitary")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    def twirl(self, psi: np.ndarray) -> np.ndarray:
        """``(d/n) sum_k R_k |psi><psi| R_k^dag``."""
        rs = np.stack(self.unitaries) @ psi
        return (self.d / self.n) * np.einsum("ki,kj->ij", rs, rs.conj())

    def slack(self, psi: np.ndarray) -> float:
        """Smallest ``eps`` with ``(1-eps/2) I <= twirl(psi) <= (1+eps/2) I``."""
        w = np.linalg.eigvalsh(self.twirl(psi))
        return float(2 * np.abs(w - 1).max())

    def to_json(self) -> dict:
        return {
            "d": self.d,
            "n": self.n,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "test_states": self.test_states,
            "unitaries": [to_pairs(u) for u in self.unitaries],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, data: dict) -> "CoveringSet":
        return cls(
            d=data["d"], n=data["n"], epsilon=data["epsilon"],
            unitaries=tuple(from_pairs(u) for u in data["unitaries"]),
            test_states=data.get("test_states", 0), seed=data.get("seed"),
        )


def pauli_cover(d: int = 2) -> CoveringSet:
    """Exact cover with ``eps = 0``: the Paulis for a qubit, clock-and-shift operators otherwise."""
    ops = PAULIS if d == 2 else weyl_operators(d)
    return CoveringSet(d, d * d, tuple(ops), 0.0)


def sample_covering(d: int, n: int, rng: np.random.Generator, test_states: int = 500,
                    seed: int | None = None) -> CoveringSet:
    """Draw ``n`` Haar unitaries and certify ``eps`` on Haar test states.

    ``eps`` is the largest slack seen, times a 1.1 safety factor.  The
    certificate is empirical: states outside the sample may need more.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    if n < d * d:
        raise ValueError(f"n = {n} < d^2 = {d * d}: cannot cover")
    us = tuple(haar_unitary(d, rng) for _ in range(n))
    probe = CoveringSet(d, n, us, 0.0, certified=False)
    worst = max(probe.slack(haar_vector(d, rng)) for _ in range(test_states))
    return CoveringSet(d, n, us, SAFETY_FACTOR * worst, certified=True, test_states=test_states, seed=seed)


def check_cover(cover: CoveringSet, rng: np.random.Generator, states: int = 500, tol: float = 1e-9) -> bool:
    """Re-test the operator inequality on fresh Haar states."""
    bound = cover.epsilon / 2 + tol
    for _ in range(states):
        w = np.linalg.eigvalsh(cover.twirl(haar_vector(cover.d, rng)))
        if w.min() < 1 - bound or w.max() > 1 + bound:
            return False
    return True


@dataclass(frozen=True, eq=False)
class RspPovm:
    elements: tuple[np.ndarray, ...]
    fail: np.ndarray
    cover: CoveringSet
    target: np.ndarray

    @property
    def povm(self) -> Povm:
        labels = [str(k) for k in range(len(self.elements))] + ["fail"]
        return Povm.from_operators(list(self.elements) + [self.fail], labels)

    def failure_probability(self) -> float:
        """``<Phi_d| A_fail (x) I |Phi_d> = tr A_fail / d``."""
        return float(np.trace(self.fail).real / self.cover.d)


def _as_vector(psi, d: int) -> np.ndarray:
    vec = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi, dtype=complex).ravel()
    if vec.size != d:
        raise ValueError(f"target state must have dimension {d}")
    return vec / np.linalg.norm(vec)


def build_povm(cover: CoveringSet, psi) -> RspPovm:
    if not cover.certified:
        raise PreconditionError("covering set is not certified")
    d, n, eps = cover.d, cover.n, cover.epsilon
    vec = _as_vector(psi, d)
    scale = d / (n * (1 + eps / 2))
    elems = []
    for r in cover.unitaries:
        phi = r @ vec
        elems.append(scale * np.outer(phi, phi.conj()).T)
    fail = np.eye(d) - sum(elems)
    fail = (fail + fail.conj().T) / 2
    w = np.linalg.eigvalsh(fail)
    if w.min() < -1e-10:
        raise PreconditionError("A_fail is not PSD: the cover's epsilon does not hold for this state")
    if np.trace(fail).real > d * eps + 1e-12:
        raise PreconditionError("tr A_fail exceeds d * epsilon")
    return RspPovm(tuple(elems), fail, cover, vec)


def run_coherent_rsp(psi, cover: CoveringSet, rng: np.random.Generator) -> Transcript:
    """One shot of coherent RSP; a failed success/fail measurement aborts with status ``failed``."""
    d, n = cover.d, cover.n
    rsp = build_povm(cover, psi)
    vec = rsp.target
    rec = Recorder("coherent-rsp")
    ebits = log2_count(d)

    state = bell_pair("a", "A", "b", "B", d)
    rec.borrow(("a", "b"), ebit=ebits)
    state = apply(state, neumark_dilate(rsp.povm), ["a"], new=[("ap", "A", n + 1)])
    rec.step("Alice: Neumark unitary U_A on a, outcome register ap", "isometry", ("a", "ap"))

    ok_proj = np.diag([1.0] * n + [0.0]).astype(complex)
    split = Povm.from_operators([ok_proj, np.eye(n + 1) - ok_proj], ["success", "fail"])
    m = measure(state, split, ["ap"], rng)
    rec.outcomes.append({"label": m.label, "probability": m.probability})
    rec.step(f"Alice: success/fail measurement on ap -> {m.label}", "measure", ("ap",))
    if m.label == "fail":
        return rec.finish(None, None, "aborted: failure outcome", status="failed")

    state = restrict(m.post_state, "ap", range(n))
    rs = cover.unitaries
    psibar = vec.conj()
    rstack = np.stack(rs)
    # amplitude layout (a, b, ap)
    expected = np.einsum("ki,kj->ijk", rstack.conj() @ psibar, rstack @ vec).ravel() / np.sqrt(n)
    rec.checks["success_state_max_dev"] = float(np.abs(state.amplitudes - expected).max())

    state = apply(state, controlled([r.T for r in rs]), ["ap", "a"])
    rec.step("Alice: controlled R_k^T from ap on a", "c-unitary", ("ap", "a"))
    rho_a = reduced_matrix(state, ["a"])
    rec.checks["disentangled_fidelity"] = float(np.real(psibar.conj() @ rho_a @ psibar))
    state = discard(state, "a", expected=psibar)
    rec.step("Alice discards a (left in conj(psi))", "discard", ("a",))

    state = ideal_cobits(state, [("ap", "bp")], rec)
    state = apply(state, controlled([r.conj().T for r in rs]), ["bp", "b"])
    rec.step("Bob: controlled R_k^dag from bp on b", "c-unitary", ("bp", "b"))

    rec.checks["shared_entropy"] = schmidt(state, ["ap"], by="label").entropy_bits
    rec.checks["bob_fidelity"] = float(np.real(vec.conj() @ reduced_matrix(state, ["b"]) @ vec))
    rec.produce(remote_qubit=ebits, ebit=log2_count(n) - ebits)
    rec.give_back(("ap", "bp"), ebit=ebits)
    target = tensor(bell_pair("ap", "A", "bp", "B", n),
                    PureState(RegisterLayout.of(("b", "B", d)), vec))
    return rec.finish(state, target, f"|Phi_{n}>(ap,bp) |psi>_b")


def run_with_retries(psi, cover: CoveringSet, rng: np.random.Generator, retries: int = 0) -> tuple[Transcript, int]:
    """Repeat failed shots up to ``retries`` times; returns the last transcript and attempts used."""
    for attempt in range(1, retries + 2):
        t = run_coherent_rsp(psi, cover, rng)
        if t.ok:
            break
    return t, attempt


def rsp_resource_account(t: Transcript) -> Delta:
    """Net conversion of a successful run, with the borrowed ``Phi_d`` set aside as catalyst."""
    if not t.ok:
        raise ValueError("cannot account a failed RSP run")
    return Delta(t.consumed - t.catalysts, t.produced - t.catalysts, t.catalysts)
