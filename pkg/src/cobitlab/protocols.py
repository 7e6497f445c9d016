"""Executable coherent-communication protocols.

Each protocol runs on the dense simulator in :mod:`cobitlab.core`, compares
its final state with an independently built target, and returns a
:class:`Transcript` recording the resources it used up and handed out.
Sending a qubit over a noiseless channel is modelled as handing the
subsystem to the other party.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache, reduce
from itertools import combinations
from math import comb, log2
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .core import (
    CNOT, H, I2, X, Y, Z,
    Povm, PureState, RegisterLayout, Subsystem,
    apply, basis_state, controlled, copy_basis, fidelity, haar_vector, make_bell,
    measure, move, neumark_dilate, psd_sqrt, reorder, schmidt, tensor, von_neumann_entropy,
)
from .core import _apply_matrix, _indices
from .resources import ZERO, ResourceVector


class PreconditionError(ValueError):
    pass


class GentleMeasurementViolation(AssertionError):
    pass


@dataclass(frozen=True)
class Step:
    desc: str
    op: str
    targets: tuple[str, ...]

    def to_json(self):
        return {"desc": self.desc, "op": self.op, "targets": list(self.targets)}


@dataclass
class Transcript:
    protocol: str
    steps: list[Step]
    consumed: ResourceVector
    produced: ResourceVector
    catalysts: ResourceVector
    final_fidelity: float
    target_description: str
    seed: int | None = None
    status: str = "ok"
    outcomes: list[dict] = field(default_factory=list)
    checks: dict[str, float] = field(default_factory=dict)
    final_state: PureState | None = field(default=None, repr=False, compare=False)
    target_state: PureState | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 <= self.final_fidelity <= 1.0:
            raise ValueError(f"final_fidelity {self.final_fidelity} outside [0, 1]")
        if self.catalysts:
            ops = [s.op for s in self.steps]
            if "borrow" not in ops or "return" not in ops:
                raise ValueError("catalysts must be borrowed and returned in the step log")

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> dict:
        return {
            "protocol": self.protocol,
            "seed": self.seed,
            "steps": [s.to_json() for s in self.steps],
            "consumed": self.consumed.to_json(),
            "produced": self.produced.to_json(),
            "catalysts": self.catalysts.to_json(),
            "final_fidelity": self.final_fidelity,
            "target": self.target_description,
            "status": self.status,
            "outcomes": self.outcomes,
            "checks": self.checks,
        }

    def dumps(self, **kw) -> str:
        return json.dumps(self.to_json(), **kw)

    @classmethod
    def from_json(cls, data: dict) -> "Transcript":
        return cls(
            protocol=data["protocol"],
            steps=[Step(s["desc"], s["op"], tuple(s["targets"])) for s in data["steps"]],
            consumed=ResourceVector.from_json(data["consumed"]),
            produced=ResourceVector.from_json(data["produced"]),
            catalysts=ResourceVector.from_json(data["catalysts"]),
            final_fidelity=data["final_fidelity"],
            target_description=data.get("target", ""),
            seed=data.get("seed"),
            status=data.get("status", "ok"),
            outcomes=data.get("outcomes", []),
            checks=data.get("checks", {}),
        )


class Recorder:
    """Accumulates steps and resource flows while a protocol runs."""

    def __init__(self, protocol: str, seed: int | None = None):
        self.protocol = protocol
        self.seed = seed
        self.steps: list[Step] = []
        self.consumed = ZERO
        self.produced = ZERO
        self.borrowed = ZERO
        self.returned = ZERO
        self.outcomes: list[dict] = []
        self.checks: dict[str, float] = {}

    def step(self, desc: str, op: str, targets: Sequence[str]):
        self.steps.append(Step(desc, op, tuple(targets)))

    def consume(self, **counts):
        self.consumed = self.consumed + _rv(counts)

    def produce(self, **counts):
        self.produced = self.produced + _rv(counts)

    def borrow(self, targets: Sequence[str], **counts):
        rv = _rv(counts)
        self.borrowed = self.borrowed + rv
        self.consumed = self.consumed + rv
        self.step(f"borrow catalyst {rv}", "borrow", targets)

    def give_back(self, targets: Sequence[str], **counts):
        rv = _rv(counts)
        self.returned = self.returned + rv
        self.produced = self.produced + rv
        self.step(f"return catalyst {rv}", "return", targets)

    def finish(self, final: PureState | None, target: PureState | None, description: str,
               status: str = "ok") -> Transcript:
        if status != "ok":
            return Transcript(
                protocol=self.protocol, steps=self.steps, consumed=self.consumed, produced=self.produced,
                catalysts=ZERO, final_fidelity=0.0, target_description=description, seed=self.seed,
                status=status, outcomes=self.outcomes, checks=self.checks,
            )
        if self.borrowed != self.returned:
            raise RuntimeError(f"catalyst imbalance: borrowed {self.borrowed}, returned {self.returned}")
        fid = 0.0
        if final is not None and target is not None:
            fid = fidelity(final, reorder(target, final.layout.labels))
        return Transcript(
            protocol=self.protocol, steps=self.steps, consumed=self.consumed, produced=self.produced,
            catalysts=self.borrowed, final_fidelity=fid, target_description=description, seed=self.seed,
            status=status, outcomes=self.outcomes, checks=self.checks, final_state=final,
            target_state=target,
        )


def _rv(counts: dict) -> ResourceVector:
    # keyword-friendly spellings: cobit_fwd -> "cobit->", gate_CNOT -> "gate:CNOT"
    out = {}
    for k, n in counts.items():
        if k.endswith("_fwd"):
            k = k[:-4] + "->"
        elif k.endswith("_bwd"):
            k = k[:-4] + "<-"
        elif k.startswith("gate_"):
            k = "gate:" + k[5:]
        elif k == "remote_qubit":
            k = "remote-qubit"
        out[k] = n
    return ResourceVector(out)


def log2_count(d: int) -> Fraction:
    """``log2 d`` as an exact rational when d is a power of two."""
    if d & (d - 1) == 0:
        return Fraction(d.bit_length() - 1)
    return Fraction(log2(d))


def _ket(vec, n_qubits: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex).ravel()
    if vec.size != 2**n_qubits:
        raise ValueError(f"expected {2**n_qubits} amplitudes, got {vec.size}")
    return vec / np.linalg.norm(vec)


def _pair(x, y=None) -> np.ndarray:
    return _ket(x if y is None else np.kron(_ket(x, 1), _ket(y, 1)), 2)


def bell_pair(l1: str, p1: str, l2: str, p2: str, d: int = 2) -> PureState:
    phi = make_bell(d)
    return PureState(RegisterLayout.of((l1, p1, d), (l2, p2, d)), phi.amplitudes)


def _check_ebit(shared: PureState | None, labels: tuple[str, str]) -> PureState:
    ref = bell_pair(labels[0], "A", labels[1], "B")
    if shared is None:
        return ref
    if shared.layout.dims != (2, 2) or shared.layout.parties != ("A", "B"):
        raise PreconditionError("shared resource must be a two-qubit A|B state")
    if abs(np.vdot(ref.amplitudes, shared.amplitudes)) ** 2 < 1 - 1e-10:
        raise PreconditionError("shared resource is not the ebit |Phi_2>")
    return PureState(ref.layout, shared.amplitudes)


# --------------------------------------------------------------------------
# cobit providers: callables (state, [(source, new_label)...], recorder) -> state


CobitProvider = Callable[[PureState, Sequence[tuple[str, str]], Recorder], PureState]


def _direction(state: PureState, source: str) -> tuple[str, str]:
    party = state.layout[source].party
    if party == "A":
        return "B", "->"
    if party == "B":
        return "A", "<-"
    raise PreconditionError(f"cobit source {source!r} must be held by A or B")


def ideal_cobits(state: PureState, pairs: Sequence[tuple[str, str]], rec: Recorder) -> PureState:
    """Reference cobit map, one use per qubit (``log2 d`` uses for a qudit register)."""
    for src, new in pairs:
        dest, arrow = _direction(state, src)
        state = copy_basis(state, src, new, dest)
        rec.consume(**{f"cobit{arrow}": log2_count(state.layout[src].dim)})
        rec.step(f"cobit{arrow} copies {src} into {new}", "cobit", (src, new))
    return state


def _sdc_block(state: PureState, s1: str, s2: str, tx: str, rx: str, rec: Recorder) -> PureState:
    """Coherent super-dense coding of sources (s1, s2) through the ebit (tx, rx)."""
    dest = state.layout[rx].party
    arrow = "->" if dest == "B" else "<-"
    # Z^{s1} X^{s2}: X acts first
    state = apply(state, controlled([I2, X]), [s2, tx])
    rec.step(f"controlled-X from {s2} on {tx}", "cX", (s2, tx))
    state = apply(state, controlled([I2, Z]), [s1, tx])
    rec.step(f"controlled-Z from {s1} on {tx}", "cZ", (s1, tx))
    state = move(state, tx, dest)
    rec.consume(**{f"qubit{arrow}": 1})
    rec.step(f"send {tx} over a qubit channel ({arrow})", "send", (tx,))
    state = apply(state, CNOT, [tx, rx])
    rec.step(f"decode: CNOT {tx}->{rx}", "CNOT", (tx, rx))
    state = apply(state, H, [tx])
    rec.step(f"decode: H on {tx}", "H", (tx,))
    return state


def sdc_cobits(state: PureState, pairs: Sequence[tuple[str, str]], rec: Recorder) -> PureState:
    """Cobits obtained two at a time from one qubit plus one ebit each."""
    if len(pairs) % 2:
        raise PreconditionError("super-dense coding supplies cobits in pairs")
    for (s1, n1), (s2, n2) in zip(pairs[::2], pairs[1::2]):
        d1, arrow = _direction(state, s1)
        d2, _ = _direction(state, s2)
        if d1 != d2:
            raise PreconditionError("paired cobits must share a direction")
        src_party = state.layout[s1].party
        state = tensor(state, bell_pair(n1, src_party, n2, d1))
        rec.consume(ebit=1)
        rec.step(f"fresh ebit ({n1}, {n2}) for super-dense coding", "ebit", (n1, n2))
        state = _sdc_block(state, s1, s2, n1, n2, rec)
    return state


# --------------------------------------------------------------------------
# protocols


def cobit_channel(state: PureState, source: str, new_label: str | None = None) -> PureState:
    """Ideal cobit ``|x>_A -> |x>_A |x>_B``."""
    sub = state.layout[source]
    if sub.dim != 2:
        raise ValueError(f"cobit source must be a qubit, {source!r} has dim {sub.dim}")
    if sub.party != "A":
        raise ValueError(f"cobit source {source!r} must be held by A")
    return copy_basis(state, source, new_label or f"{source}_B", "B")


def bidir_encoding_output(a: int, b: int) -> np.ndarray:
    """``(H (x) I) CNOT (Y^a (x) Z^b) |Phi_2>`` as a bare 4-vector."""
    mp = np.linalg.matrix_power
    phi = make_bell(2).amplitudes
    return np.kron(H, I2) @ CNOT @ np.kron(mp(Y, a), mp(Z, b)) @ phi


def coherent_sdc(message, shared: PureState | None = None) -> Transcript:
    """Send the two-qubit register ``|a1 a2>_A`` as two cobits using one qubit and one ebit."""
    rec = Recorder("coherent-sdc")
    msg = PureState(RegisterLayout.of(("m1", "A", 2), ("m2", "A", 2)), _ket(message, 2))
    ebit = _check_ebit(shared, ("c1", "c2"))
    state = tensor(msg, ebit)
    rec.consume(ebit=1)
    rec.step("shared ebit (c1, c2)", "ebit", ("c1", "c2"))
    state = _sdc_block(state, "m1", "m2", "c1", "c2", rec)
    rec.produce(cobit_fwd=2)
    target = cobit_channel(cobit_channel(msg, "m1", "c1"), "m2", "c2")
    return rec.finish(state, target, "two ideal cobits applied to the message: |a1a2>_A|a1a2>_B")


def coherent_teleport(psi, shared: PureState | None = None, cobits: CobitProvider = ideal_cobits) -> Transcript:
    """Teleport ``psi`` with the Bell measurement replaced by a basis rotation and two cobits."""
    rec = Recorder("coherent-teleport")
    q = PureState(RegisterLayout.of(("q", "A", 2)), _ket(psi, 1))
    state = tensor(q, _check_ebit(shared, ("a", "b")))
    rec.borrow(("a", "b"), ebit=1)

    state = apply(state, CNOT, ["q", "a"])
    rec.step("rotate Bell basis: CNOT q->a", "CNOT", ("q", "a"))
    state = apply(state, H, ["q"])
    rec.step("rotate Bell basis: H on q", "H", ("q",))
    # (1/2) sum_ij |i>_a |j>_q X^i Z^j |psi>_b
    mp = np.linalg.matrix_power
    mid = sum(np.kron(np.kron(np.eye(2)[j], np.eye(2)[i]), mp(X, i) @ mp(Z, j) @ q.amplitudes)
              for i in (0, 1) for j in (0, 1)) / 2
    rec.checks["rotated_state_fidelity"] = fidelity(state, PureState(state.layout, mid))

    state = cobits(state, [("q", "q_B"), ("a", "a_B")], rec)
    # Bob undoes X^i Z^j with control (a_B, q_B) = (i, j)
    fixes = [mp(Z, j) @ mp(X, i) for i in (0, 1) for j in (0, 1)]
    state = apply(state, controlled(fixes), ["a_B", "q_B", "b"])
    rec.step("controlled (X^i Z^j)^dag from (a_B, q_B) on b", "c-Pauli", ("a_B", "q_B", "b"))

    rec.produce(qubit_fwd=1, ebit=1)
    rec.give_back(("a", "a_B"), ebit=1)
    target = tensor(bell_pair("q", "A", "q_B", "B"), bell_pair("a", "A", "a_B", "B"),
                    PureState(RegisterLayout.of(("b", "B", 2)), q.amplitudes))
    return rec.finish(state, target, "|Phi_2>(q,q_B) |Phi_2>(a,a_B) |psi>_b")


def _encoding_phases() -> np.ndarray:
    """``phase[a, b]`` such that the literal encoding yields ``phase * |a^b>_A |a>_B``."""
    ph = np.empty((2, 2), dtype=complex)
    for a in (0, 1):
        for b in (0, 1):
            ph[a, b] = bidir_encoding_output(a, b)[2 * (a ^ b) + a]
    return ph


def coherent_cnot_bidirectional(a, b=None, shared: PureState | None = None) -> Transcript:
    """One CNOT plus one ebit carries a cobit each way at once.

    The encoding ``Y^a (x) Z^b`` leaves ``|a xor b>`` (with an ``a,b``-dependent
    phase) on Alice's side, so she finishes with a local phase fix and a CNOT
    from her message register.
    """
    rec = Recorder("coherent-cnot")
    msg = PureState(RegisterLayout.of(("a", "A", 2), ("b", "B", 2)), _pair(a, b))
    state = tensor(msg, _check_ebit(shared, ("ea", "eb")))
    rec.consume(gate_CNOT=1, ebit=1)
    rec.step("shared ebit (ea, eb)", "ebit", ("ea", "eb"))

    state = apply(state, controlled([I2, Y]), ["a", "ea"])
    rec.step("Alice: controlled-Y from a on ea", "cY", ("a", "ea"))
    state = apply(state, controlled([I2, Z]), ["b", "eb"])
    rec.step("Bob: controlled-Z from b on eb", "cZ", ("b", "eb"))
    state = apply(state, CNOT, ["ea", "eb"])
    rec.step("one use of the CNOT gate ea->eb", "CNOT", ("ea", "eb"))
    state = apply(state, H, ["ea"])
    rec.step("Alice: H on ea", "H", ("ea",))

    ph = _encoding_phases()
    # entry (a, o) with o = a xor b on ea
    fix = np.diag([1 / ph[av, av ^ o] for av in (0, 1) for o in (0, 1)])
    state = apply(state, fix, ["a", "ea"])
    rec.step("Alice: local phase correction on (a, ea)", "phase", ("a", "ea"))
    state = apply(state, CNOT, ["a", "ea"])
    rec.step("Alice: CNOT a->ea leaves b on ea", "CNOT", ("a", "ea"))

    rec.produce(cobit_fwd=1, cobit_bwd=1)
    target = copy_basis(copy_basis(msg, "a", "eb", "B"), "b", "ea", "A")
    return rec.finish(state, target, "ideal cobit(->) of a into eb and cobit(<-) of b into ea")


def coherent_distributed_cnot(x, y=None, shared: PureState | None = None,
                              forward: CobitProvider = ideal_cobits,
                              backward: CobitProvider = ideal_cobits) -> Transcript:
    """Distributed CNOT from one cobit each way, with both ebits recovered."""
    rec = Recorder("coherent-distributed-cnot")
    msg = PureState(RegisterLayout.of(("x", "A", 2), ("y", "B", 2)), _pair(x, y))
    state = tensor(msg, _check_ebit(shared, ("ea", "eb")))
    rec.borrow(("ea", "eb"), ebit=1)

    state = apply(state, CNOT, ["x", "ea"])
    rec.step("Alice: CNOT x->ea", "CNOT", ("x", "ea"))
    state = forward(state, [("ea", "fb")], rec)
    state = apply(state, CNOT, ["fb", "eb"])
    rec.step("Bob: CNOT fb->eb puts x on eb", "CNOT", ("fb", "eb"))
    state = apply(state, CNOT, ["eb", "y"])
    rec.step("Bob: CNOT eb->y", "CNOT", ("eb", "y"))
    state = apply(state, H, ["eb"])
    rec.step("Bob: H on eb", "H", ("eb",))
    state = backward(state, [("eb", "ga")], rec)
    state = apply(state, controlled([I2, Z]), ["ga", "x"])
    rec.step("Alice: controlled-Z from ga on x", "cZ", ("ga", "x"))

    rec.produce(gate_CNOT=1, ebit=1)
    rec.give_back(("ea", "fb"), ebit=1)
    target = tensor(apply(msg, CNOT, ["x", "y"]), bell_pair("ea", "A", "fb", "B"),
                    bell_pair("ga", "A", "eb", "B"))
    return rec.finish(state, target, "CNOT|x,y> |Phi_2>(ea,fb) |Phi_2>(ga,eb)")


def cobit_degrade(mode: str, state=None) -> Transcript:
    """Turn one cobit into a cbit (discard Alice's copy into E) or an ebit (send |+>)."""
    if mode == "to-cbit":
        rec = Recorder("degrade-cbit")
        vec = _ket(state if state is not None else (1, 0), 1)
        x = PureState(RegisterLayout.of(("x", "A", 2)), vec)
        out = ideal_cobits(x, [("x", "x_B")], rec)
        out = move(out, "x", "E")
        rec.step("Alice discards her copy into the environment", "discard", ("x",))
        rec.produce(cbit_fwd=1)
        target = copy_basis(PureState(RegisterLayout.of(("x", "E", 2)), vec), "x", "x_B", "B")
        return rec.finish(out, target, "cbit channel |x>_A -> |x>_B |x>_E")
    if mode == "to-ebit":
        rec = Recorder("degrade-ebit")
        plus = PureState(RegisterLayout.of(("x", "A", 2)), np.array([1, 1]) / np.sqrt(2))
        out = ideal_cobits(plus, [("x", "x_B")], rec)
        rec.produce(ebit=1)
        return rec.finish(out, bell_pair("x", "A", "x_B", "B"), "|Phi_2>(x, x_B)")
    raise ValueError(f"mode must be 'to-cbit' or 'to-ebit', not {mode!r}")


@lru_cache(maxsize=None)
def _weight_povm(n: int) -> Povm:
    weights = np.array([bin(i).count("1") for i in range(2**n)])
    return Povm.from_operators([np.diag((weights == k).astype(complex)) for k in range(n + 1)])


def entanglement_concentrate(psi, n: int, rng: np.random.Generator) -> Transcript:
    """Concentrate ``n`` copies of a two-qubit pure state by measuring Alice's type.

    Outcome ``k`` (number of Alice qubits found in the weaker Schmidt vector)
    leaves a maximally entangled state of Schmidt rank ``C(n, k)``.
    """
    if not 2 <= n <= 10:
        raise ValueError(f"n must be in [2, 10], got {n}")
    vec = _ket(psi, 2)
    u, s, vh = np.linalg.svd(vec.reshape(2, 2))
    rec = Recorder("concentrate")
    specs = [spec for i in range(n) for spec in ((f"a{i}", "A", 2), (f"b{i}", "B", 2))]
    state = PureState(RegisterLayout.of(*specs), _power(vec, n))
    alice = [f"a{i}" for i in range(n)]
    state = apply(state, reduce(_kron, [u.conj().T] * n), alice)
    rec.step("Alice rotates into her Schmidt basis", "local-unitary", alice)

    result = measure(state, _weight_povm(n), alice, rng)
    k = int(result.label)
    rec.step(f"Alice measures her type: weight {k}", "measure", alice)
    rec.outcomes.append({"label": result.label, "probability": result.probability})
    rec.produce(ebit=log2_count(comb(n, k)))

    p = float(s[0] ** 2)
    rec.checks["p"] = p
    rec.checks["binomial_probability"] = comb(n, k) * p ** (n - k) * (1 - p) ** k
    rec.checks["entropy"] = schmidt(result.post_state, ["A"]).entropy_bits
    target = _type_class_state(state.layout, vh, n, k)
    return rec.finish(result.post_state, target, f"uniform superposition over the C({n},{k}) weight-{k} strings")


def _kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``np.kron`` for vectors and square matrices, without its generic-shape overhead."""
    if a.ndim == 1:
        return np.multiply.outer(a, b).ravel()
    n = a.shape[0] * b.shape[0]
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(n, n)


def _power(vec: np.ndarray, n: int) -> np.ndarray:
    return reduce(_kron, [vec] * n)


def _type_class_state(layout: RegisterLayout, vh: np.ndarray, n: int, k: int) -> PureState:
    """Uniform superposition of the weight-``k`` strings, each pair ``i`` in ``|b_i>_a (x) vh[b_i]``."""
    e = np.eye(2, dtype=complex)
    f = [np.kron(e[b], vh[b]) for b in (0, 1)]
    # sums[w] = sum over strings so far with w ones (elementary symmetric recursion)
    sums = [np.ones(1, dtype=complex)] + [None] * k
    for _ in range(n):
        for w in range(k, -1, -1):
            terms = []
            if sums[w] is not None:
                terms.append(np.multiply.outer(sums[w], f[0]).ravel())
            if w and sums[w - 1] is not None:
                terms.append(np.multiply.outer(sums[w - 1], f[1]).ravel())
            sums[w] = sum(terms) if terms else None
    total = sums[k]
    return PureState(layout, total / np.linalg.norm(total))


def _bob_marginal(vec: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    m = vec.reshape(dims)
    return m.T @ m.conj()


def coherent_hsw_demo(codewords: Sequence, message, dims: tuple[int, int] = (2, 2)) -> Transcript:
    """Exact-decoding instance of coherent HSW coding.

    Bob's reduced codeword states must be mutually orthogonal, so the
    decoding POVM is projective and Bob's Neumark unitary copies the label
    without disturbing the codeword.
    """
    dA, dB = dims
    words = [np.asarray(c, dtype=complex).ravel() for c in codewords]
    if not words or any(w.size != dA * dB for w in words):
        raise ValueError(f"codewords must be vectors of length {dA * dB}")
    words = [w / np.linalg.norm(w) for w in words]
    l = len(words)
    marginals = [_bob_marginal(w, dims) for w in words]
    for i, j in combinations(range(l), 2):
        if abs(np.trace(marginals[i] @ marginals[j])) > 1e-10:
            raise PreconditionError(f"Bob's reductions of codewords {i} and {j} overlap; exact decoding impossible")
    msg_amp = np.asarray(message, dtype=complex).ravel()
    if msg_amp.size != l:
        raise ValueError(f"message needs {l} amplitudes")
    msg_amp = msg_amp / np.linalg.norm(msg_amp)
    ml = max(l, 2)
    padded = np.zeros(ml, dtype=complex)
    padded[:l] = msg_amp
    words_p = words + [words[0]] * (ml - l)

    rec = Recorder("coherent-hsw")
    state = PureState(RegisterLayout.of(("m", "A", ml)), padded)
    e = np.eye(ml, dtype=complex)
    v_psi = np.column_stack([np.kron(e[x], words_p[x]) for x in range(ml)])
    state = apply(state, v_psi, ["m"], new=[("ca", "A", dA), ("cb", "B", dB)])
    rec.consume(gate_U_psi=1)
    rec.step("U_psi: |x>_m -> |x>_m |psi_x>_(ca,cb)", "isometry", ("m", "ca", "cb"))

    projectors = []
    for rho in marginals:
        w, v = np.linalg.eigh(rho)
        sup = v[:, w > 1e-12]
        projectors.append(sup @ sup.conj().T)
    ops = list(projectors)
    labels = [str(x) for x in range(l)]
    rest = np.eye(dB) - sum(projectors)
    if np.trace(rest).real > 1e-9 or len(ops) < 2:
        ops.append(rest)
        labels.append("rest")
    povm = Povm.from_operators(ops, labels)
    state = apply(state, neumark_dilate(povm), ["cb"], new=[("out", "B", len(ops))])
    rec.step("Bob: Neumark-dilated decoding of cb into out", "isometry", ("cb", "out"))
    rec.produce(cobit_fwd=log2_count(l) if l > 1 else 0)

    probs = np.abs(msg_amp) ** 2
    avg = sum(p * r for p, r in zip(probs, marginals))
    ent = float(sum(p * von_neumann_entropy(r) for p, r in zip(probs, marginals)))
    rec.checks["chi"] = von_neumann_entropy(avg) - ent
    rec.checks["E"] = ent

    target_vec = sum(padded[x] * np.kron(np.kron(e[x], words_p[x]), np.eye(len(ops))[x]) for x in range(l))
    target = PureState(state.layout, target_vec)
    return rec.finish(state, target, "sum_x c_x |x>_m |psi_x>_(ca,cb) |x>_out")


class GentleCheck(NamedTuple):
    probability: float
    disturbance: float
    bound: float


def gentle_measurement_check(state: PureState, povm: Povm, outcome_label: str, targets) -> GentleCheck:
    """Probability of an outcome and the disturbance ``1 - F(post, state)`` it causes.

    Raises :class:`GentleMeasurementViolation` if the disturbance exceeds ``2 sqrt(1 - p)``.
    """
    op = povm[outcome_label]
    idx = _indices(state.layout, targets)
    out = _apply_matrix(state.tensor, state.layout.dims, psd_sqrt(op), idx).ravel()
    p = float(np.vdot(out, out).real)
    if p < 1e-14:
        raise ValueError(f"outcome {outcome_label!r} has zero probability")
    post = PureState(state.layout, out / np.sqrt(p))
    disturbance = max(0.0, 1.0 - fidelity(post, state))
    bound = 2 * np.sqrt(max(0.0, 1 - p))
    if disturbance > bound + 1e-12:
        raise GentleMeasurementViolation(f"disturbance {disturbance} exceeds 2 sqrt(1-p) = {bound}")
    return GentleCheck(p, disturbance, float(bound))


# --------------------------------------------------------------------------
# registry used by the CLI and rule certification


N_INPUT_QUBITS = {
    "cobit": 1,
    "coherent-sdc": 2,
    "coherent-teleport": 1,
    "coherent-teleport-sdc": 1,
    "coherent-cnot": 2,
    "coherent-distributed-cnot": 2,
    "degrade-cbit": 1,
    "degrade-ebit": 0,
    "coherent-hsw": 1,
    "concentrate": 2,
}


def make_input(name: str, spec: str, rng: np.random.Generator) -> np.ndarray:
    """Input amplitudes from ``basis`` (all zeros), ``haar`` or an explicit bit string."""
    n = N_INPUT_QUBITS[name]
    if n == 0:
        return np.ones(1, dtype=complex)
    if spec == "basis":
        return np.eye(2**n, dtype=complex)[0]
    if spec == "haar":
        return haar_vector(2**n, rng)
    if len(spec) == n and set(spec) <= {"0", "1"}:
        return np.eye(2**n, dtype=complex)[int(spec, 2)]
    raise ValueError(f"input for {name} must be 'basis', 'haar' or a {n}-bit string, got {spec!r}")


def _run_cobit(vec, rng):
    rec = Recorder("cobit")
    x = PureState(RegisterLayout.of(("x", "A", 2)), vec)
    out = ideal_cobits(x, [("x", "x_B")], rec)
    rec.produce(cobit_fwd=1)
    return rec.finish(out, cobit_channel(x, "x", "x_B"), "|x>_A -> |x>_A |x>_B")


PROTOCOLS: dict[str, Callable[[np.ndarray, np.random.Generator], Transcript]] = {
    "cobit": _run_cobit,
    "coherent-sdc": lambda v, rng: coherent_sdc(v),
    "coherent-teleport": lambda v, rng: coherent_teleport(v),
    "coherent-teleport-sdc": lambda v, rng: coherent_teleport(v, cobits=sdc_cobits),
    "coherent-cnot": lambda v, rng: coherent_cnot_bidirectional(v),
    "coherent-distributed-cnot": lambda v, rng: coherent_distributed_cnot(v),
    "degrade-cbit": lambda v, rng: cobit_degrade("to-cbit", v),
    "degrade-ebit": lambda v, rng: cobit_degrade("to-ebit"),
    "coherent-hsw": lambda v, rng: coherent_hsw_demo([[1, 0, 0, 0], [0, 0, 0, 1]], v),
    "concentrate": lambda v, rng: entanglement_concentrate(v, 4, rng),
}


def run_protocol(name: str, input_spec: str = "basis", seed: int = 0) -> Transcript:
    if name not in PROTOCOLS:
        raise ValueError(f"unknown protocol {name!r}; choose from {sorted(PROTOCOLS)}")
    rng = np.random.default_rng(seed)
    t = PROTOCOLS[name](make_input(name, input_spec, rng), rng)
    t.seed = seed
    return t
