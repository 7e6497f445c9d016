"""Dense pure-state simulation primitives.

States live on a :class:`RegisterLayout`: an ordered list of labelled
subsystems, each owned by a party (``A`` sender, ``B`` receiver, ``E``
inaccessible environment, ``S`` shared ancilla).  Amplitudes are stored in
row-major order over the layout, first subsystem most significant.

All values are immutable; every operation returns a new object.  Entropies
are in bits.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import prod
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.linalg import block_diag

PARTIES = ("A", "B", "E", "S")
MAX_DIM = 2**20

NORM_TOL = 1e-12
PSD_TOL = 1e-10
ISOMETRY_TOL = 1e-10
COMPLETENESS_TOL = 1e-8
ZERO_EIG = 1e-12
SQRT_FLOOR = 1e-14
MIN_OUTCOME_PROB = 1e-14

_SQRT1_2 = 1 / np.sqrt(2)
I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT1_2
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)
PAULIS = (I2, X, Y, Z)


# --------------------------------------------------------------------------
# layouts


@dataclass(frozen=True)
class Subsystem:
    label: str
    party: str
    dim: int


@dataclass(frozen=True)
class RegisterLayout:
    subsystems: tuple[Subsystem, ...]

    def __post_init__(self):
        subs = tuple(s if isinstance(s, Subsystem) else Subsystem(*s) for s in self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        labels = [s.label for s in subs]
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate subsystem labels in {labels}")
        for s in subs:
            if s.party not in PARTIES:
                raise ValueError(f"unknown party {s.party!r} for {s.label!r}")
            if int(s.dim) != s.dim or s.dim < 2:
                raise ValueError(f"subsystem {s.label!r} needs integer dim >= 2, got {s.dim}")
        if self.total_dim > MAX_DIM:
            raise ValueError(f"total dimension {self.total_dim} exceeds cap {MAX_DIM}")

    @classmethod
    def of(cls, *specs: tuple[str, str, int]) -> "RegisterLayout":
        return cls(tuple(Subsystem(*s) for s in specs))

    def __len__(self):
        return len(self.subsystems)

    def __iter__(self):
        return iter(self.subsystems)

    @cached_property
    def labels(self) -> tuple[str, ...]:
        return tuple(s.label for s in self.subsystems)

    @cached_property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.subsystems)

    @cached_property
    def parties(self) -> tuple[str, ...]:
        return tuple(s.party for s in self.subsystems)

    @cached_property
    def total_dim(self) -> int:
        return prod(s.dim for s in self.subsystems)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValueError(f"no subsystem labelled {label!r}; have {self.labels}") from None

    def __getitem__(self, label: str) -> Subsystem:
        return self.subsystems[self.index(label)]

    def labels_of(self, parties: Iterable[str]) -> tuple[str, ...]:
        parties = set(parties)
        return tuple(s.label for s in self.subsystems if s.party in parties)

    def _replace(self, i: int, sub: Subsystem) -> "RegisterLayout":
        subs = list(self.subsystems)
        subs[i] = sub
        return RegisterLayout(tuple(subs))


# --------------------------------------------------------------------------
# value types


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PureState:
    layout: RegisterLayout
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _readonly(np.ravel(self.amplitudes))
        object.__setattr__(self, "amplitudes", amps)
        if amps.size != self.layout.total_dim:
            raise ValueError(f"{amps.size} amplitudes for layout of dimension {self.layout.total_dim}")
        norm2 = float(np.vdot(amps, amps).real)
        if abs(norm2 - 1) > NORM_TOL:
            raise ValueError(f"state not normalised: |psi|^2 = {norm2!r}")

    @classmethod
    def from_vector(cls, vec, layout: RegisterLayout, normalize: bool = False) -> "PureState":
        vec = np.asarray(vec, dtype=complex).ravel()
        if normalize:
            vec = vec / np.linalg.norm(vec)
        return cls(layout, vec)

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def __repr__(self):
        return f"PureState({list(self.layout.labels)}, dims={list(self.layout.dims)})"


def basis_state(layout: RegisterLayout, indices: Sequence[int]) -> PureState:
    vec = np.zeros(layout.total_dim, dtype=complex)
    vec[np.ravel_multi_index(tuple(indices), layout.dims)] = 1
    return PureState(layout, vec)


def qubit(label: str, party: str, amplitudes=(1, 0)) -> PureState:
    return PureState.from_vector(amplitudes, RegisterLayout.of((label, party, 2)), normalize=True)


def tensor(*states: PureState) -> PureState:
    layout = RegisterLayout(tuple(s for st in states for s in st.layout))
    vec = np.ones(1, dtype=complex)
    for st in states:
        vec = np.kron(vec, st.amplitudes)
    return PureState(layout, vec)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    entries: np.ndarray
    dims: tuple[int, ...] | None = None

    def __post_init__(self):
        m = _readonly(self.entries)
        object.__setattr__(self, "entries", m)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        if self.dims is None:
            object.__setattr__(self, "dims", (m.shape[0],))
        if not np.allclose(m, m.conj().T, atol=1e-10, rtol=0):
            raise ValueError("density matrix not Hermitian")
        if abs(np.trace(m).real - 1) > 1e-10:
            raise ValueError(f"density matrix trace {np.trace(m).real!r} != 1")
        if np.linalg.eigvalsh(m).min() < -PSD_TOL:
            raise ValueError("density matrix has negative eigenvalues")

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix (or stack of them) via its clipped spectrum.

    Eigenvalues within ``SQRT_FLOOR`` of zero are treated as exact zeros, so
    rank-deficient operators do not pick up ``sqrt(noise)`` components.
    """
    a = np.asarray(a, dtype=complex)
    w, v = np.linalg.eigh((a + np.swapaxes(a.conj(), -1, -2)) / 2)
    if w.size and w.min() < -PSD_TOL:
        raise ValueError(f"matrix not PSD (min eigenvalue {w.min():.3e})")
    w = np.where(w > SQRT_FLOOR, w, 0.0)
    return (v * np.sqrt(w)[..., None, :]) @ np.swapaxes(v.conj(), -1, -2)


@dataclass(frozen=True, eq=False)
class Povm:
    """Labelled positive operators summing to the identity."""

    elements: tuple[tuple[str, np.ndarray], ...]

    def __post_init__(self):
        elems = tuple((str(lab), _readonly(op)) for lab, op in self.elements)
        object.__setattr__(self, "elements", elems)
        if not elems:
            raise ValueError("empty POVM")
        labels = [lab for lab, _ in elems]
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate POVM labels")
        d = elems[0][1].shape[0]
        for lab, op in elems:
            if op.shape != (d, d):
                raise ValueError(f"element {lab!r} has shape {op.shape}, expected {(d, d)}")
        ops = np.stack([op for _, op in elems])
        herm_err = np.abs(ops - np.swapaxes(ops.conj(), -1, -2)).max(axis=(1, 2))
        min_eig = np.linalg.eigvalsh(ops).min(axis=1)
        for (lab, _), herr, mine in zip(elems, herm_err, min_eig):
            if herr > PSD_TOL:
                raise ValueError(f"element {lab!r} is not Hermitian")
            if mine < -PSD_TOL:
                raise ValueError(f"element {lab!r} is not PSD")
        if np.abs(ops.sum(axis=0) - np.eye(d)).max() > COMPLETENESS_TOL:
            raise ValueError("POVM elements do not sum to the identity")

    @classmethod
    def from_operators(cls, ops: Sequence[np.ndarray], labels: Sequence[str] | None = None) -> "Povm":
        labels = labels if labels is not None else [str(k) for k in range(len(ops))]
        return cls(tuple(zip(labels, ops)))

    @classmethod
    def computational(cls, dim: int) -> "Povm":
        eye = np.eye(dim, dtype=complex)
        return cls.from_operators([np.outer(eye[k], eye[k]) for k in range(dim)])

    @property
    def dim(self) -> int:
        return self.elements[0][1].shape[0]

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.elements)

    @property
    def operators(self) -> tuple[np.ndarray, ...]:
        return tuple(op for _, op in self.elements)

    def __len__(self):
        return len(self.elements)

    def __getitem__(self, label: str) -> np.ndarray:
        for lab, op in self.elements:
            if lab == label:
                return op
        raise KeyError(label)


@dataclass(frozen=True, eq=False)
class Isometry:
    """Matrix ``V`` with orthonormal columns (``V^dag V = I``)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _readonly(self.matrix)
        object.__setattr__(self, "matrix", m)
        if m.ndim != 2 or m.shape[0] < m.shape[1]:
            raise ValueError(f"isometry needs output_dim >= input_dim, got shape {m.shape}")
        err = np.abs(m.conj().T @ m - np.eye(m.shape[1])).max()
        if err > ISOMETRY_TOL:
            raise ValueError(f"columns not orthonormal (max deviation {err:.3e})")

    @property
    def input_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def output_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_unitary(self) -> bool:
        return self.input_dim == self.output_dim


# --------------------------------------------------------------------------
# constructors


def make_bell(d: int = 2, labels: tuple[str, str] = ("a", "b")) -> PureState:
    """``(1/sqrt d) sum_i |i>_A |i>_B``."""
    if int(d) != d or d < 2:
        raise ValueError(f"Bell state needs d >= 2, got {d}")
    layout = RegisterLayout.of((labels[0], "A", d), (labels[1], "B", d))
    return PureState(layout, np.eye(d, dtype=complex).ravel() / np.sqrt(d))


def haar_unitary(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random ``d x d`` unitary: QR of a Ginibre matrix with fixed R phases."""
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    diag = np.diag(r)
    return q * (diag / np.abs(diag))


def haar_vector(d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    return v / np.linalg.norm(v)


def controlled(unitaries: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_k |k><k| (x) U_k``; the control register comes first."""
    return block_diag(*[np.asarray(u, dtype=complex) for u in unitaries])


def weyl_operators(d: int) -> list[np.ndarray]:
    """The ``d^2`` clock-and-shift operators ``X^a Z^b``; Paulis (up to phase) for d=2."""
    omega = np.exp(2j * np.pi / d)
    shift = np.roll(np.eye(d, dtype=complex), 1, axis=0)
    clock = np.diag(omega ** np.arange(d))
    mp = np.linalg.matrix_power
    return [mp(shift, a) @ mp(clock, b) for a in range(d) for b in range(d)]


# --------------------------------------------------------------------------
# layout manipulation


def _indices(layout: RegisterLayout, targets) -> list[int]:
    if isinstance(targets, str):
        targets = [targets]
    idx = [layout.index(t) for t in targets]
    if len(set(idx)) != len(idx):
        raise ValueError(f"repeated target in {targets}")
    return idx


def _split(state: PureState, idx: list[int]) -> tuple[np.ndarray, list[int]]:
    """Return ``(M, rest)`` with ``M`` of shape (dim targets, dim rest)."""
    rest = [i for i in range(len(state.layout)) if i not in idx]
    t = np.transpose(state.tensor, idx + rest)
    dt = prod(state.layout.dims[i] for i in idx)
    return t.reshape(dt, -1), rest


def reorder(state: PureState, labels: Sequence[str]) -> PureState:
    idx = _indices(state.layout, labels)
    if len(idx) != len(state.layout):
        raise ValueError("reorder needs every label exactly once")
    layout = RegisterLayout(tuple(state.layout.subsystems[i] for i in idx))
    return PureState(layout, np.transpose(state.tensor, idx).ravel())


def move(state: PureState, label: str, party: str) -> PureState:
    """Hand a subsystem to another party (physical transmission, or discarding into E)."""
    i = state.layout.index(label)
    sub = state.layout.subsystems[i]
    return PureState(state.layout._replace(i, Subsystem(label, party, sub.dim)), state.amplitudes)


def rename(state: PureState, label: str, new_label: str) -> PureState:
    i = state.layout.index(label)
    sub = state.layout.subsystems[i]
    return PureState(state.layout._replace(i, Subsystem(new_label, sub.party, sub.dim)), state.amplitudes)


def copy_basis(state: PureState, source: str, new_label: str, party: str) -> PureState:
    """Coherent copy ``|k>_src -> |k>_src |k>_new``, the new register appended last."""
    i = state.layout.index(source)
    d = state.layout.dims[i]
    t = np.moveaxis(state.tensor, i, 0).reshape(d, -1)
    out = np.zeros((d, t.shape[1], d), dtype=complex)
    k = np.arange(d)
    out[k, :, k] = t
    dims = state.layout.dims
    rest_dims = dims[:i] + dims[i + 1:]
    out = np.moveaxis(out.reshape((d,) + rest_dims + (d,)), 0, i)
    layout = RegisterLayout(state.layout.subsystems + (Subsystem(new_label, party, d),))
    return PureState(layout, out.ravel())


def discard(state: PureState, label: str, expected: np.ndarray | None = None, tol: float = 1e-9) -> PureState:
    """Drop a subsystem that is in a product state with the rest.

    With ``expected`` given, the rest is obtained by projecting onto it, which
    keeps global phases meaningful; otherwise the dominant Schmidt vector is used.
    Raises if the subsystem is still entangled (or not in ``expected``).
    """
    i = state.layout.index(label)
    if len(state.layout) < 2:
        raise ValueError("cannot discard the only subsystem")
    m, rest = _split(state, [i])
    if expected is not None:
        expected = np.asarray(expected, dtype=complex)
        vec = expected.conj() @ m
    else:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
        vec = s[0] * vh[0]
    norm = np.linalg.norm(vec)
    if abs(norm - 1) > tol:
        raise ValueError(f"subsystem {label!r} is not in a product state (overlap {norm:.3e})")
    layout = RegisterLayout(tuple(state.layout.subsystems[j] for j in rest))
    return PureState(layout, vec / norm)


def restrict(state: PureState, label: str, keep: Sequence[int], tol: float = 1e-9) -> PureState:
    """Shrink a register to the basis states in ``keep``; the dropped ones must carry no weight."""
    i = state.layout.index(label)
    t = np.moveaxis(state.tensor, i, 0)
    keep = list(keep)
    dropped = np.delete(t, keep, axis=0)
    if dropped.size and np.vdot(dropped, dropped).real > tol:
        raise ValueError(f"restricting {label!r} would drop amplitude")
    kept = np.moveaxis(t[keep], 0, i)
    kept = kept / np.linalg.norm(kept)
    sub = state.layout.subsystems[i]
    return PureState(state.layout._replace(i, Subsystem(label, sub.party, len(keep))), kept.ravel())


# --------------------------------------------------------------------------
# dynamics


def _apply_matrix(state_tensor: np.ndarray, dims: tuple[int, ...], mat: np.ndarray, idx: list[int],
                  new_dims: tuple[int, ...] = ()) -> np.ndarray:
    n = len(dims)
    rest = [i for i in range(n) if i not in idx]
    t = np.transpose(state_tensor, idx + rest)
    dt = prod(dims[i] for i in idx)
    out = mat @ t.reshape(dt, -1)
    tdims = tuple(dims[i] for i in idx)
    out = out.reshape(tdims + tuple(new_dims) + tuple(dims[i] for i in rest))
    # axes currently ordered: targets, new, rest -> restore layout order, new ones last
    current = idx + [n + j for j in range(len(new_dims))] + rest
    order = [current.index(k) for k in range(n + len(new_dims))]
    return np.transpose(out, order)


def apply(state: PureState, op, targets, new: Sequence[tuple[str, str, int]] = ()) -> PureState:
    """Apply a unitary or isometry to the target subsystems.

    For an isometry with ``output_dim > input_dim`` the extra output factor is
    described by ``new`` (label, party, dim) triples; the operator's output is
    ordered (targets..., new...) and the new subsystems are appended to the layout.
    """
    if not isinstance(op, Isometry):
        op = Isometry(np.asarray(op, dtype=complex))
    mat = op.matrix
    idx = _indices(state.layout, targets)
    dims = state.layout.dims
    din = prod(dims[i] for i in idx)
    if op.input_dim != din:
        raise ValueError(f"operator input dim {op.input_dim} does not match targets ({din})")
    new = tuple(Subsystem(*s) for s in new)
    if din * prod(s.dim for s in new) != op.output_dim:
        raise ValueError(f"operator output dim {op.output_dim} does not match targets x new subsystems")
    out = _apply_matrix(state.tensor, dims, mat, idx, tuple(s.dim for s in new))
    layout = RegisterLayout(state.layout.subsystems + new)
    return PureState(layout, out.ravel())


def reduced_matrix(state: PureState, labels: Sequence[str]) -> np.ndarray:
    """Reduced density matrix on ``labels`` (in the given order), as a bare array."""
    m, _ = _split(state, _indices(state.layout, labels))
    return m @ m.conj().T


class Measurement(NamedTuple):
    label: str
    probability: float
    post_state: PureState


def born_probabilities(state: PureState, povm: Povm, targets) -> np.ndarray:
    idx = _indices(state.layout, targets)
    rho = reduced_matrix(state, [state.layout.labels[i] for i in idx])
    if rho.shape[0] != povm.dim:
        raise ValueError(f"POVM acts on dim {povm.dim}, targets have dim {rho.shape[0]}")
    probs = np.array([np.real(np.trace(rho @ op)) for op in povm.operators])
    return np.clip(probs, 0, None)


def measure(state: PureState, povm: Povm, targets, rng: np.random.Generator) -> Measurement:
    """Sample a POVM outcome; the post-state is ``(sqrt A_k (x) I)|psi>`` renormalised."""
    probs = born_probabilities(state, povm, targets)
    allowed = np.flatnonzero(probs >= MIN_OUTCOME_PROB)
    k = int(rng.choice(allowed, p=probs[allowed] / probs[allowed].sum()))
    idx = _indices(state.layout, targets)
    root = psd_sqrt(povm.operators[k])
    out = _apply_matrix(state.tensor, state.layout.dims, root, idx).ravel()
    out = out / np.linalg.norm(out)
    return Measurement(povm.labels[k], float(probs[k]), PureState(state.layout, out))


def _resolve(layout: RegisterLayout, side: Iterable[str], by: str) -> list[str]:
    side = list(side)
    if by == "party":
        unknown = set(side) - set(PARTIES)
        if unknown:
            raise ValueError(f"unknown parties {sorted(unknown)}")
        return list(layout.labels_of(side))
    if by == "label":
        _indices(layout, side)
        return side
    raise ValueError(f"by must be 'party' or 'label', not {by!r}")


def partial_trace(state: PureState, kept: Iterable[str], by: str = "party") -> DensityMatrix:
    """Reduced state of the kept parties (or, with ``by='label'``, subsystems)."""
    kept = list(kept)
    if by == "party":
        present = set(state.layout.parties)
        if not kept or not set(kept) <= present or set(kept) == present:
            raise ValueError(f"kept parties {kept} must be a nonempty proper subset of {sorted(present)}")
    labels = _resolve(state.layout, kept, by)
    if not labels or len(labels) == len(state.layout):
        raise ValueError("kept set must be a nonempty proper subset")
    rho = reduced_matrix(state, labels)
    dims = tuple(state.layout[lab].dim for lab in labels)
    return DensityMatrix(rho, dims)


def _entropy_from_probs(w: np.ndarray) -> float:
    w = w[w > ZERO_EIG]
    return float(-np.sum(w * np.log2(w))) + 0.0


def von_neumann_entropy(rho) -> float:
    m = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return _entropy_from_probs(np.linalg.eigvalsh(m))


class Schmidt(NamedTuple):
    coefficients: np.ndarray
    entropy_bits: float


def schmidt(state: PureState, cut: Iterable[str], by: str = "party") -> Schmidt:
    """Schmidt coefficients (descending) across ``cut | rest``."""
    labels = _resolve(state.layout, cut, by)
    if not labels or len(labels) == len(state.layout):
        raise ValueError("cut must leave subsystems on both sides")
    m, _ = _split(state, _indices(state.layout, labels))
    s = np.linalg.svd(m, compute_uv=False)
    return Schmidt(s, _entropy_from_probs(s**2))


def fidelity(a: PureState, b: PureState) -> float:
    if a.layout != b.layout:
        raise ValueError(f"layout mismatch: {a.layout.labels} vs {b.layout.labels}")
    return float(min(1.0, abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2))


def neumark_dilate(povm: Povm) -> Isometry:
    """``V|phi> = sum_k (sqrt A_k |phi>) (x) |k>``, outcome register last."""
    if not isinstance(povm, Povm):
        raise ValueError("neumark_dilate expects a Povm")
    roots = psd_sqrt(np.stack(povm.operators))  # (k, d, d)
    k, d, _ = roots.shape
    return Isometry(np.transpose(roots, (1, 0, 2)).reshape(d * k, d))


# --------------------------------------------------------------------------
# serialisation


def to_pairs(a: np.ndarray):
    """Nested lists of ``[re, im]`` pairs."""
    a = np.asarray(a, dtype=complex)
    return np.stack([a.real, a.imag], axis=-1).tolist()


def from_pairs(data) -> np.ndarray:
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def state_to_json(state: PureState) -> dict:
    return {
        "layout": [[s.label, s.party, s.dim] for s in state.layout],
        "amplitudes": to_pairs(state.amplitudes),
    }


def state_from_json(data: dict) -> PureState:
    layout = RegisterLayout.of(*[tuple(s) for s in data["layout"]])
    return PureState(layout, from_pairs(data["amplitudes"]))
