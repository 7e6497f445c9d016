"""Holevo quantity, ensemble entanglement and one-use capacities of bipartite gates.

``delta_chi_e`` maximizes ``chi(U E) - chi(E)`` over pure-state ensembles
whose average entanglement drops by at most ``e``.  The search is local
(Nelder-Mead from many starts), so every returned value is a lower bound on
the supremum.  Starting points include simple feasible ensembles, which
makes the result never undercut those witnesses.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import CNOT, SWAP, PureState, RegisterLayout, partial_trace, reorder, von_neumann_entropy

MAX_LOCAL_DIM = 4
MAX_MEMBERS = 8
PROB_TOL = 1e-12
SLACK_TOL = 1e-6
CONCAVITY_TOL = 1e-3
Q_TOL = 1e-3


# --------------------------------------------------------------------------
# ensembles


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Pure bipartite states ``psi_i`` with probabilities ``p_i``; parties A and B only."""

    probabilities: tuple[float, ...]
    states: tuple[PureState, ...]

    def __post_init__(self):
        p = tuple(float(x) for x in self.probabilities)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "states", tuple(self.states))
        if len(p) != len(self.states) or not p:
            raise ValueError("need one probability per state")
        if min(p) <= 0 or abs(sum(p) - 1) > PROB_TOL:
            raise ValueError("probabilities must be positive and sum to 1")
        layout = self.states[0].layout
        if any(s.layout != layout for s in self.states):
            raise ValueError("all members must share a layout")
        if set(layout.parties) - {"A", "B"} or len(set(layout.parties)) != 2:
            raise ValueError("members must be split between parties A and B")

    @property
    def layout(self) -> RegisterLayout:
        return self.states[0].layout

    @classmethod
    def from_arrays(cls, probabilities, vectors, dims: tuple[int, int]) -> "Ensemble":
        layout = RegisterLayout.of(("a", "A", dims[0]), ("b", "B", dims[1]))
        vectors = np.asarray(vectors, dtype=complex).reshape(len(probabilities), -1)
        return cls(tuple(probabilities),
                   tuple(PureState(layout, v / np.linalg.norm(v)) for v in vectors))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, tuple[int, int]]:
        """``(p, psi)`` with ``psi`` shaped ``(m, dA, dB)``, Alice's registers first."""
        lay = self.layout
        a, b = lay.labels_of("A"), lay.labels_of("B")
        da = math.prod(lay[x].dim for x in a)
        db = math.prod(lay[x].dim for x in b)
        psi = np.stack([reorder(s, a + b).amplitudes for s in self.states]).reshape(-1, da, db)
        return np.array(self.probabilities), psi, (da, db)


def chi(ens: Ensemble) -> float:
    """Holevo quantity of Bob's reduced ensemble, in bits."""
    avg = sum(p * partial_trace(s, ["B"]).entries for p, s in zip(ens.probabilities, ens.states))
    return max(von_neumann_entropy(avg) - ensemble_entanglement(ens), 0.0)


def ensemble_entanglement(ens: Ensemble) -> float:
    return float(sum(p * von_neumann_entropy(partial_trace(s, ["B"]))
                     for p, s in zip(ens.probabilities, ens.states)))


def apply_gate(u: np.ndarray, ens: Ensemble) -> Ensemble:
    """Apply ``u`` to every member; ``u`` acts on Alice's registers then Bob's."""
    p, psi, (da, db) = ens.arrays()
    out = psi.reshape(len(p), -1) @ np.asarray(u).T
    return Ensemble.from_arrays(p, out, (da, db))


def flagged_mixture(weights: Sequence[float], parts: Sequence[Ensemble]) -> Ensemble:
    """``{w_j q_ji, |j>_A|j>_B (x) psi_ji}``: mixes ensembles behind orthogonal local flags.

    Gates act on the unflagged part only, so ``chi`` gains and entanglement
    drops of the result are the ``w``-averages of the parts'.
    """
    if len(weights) != len(parts) or not parts:
        raise ValueError("need one weight per ensemble")
    dims = {e.arrays()[2] for e in parts}
    if len(dims) != 1:
        raise ValueError("ensembles must share local dimensions")
    (da, db), k = dims.pop(), len(parts)
    probs, vecs = [], []
    for j, (w, e) in enumerate(zip(weights, parts)):
        p, psi, _ = e.arrays()
        for q, s in zip(p, psi):
            full = np.zeros((k, da, k, db), dtype=complex)
            full[j, :, j, :] = s
            probs.append(w * q)
            vecs.append(full.ravel())
    return Ensemble.from_arrays(probs, vecs, (k * da, k * db))


def lift_gate(u: np.ndarray, dims: tuple[int, int], flags: int) -> np.ndarray:
    """``u`` on the data registers of a :func:`flagged_mixture`, identity on the flags."""
    da, db = dims
    # layout is (fa, a, fb, b); u acts on (a, b)
    u4 = np.asarray(u).reshape(da, db, da, db)
    eye = np.eye(flags)
    big = np.einsum("AC,BD,ijkl->AiBjCkDl", eye, eye, u4)
    n = flags * flags * da * db
    return big.reshape(n, n)


# --------------------------------------------------------------------------
# vectorized evaluation


def _entropy_bits(w: np.ndarray) -> np.ndarray:
    w = np.clip(w, 0, None)
    logs = np.log2(np.where(w > 1e-15, w, 1.0))
    return -(w * logs).sum(axis=-1)


def _chi_and_e(p: np.ndarray, psi: np.ndarray) -> tuple[float, float]:
    """``psi`` shaped ``(m, dA, dB)``."""
    rho = np.einsum("mai,maj->mij", psi, psi.conj())
    avg = np.einsum("m,mij->ij", p, rho)
    s = _entropy_bits(np.linalg.eigvalsh(np.concatenate([rho, avg[None]])))
    e = float(p @ s[:-1])
    return max(float(s[-1]) - e, 0.0), e


def _eigvalsh(h: np.ndarray) -> np.ndarray:
    if h.shape[-1] != 2:
        return np.linalg.eigvalsh(h)
    # closed form for qubits: the generic LAPACK call dominates the cost
    a, d = h[..., 0, 0].real, h[..., 1, 1].real
    r = np.sqrt((a - d) ** 2 / 4 + np.abs(h[..., 0, 1]) ** 2)
    mid = (a + d) / 2
    return np.stack([mid - r, mid + r], axis=-1)


class _Problem:
    def __init__(self, u: np.ndarray, dims: tuple[int, int], m: int, e: float):
        self.u_t = np.asarray(u, dtype=complex).T
        self.dims, self.m, self.e = dims, m, e
        self.dim = dims[0] * dims[1]

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m, d = self.m, self.dim
        z = x[:m]
        p = np.exp(z - z.max())
        p /= p.sum()
        v = x[m:].reshape(m, 2, d)
        psi = v[:, 0] + 1j * v[:, 1]
        norms = np.linalg.norm(psi, axis=1, keepdims=True)
        psi = psi / np.where(norms > 1e-300, norms, 1.0)
        return p, psi

    def pack(self, p: np.ndarray, psi: np.ndarray) -> np.ndarray:
        z = np.log(np.clip(p, 1e-12, None))
        return np.concatenate([z - z.mean(), np.stack([psi.real, psi.imag], axis=1).ravel()])

    def evaluate(self, x: np.ndarray) -> tuple[float, float]:
        """``(chi gain, entanglement drop)``; before and after share one batched eigensolve."""
        m, d = self.m, self.dim
        z = x[:m]
        p = np.exp(z - z.max())
        p /= p.sum()
        v = x[m:].reshape(m, 2, d)
        psi = v[:, 0] + 1j * v[:, 1]
        both = np.stack([psi, psi @ self.u_t]).reshape(2, m, *self.dims)
        # Bob's unnormalized reductions, then divide by the norms
        rho = np.swapaxes(both, 2, 3) @ both.conj()
        norms = np.trace(rho, axis1=2, axis2=3).real
        rho /= np.where(norms > 1e-300, norms, 1.0)[..., None, None]
        avg = np.tensordot(rho, p, axes=([1], [0]))[:, None]
        w = _eigvalsh(np.concatenate([rho, avg], axis=1))
        w = np.clip(w, 1e-300, None)
        s = -(w * np.log2(w)).sum(axis=-1)
        e0, e1 = s[0, :m] @ p, s[1, :m] @ p
        chi0, chi1 = max(s[0, m] - e0, 0.0), max(s[1, m] - e1, 0.0)
        return float(chi1 - chi0), float(e0 - e1)


# --------------------------------------------------------------------------
# optimizer


class CapacityResult(NamedTuple):
    value: float  # bits; -inf when infeasible
    e: float
    status: str  # "converged", "budget-exhausted" or "infeasible"
    slack: float  # e minus the entanglement drop of the best ensemble
    restarts: int
    restart_values: tuple[float, ...]
    best: Ensemble | None

    def to_json(self) -> dict:
        finite = math.isfinite(self.value)
        best = None
        if self.best is not None:
            p, psi, dims = self.best.arrays()
            best = {"dims": list(dims), "probabilities": p.tolist(),
                    "states": [[[float(c.real), float(c.imag)] for c in s.ravel()] for s in psi]}
        return {
            "value": self.value if finite else None,
            "e": self.e,
            "status": self.status,
            "optimizer_trace": {
                "restarts": self.restarts,
                "restart_values": [v if math.isfinite(v) else None for v in self.restart_values],
                "constraint_slack": self.slack if finite else None,
                "best_ensemble": best,
            },
        }


def _dims_of(u: np.ndarray, dims: tuple[int, int] | None) -> tuple[int, int]:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError("gate must be a square matrix")
    if dims is None:
        d = math.isqrt(u.shape[0])
        if d * d != u.shape[0]:
            raise ValueError("cannot infer local dimensions; pass dims")
        dims = (d, d)
    if dims[0] * dims[1] != u.shape[0]:
        raise ValueError(f"dims {dims} do not match a {u.shape[0]}-dimensional gate")
    if max(dims) > MAX_LOCAL_DIM or min(dims) < 2:
        raise ValueError(f"local dimensions must be in [2, {MAX_LOCAL_DIM}]")
    if np.abs(u.conj().T @ u - np.eye(u.shape[0])).max() > 1e-10:
        raise ValueError("gate is not unitary")
    return dims


def structured_ensembles(dims: tuple[int, int]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Simple ensembles: Alice's basis, Bob's basis, and maximally entangled states under Alice's Weyl operators."""
    da, db = dims
    eye = np.eye(da * db).reshape(da, db, da * db)
    out = {
        "alice-basis": (np.full(da, 1 / da), np.stack([eye[i, 0] for i in range(da)])),
        "bob-basis": (np.full(db, 1 / db), np.stack([eye[0, j] for j in range(db)])),
    }
    k = min(da, db)
    phi = np.zeros((da, db), dtype=complex)
    for i in range(k):
        phi[i, i] = 1 / np.sqrt(k)
    clock = np.diag(np.exp(2j * np.pi * np.arange(da) / da))
    shift = np.roll(np.eye(da), 1, axis=0)
    members = [np.linalg.matrix_power(shift, a) @ np.linalg.matrix_power(clock, b) @ phi
               for a in range(da) for b in range(da)]
    out["max-entangled"] = (np.full(len(members), 1 / len(members)), np.stack([s.ravel() for s in members]))
    return out


def _fit(p: np.ndarray, psi: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Truncate or pad (by splitting members) to exactly ``m`` members."""
    p, psi = p[:m] / p[:m].sum(), psi[:m]
    while len(p) < m:
        i = int(np.argmax(p))
        p = np.concatenate([p, [p[i] / 2]])
        p[i] /= 2
        psi = np.concatenate([psi, psi[i:i + 1]])
    return p, psi


def _run_restart(args) -> tuple[float, np.ndarray | None, bool]:
    """One penalized Nelder-Mead run; returns the best feasible value seen, its point, and convergence."""
    prob, x0, maxfev, penalty, rounds = args
    best = [-np.inf, None]

    def objective(x, w):
        gain, drop = prob.evaluate(x)
        viol = drop - prob.e
        if viol <= SLACK_TOL and gain > best[0]:
            best[0], best[1] = gain, x.copy()
        v = max(viol, 0.0)
        return -gain + w * (v + v * v)

    x, w, converged = x0, penalty, False
    for _ in range(rounds):
        res = minimize(objective, x, args=(w,), method="Nelder-Mead",
                       options={"maxfev": maxfev, "xatol": 1e-7, "fatol": 1e-10, "adaptive": True})
        x, converged = res.x, bool(res.success)
        _, drop = prob.evaluate(x)
        if drop - prob.e <= SLACK_TOL:
            break
        w *= 2
    return best[0], best[1], converged


def delta_chi_e(u: np.ndarray, e: float, *, m: int = 4, restarts: int = 32, maxfev: int = 2000,
                penalty: float = 4.0, penalty_rounds: int = 6, seed: int = 0,
                dims: tuple[int, int] | None = None, warm_starts: Sequence[np.ndarray] = (),
                workers: int | None = None) -> CapacityResult:
    """Best ``chi(U E) - chi(E)`` found with ``E(E) - E(U E) <= e`` (a lower bound on the supremum).

    The first restarts begin at :func:`structured_ensembles` and any
    ``warm_starts`` (packed parameter vectors); the rest are random, each
    seeded from ``(seed, restart index)``.
    """
    dims = _dims_of(u, dims)
    if not 1 <= m <= MAX_MEMBERS:
        raise ValueError(f"ensemble size must be in [1, {MAX_MEMBERS}]")
    if restarts < 1:
        raise ValueError("need at least one restart")
    prob = _Problem(u, dims, m, float(e))
    starts = [prob.pack(*_fit(p, psi, m)) for p, psi in structured_ensembles(dims).values()]
    starts += [np.asarray(w, dtype=float) for w in warm_starts if np.size(w) == m * (1 + 2 * prob.dim)]
    for idx in range(len(starts), restarts):
        rng = np.random.default_rng([seed, idx])
        starts.append(rng.normal(size=m * (1 + 2 * prob.dim)))
    starts = starts[:max(restarts, 1)]
    jobs = [(prob, x0, maxfev, penalty, penalty_rounds) for x0 in starts]
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_restart, jobs))
    else:
        results = [_run_restart(j) for j in jobs]
    values = tuple(r[0] for r in results)
    i = int(np.argmax(values))
    value, x, converged = results[i]
    if x is None:
        return CapacityResult(-math.inf, float(e), "infeasible", -math.inf, len(starts), values, None)
    gain, drop = prob.evaluate(x)
    p, psi = prob.unpack(x)
    return CapacityResult(float(value), float(e), "converged" if converged else "budget-exhausted",
                          float(e - drop), len(starts), values, Ensemble.from_arrays(p, psi, dims))


def pack_ensemble(ens: Ensemble) -> np.ndarray:
    """Parameter vector for ``warm_starts``."""
    p, psi, dims = ens.arrays()
    return _Problem(np.eye(dims[0] * dims[1]), dims, len(p), 0.0).pack(p, psi.reshape(len(p), -1))


# --------------------------------------------------------------------------
# witnesses and derived quantities


@dataclass(frozen=True)
class Witness:
    name: str
    gain: float
    drop: float

    def feasible(self, e: float) -> bool:
        return self.drop - e <= SLACK_TOL


def witnesses(u: np.ndarray, dims: tuple[int, int] | None = None) -> list[Witness]:
    """Exact ``chi`` gain and entanglement drop of each structured ensemble under ``u``."""
    dims = _dims_of(u, dims)
    out = []
    for name, (p, psi) in structured_ensembles(dims).items():
        ens = Ensemble.from_arrays(p, psi, dims)
        after = apply_gate(u, ens)
        out.append(Witness(name, chi(after) - chi(ens),
                           ensemble_entanglement(ens) - ensemble_entanglement(after)))
    return out


def witness_checks(u: np.ndarray, result: CapacityResult, dims=None, tol: float = SLACK_TOL) -> list[dict]:
    checks = []
    for w in witnesses(u, dims):
        if w.feasible(result.e):
            checks.append({"witness": w.name, "value": w.gain, "passed": bool(result.value >= w.gain - tol)})
    return checks


@dataclass
class ConcavityReport:
    grid: tuple[float, ...]
    results: tuple[CapacityResult, ...]
    violations: list[dict] = field(default_factory=list)
    monotone_violations: list[dict] = field(default_factory=list)

    @property
    def values(self) -> list[float]:
        return [r.value for r in self.results]

    @property
    def ok(self) -> bool:
        return not self.violations and not self.monotone_violations

    def to_json(self) -> dict:
        return {
            "grid": list(self.grid),
            "values": [v if math.isfinite(v) else None for v in self.values],
            "violations": self.violations,
            "monotone_violations": self.monotone_violations,
            "ok": self.ok,
        }


def concavity_scan(u: np.ndarray, grid: Sequence[float], tol: float = CONCAVITY_TOL, **opts) -> ConcavityReport:
    """Evaluate :func:`delta_chi_e` along an ascending grid and flag non-concave or decreasing stretches.

    Each point is warm-started from the best ensembles of the points already
    done, so a good ensemble found at smaller ``e`` stays available.
    """
    grid = tuple(float(g) for g in grid)
    if len(grid) < 3:
        raise ValueError("grid needs at least 3 points")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly ascending")
    warm = list(opts.pop("warm_starts", ()))
    results = []
    for e in grid:
        r = delta_chi_e(u, e, warm_starts=warm, **opts)
        results.append(r)
        if r.best is not None:
            warm.append(pack_ensemble(r.best))
    report = ConcavityReport(grid, tuple(results))
    v = report.values
    for i in range(1, len(grid) - 1):
        for j in range(i + 1, len(grid)):
            for k in range(i):
                # chord from grid[k] to grid[j], evaluated at grid[i]
                t = (grid[i] - grid[k]) / (grid[j] - grid[k])
                chord = (1 - t) * v[k] + t * v[j]
                if math.isfinite(chord) and v[i] < chord - tol:
                    report.violations.append({"e": grid[i], "value": v[i], "chord": chord,
                                              "between": [grid[k], grid[j]]})
    for i in range(len(grid) - 1):
        if v[i + 1] < v[i] - tol:
            report.monotone_violations.append({"e": [grid[i], grid[i + 1]], "values": [v[i], v[i + 1]]})
    return report


class QResult(NamedTuple):
    value: float
    e: float
    status: str
    residual: float  # |Q - C_{e+Q} / 2| at the returned Q
    capacity: CapacityResult | None
    evaluations: int

    def to_json(self) -> dict:
        finite = math.isfinite(self.value)
        return {"value": self.value if finite else None, "e": self.e, "status": self.status,
                "residual": self.residual if math.isfinite(self.residual) else None,
                "evaluations": self.evaluations,
                "capacity": self.capacity.to_json() if self.capacity else None}


def q_e(u: np.ndarray, e: float, tol: float = Q_TOL, dims: tuple[int, int] | None = None, **opts) -> QResult:
    """Solve ``Q = C_{e+Q} / 2`` by bisection on ``[0, log2 min(dA, dB)]``.

    ``C`` is nondecreasing in its argument, so ``C_{e+Q}/2 - Q`` changes sign
    at most once on the interval up to optimizer noise.  Bisection stops early
    once the residual at a midpoint is within ``tol / 2``.
    """
    dims = _dims_of(u, dims)
    warm = list(opts.pop("warm_starts", ()))
    cache: dict[float, CapacityResult] = {}

    def c(q: float) -> CapacityResult:
        if q not in cache:
            r = delta_chi_e(u, e + q, dims=dims, warm_starts=warm, **opts)
            cache[q] = r
            if r.best is not None:
                warm.append(pack_ensemble(r.best))
        return cache[q]

    def g(q: float) -> float:
        r = c(q)
        return r.value / 2 - q if math.isfinite(r.value) else -math.inf

    lo, hi = 0.0, math.log2(min(dims))
    if not math.isfinite(c(hi).value):
        # nothing is feasible even at the largest allowance
        return QResult(-math.inf, float(e), "infeasible", math.inf, c(hi), len(cache))
    if g(hi) >= 0:
        q = hi
    else:
        if g(lo) > tol / 2:
            while hi - lo > tol / 4:
                mid = (lo + hi) / 2
                gm = g(mid)
                if abs(gm) <= tol / 2:
                    lo = mid
                    break
                if gm > 0:
                    lo = mid
                else:
                    hi = mid
        q = lo
    r = c(q)
    if not math.isfinite(r.value):
        return QResult(-math.inf, float(e), "infeasible", math.inf, r, len(cache))
    return QResult(q, float(e), r.status, abs(q - r.value / 2), r, len(cache))


# --------------------------------------------------------------------------
# gates

GATES: dict[str, Callable[[], np.ndarray]] = {
    "cnot": lambda: CNOT,
    "swap": lambda: SWAP,
    "identity": lambda: np.eye(4, dtype=complex),
}


def bell_witness(u: np.ndarray = CNOT) -> Witness:
    return next(w for w in witnesses(u) if w.name == "max-entangled")
