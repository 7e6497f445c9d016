"""Resource-inequality prover.

A :class:`ConversionRule` says ``lhs >= rhs``, optionally needing a catalyst
that must be present and is left untouched.  :func:`prove` runs an exhaustive
breadth-first search over rule applications, so a negative answer at depth
``D`` means no derivation of at most ``D`` steps exists in the database with
the given catalyst budget.

Borrowed catalysts are added to the start multiset and must still be
present, on top of the goal, at the end.
"""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field, replace
from fractions import Fraction
from itertools import product
from math import lcm
from typing import Sequence

from .resources import ZERO, ResourceVector

MAX_DEPTH = 32
MAX_VISITED = 10**6


@dataclass(frozen=True)
class ConversionRule:
    id: str
    lhs: ResourceVector
    rhs: ResourceVector
    catalyst: ResourceVector = ZERO
    asymptotic: bool = False
    source: str = ""
    simulable: str | None = None
    mirror: bool = False  # also usable with every arrow reversed

    def applies_to(self, multiset: ResourceVector) -> bool:
        return multiset.dominates(self.lhs + self.catalyst)

    def apply(self, multiset: ResourceVector) -> ResourceVector:
        if not self.applies_to(multiset):
            raise ValueError(f"rule {self.id} does not apply to {multiset}")
        return multiset - self.lhs + self.rhs

    def mirrored(self) -> "ConversionRule":
        return replace(self, id=f"{self.id}(<-)", lhs=self.lhs.mirrored(), rhs=self.rhs.mirrored(),
                       catalyst=self.catalyst.mirrored(), mirror=False, simulable=None)

    def __str__(self):
        s = f"{self.lhs} >= {self.rhs}"
        if self.catalyst:
            s += f"  [catalyst {self.catalyst}]"
        if self.asymptotic:
            s += "  (asy)"
        return s


def _r(**kw) -> ResourceVector:
    names = {"qu": "qubit->", "qu_b": "qubit<-", "cb": "cbit->", "cb_b": "cbit<-", "coh": "cobit->",
             "coh_b": "cobit<-", "eb": "ebit", "remote": "remote-qubit", "cnot": "gate:CNOT", "swap": "gate:SWAP"}
    return ResourceVector({names[k]: v for k, v in kw.items()})


def rule_db() -> tuple[ConversionRule, ...]:
    R = ConversionRule
    return (
        R("qubit-to-cobit", _r(qu=1), _r(coh=1), mirror=True,
          source="a qubit channel can carry the cobit: Alice copies her input before sending it"),
        R("cobit-to-cbit", _r(coh=1), _r(cb=1), mirror=True, simulable="degrade-cbit",
          source="cobit degradation: Alice discards her copy"),
        R("cobit-to-ebit", _r(coh=1), _r(eb=1), mirror=True, simulable="degrade-ebit",
          source="cobit degradation: send |+> to share an ebit"),
        R("coherent-sdc", _r(qu=1, eb=1), _r(coh=2), mirror=True, simulable="coherent-sdc",
          source="coherent super-dense coding"),
        R("coherent-teleport", _r(coh=2), _r(qu=1, eb=1), _r(eb=1), mirror=True, simulable="coherent-teleport",
          source="coherent teleportation returns the ebit it uses"),
        R("cnot-coherent-bidir", _r(cnot=1, eb=1), _r(coh=1, coh_b=1), simulable="coherent-cnot",
          source="entanglement-assisted CNOT sends a cobit both ways"),
        R("coherent-distributed-cnot", _r(coh=1, coh_b=1), _r(cnot=1, eb=1), _r(eb=1),
          simulable="coherent-distributed-cnot",
          source="Gottesman's distributed CNOT with cobits recovers both ebits"),
        R("distributed-cnot", _r(cb=1, cb_b=1, eb=1), _r(cnot=1),
          source="Gottesman's distributed CNOT"),
        R("cnot-to-swap", _r(cnot=2), _r(swap=1), _r(eb=2),
          source="2 CNOT = 1 SWAP with catalytic ebits (via cobits and coherent teleportation)"),
        R("swap-to-cnot", _r(swap=1), _r(cnot=2), _r(eb=2),
          source="2 CNOT = 1 SWAP with catalytic ebits (via coherent super-dense coding)"),
        R("swap-to-qubits", _r(swap=1), _r(qu=1, qu_b=1), source="a SWAP exchanges one qubit each way"),
        R("qubits-to-swap", _r(qu=1, qu_b=1), _r(swap=1), source="two qubit channels implement a SWAP"),
        R("teleportation", _r(cb=2, eb=1), _r(qu=1), mirror=True, source="teleportation"),
        R("rsp", _r(cb=1, eb=1), _r(remote=1), asymptotic=True, source="remote state preparation"),
        R("coherent-rsp", _r(coh=1), _r(remote=1), asymptotic=True,
          source="coherent remote state preparation recovers the entanglement"),
        R("qubit-to-remote", _r(qu=1), _r(remote=1), source="prepare the state locally and send it"),
    )


def get_rule(rule_id: str, rules: Sequence[ConversionRule] | None = None) -> ConversionRule:
    for r in rules if rules is not None else rule_db():
        if r.id == rule_id:
            return r
    raise KeyError(rule_id)


def expand(rules: Sequence[ConversionRule]) -> list[ConversionRule]:
    out = []
    for r in rules:
        out.append(r)
        if r.mirror:
            out.append(r.mirrored())
    return out


# --------------------------------------------------------------------------
# parsing

_ALIASES = {
    "qubit": "qubit", "qubits": "qubit", "qu": "qubit", "qus": "qubit",
    "cbit": "cbit", "cbits": "cbit", "cb": "cbit", "cbs": "cbit",
    "cobit": "cobit", "cobits": "cobit", "coh": "cobit", "cohs": "cobit",
    "ebit": "ebit", "ebits": "ebit", "eb": "ebit", "ebs": "ebit",
    "remote-qubit": "remote-qubit", "remote-qubits": "remote-qubit", "remote": "remote-qubit",
    "cnot": "gate:CNOT", "cnots": "gate:CNOT", "swap": "gate:SWAP", "swaps": "gate:SWAP",
}
_TERM = re.compile(
    r"\s*(?P<count>[0-9]+(?:/[0-9]+|\.[0-9]+)?)?\s*"
    r"(?P<kind>gate:[A-Za-z_][A-Za-z0-9_]*|[A-Za-z][A-Za-z-]*?)"
    r"\s*(?P<arrow>->|<-|→|←|\((?:->|<-|→|←)\))?\s*(?=\+|$)"
)


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


def parse(expr: str) -> ResourceVector:
    """Parse ``"2 cobit-> + 1 ebit"``-style sums. A missing arrow means ``->``."""
    counts: dict[str, Fraction] = {}
    pos = 0
    if not expr.strip():
        raise ParseError("empty expression", 0)
    while True:
        m = _TERM.match(expr, pos)
        if not m:
            bad = pos + len(expr[pos:]) - len(expr[pos:].lstrip())
            if expr[bad:bad + 1] == "-":
                raise ParseError("negative counts are not allowed", bad)
            raise ParseError(f"cannot parse term {expr[bad:].split('+')[0].strip()!r}", bad)
        count = Fraction(m["count"]) if m["count"] else Fraction(1)
        raw = m["kind"]
        if raw.startswith("gate:"):
            kind = raw if raw[5:].upper() not in ("CNOT", "SWAP") else "gate:" + raw[5:].upper()
        elif raw.lower() in _ALIASES:
            kind = _ALIASES[raw.lower()]
        else:
            raise ParseError(f"unknown resource kind {raw!r}", m.start("kind"))
        arrow = (m["arrow"] or "").strip("()").replace("→", "->").replace("←", "<-")
        if kind in ("qubit", "cbit", "cobit"):
            kind += arrow or "->"
        elif arrow:
            raise ParseError(f"{kind} takes no direction", m.start("arrow"))
        counts[kind] = counts.get(kind, Fraction(0)) + count
        pos = m.end()
        if pos >= len(expr):
            break
        if expr[pos] != "+":
            raise ParseError("expected '+'", pos)
        pos += 1
    return ResourceVector(counts)


# --------------------------------------------------------------------------
# search


@dataclass(frozen=True)
class DerivationStep:
    rule_id: str
    before: ResourceVector
    after: ResourceVector


@dataclass
class Derivation:
    start: ResourceVector
    goal: ResourceVector
    borrowed: ResourceVector
    steps: list[DerivationStep] = field(default_factory=list)
    scale: int = 1
    used_asymptotic: bool = False

    @property
    def used_catalysis(self) -> bool:
        return bool(self.borrowed) or any(
            get_rule(_base_id(s.rule_id)).catalyst for s in self.steps)

    @property
    def final(self) -> ResourceVector:
        return self.steps[-1].after if self.steps else self.scale * self.start + self.borrowed

    def replay(self, rules: Sequence[ConversionRule] | None = None) -> bool:
        """Re-apply every step with exact arithmetic; raises on any mismatch."""
        table = {r.id: r for r in expand(rules if rules is not None else rule_db())}
        current = self.scale * self.start + self.borrowed
        for i, s in enumerate(self.steps):
            if s.before != current:
                raise ValueError(f"step {i + 1}: multiset {s.before} does not follow from {current}")
            current = table[s.rule_id].apply(current)
            if current != s.after:
                raise ValueError(f"step {i + 1}: rule {s.rule_id} gives {current}, recorded {s.after}")
        if not current.dominates(self.scale * self.goal + self.borrowed):
            raise ValueError("derivation does not reach goal plus returned catalysts")
        return True

    def format(self, rules: Sequence[ConversionRule] | None = None) -> str:
        table = {r.id: r for r in expand(rules if rules is not None else rule_db())}
        lines = [f"start: {self.start}" + (f"  (x{self.scale}, asymptotic)" if self.scale > 1 else "")]
        if self.borrowed:
            lines.append(f"borrow: {self.borrowed}")
        for i, s in enumerate(self.steps, 1):
            r = table[s.rule_id]
            lines.append(f"{i:>2}. {s.rule_id}: {r}  -- {r.source}")
            lines.append(f"    -> {s.after}")
        if self.borrowed:
            lines.append(f"return: {self.borrowed}")
        lines.append(f"goal: {self.goal}")
        return "\n".join(lines)

    def to_json(self) -> dict:
        return {
            "start": self.start.to_json(),
            "goal": self.goal.to_json(),
            "borrowed": self.borrowed.to_json(),
            "scale": self.scale,
            "used_catalysis": self.used_catalysis,
            "used_asymptotic": self.used_asymptotic,
            "steps": [{"rule": s.rule_id, "before": s.before.to_json(), "after": s.after.to_json()}
                      for s in self.steps],
        }


def _base_id(rule_id: str) -> str:
    return rule_id.removesuffix("(<-)")


def _denominators(*vs: ResourceVector) -> int:
    return lcm(1, *(n.denominator for v in vs for n in v.values()))


def _sub_budgets(budget: ResourceVector) -> list[ResourceVector]:
    kinds = list(budget)
    ranges = [range(int(budget[k]) + 1) for k in kinds]
    vecs = [ResourceVector(dict(zip(kinds, c))) for c in product(*ranges)]
    return sorted(vecs, key=lambda v: (sum(v.values()), str(v)))


def _bfs(start, goal, borrowed, rules, max_depth):
    target = goal + borrowed
    origin = start + borrowed
    parent: dict[ResourceVector, tuple] = {origin: None}
    frontier = deque([(origin, 0)])
    while frontier:
        node, depth = frontier.popleft()
        if node.dominates(target):
            steps = []
            while parent[node] is not None:
                prev, rid = parent[node]
                steps.append(DerivationStep(rid, prev, node))
                node = prev
            return steps[::-1]
        if depth == max_depth:
            continue
        for r in rules:
            if r.applies_to(node):
                nxt = node - r.lhs + r.rhs
                if nxt not in parent:
                    if len(parent) >= MAX_VISITED:
                        return None
                    parent[nxt] = (node, r.id)
                    frontier.append((nxt, depth + 1))
    return None


def prove(start: ResourceVector, goal: ResourceVector, *, allow_catalysis: bool = False,
          catalyst_budget: ResourceVector | None = None, allow_asymptotic: bool = False,
          max_depth: int = 12, rules: Sequence[ConversionRule] | None = None) -> Derivation | None:
    """Search for ``start >= goal``; ``None`` when nothing is found within the bounds.

    With catalysis allowed, sub-budgets are tried smallest first, so the
    derivation borrows as little as it can.  In asymptotic mode all counts
    are scaled by their common denominator and asymptotic rules are enabled.
    """
    if not 0 <= max_depth <= MAX_DEPTH:
        raise ValueError(f"max_depth must be in [0, {MAX_DEPTH}]")
    budget = catalyst_budget if (allow_catalysis and catalyst_budget is not None) else ZERO
    if any(n.denominator != 1 for n in budget.values()):
        raise ValueError("catalyst budget must be integral")
    pool = [r for r in expand(rules if rules is not None else rule_db())
            if allow_asymptotic or not r.asymptotic]
    scale = _denominators(start, goal) if allow_asymptotic else 1
    s, g = scale * start, scale * goal
    for borrowed in _sub_budgets(budget):
        steps = _bfs(s, g, borrowed, pool, max_depth)
        if steps is not None:
            asy = scale > 1 or any(_lookup(pool, st.rule_id).asymptotic for st in steps)
            return Derivation(start, goal, borrowed, steps, scale, asy)
    return None


def _lookup(pool, rule_id):
    return next(r for r in pool if r.id == rule_id)


@dataclass
class EqualityResult:
    kind: str  # "equal", "forward", "backward" or "neither"
    forward: Derivation | None
    backward: Derivation | None


def check_equality(a: ResourceVector, b: ResourceVector, **opts) -> EqualityResult:
    fwd = prove(a, b, **opts)
    bwd = prove(b, a, **opts)
    if fwd and bwd:
        kind = "equal"
    elif fwd:
        kind = "forward"
    elif bwd:
        kind = "backward"
    else:
        kind = "neither"
    return EqualityResult(kind, fwd, bwd)


# --------------------------------------------------------------------------
# bridging to the simulator


class NotSimulable(ValueError):
    pass


class CertificationError(AssertionError):
    pass


@dataclass
class Certificate:
    rule_id: str
    protocol: str
    final_fidelity: float
    transcript: object


def certify_rule_by_simulation(rule_id: str, seed: int = 0, fidelity_tol: float = 1e-9) -> Certificate:
    """Run the rule's protocol on a Haar-random input and match its resource bookkeeping exactly."""
    from .protocols import run_protocol

    rule = get_rule(rule_id)
    if rule.simulable is None:
        raise NotSimulable(f"rule {rule_id!r} is not simulable")
    t = run_protocol(rule.simulable, "haar", seed)
    expected = {
        "consumed": rule.lhs + rule.catalyst,
        "produced": rule.rhs + rule.catalyst,
        "catalysts": rule.catalyst,
    }
    for name, want in expected.items():
        got = getattr(t, name)
        if got != want:
            raise CertificationError(f"{rule_id}: {name} is {got}, rule says {want}")
    if t.final_fidelity < 1 - fidelity_tol:
        raise CertificationError(f"{rule_id}: final fidelity {t.final_fidelity} below 1 - {fidelity_tol}")
    return Certificate(rule_id, rule.simulable, t.final_fidelity, t)
