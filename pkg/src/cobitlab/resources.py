"""Counts of communication resources.

Kinds are plain strings: ``qubit->``, ``qubit<-``, ``cbit->``, ``cbit<-``,
``cobit->``, ``cobit<-``, ``ebit``, ``remote-qubit`` and gate tokens
``gate:<NAME>`` (``gate:CNOT``, ``gate:SWAP`` or any user-named gate).
``->`` is Alice to Bob.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping

DIRECTED = ("qubit", "cbit", "cobit")
UNDIRECTED = ("ebit", "remote-qubit")
KINDS = tuple(f"{k}{arrow}" for k in DIRECTED for arrow in ("->", "<-")) + UNDIRECTED + ("gate:CNOT", "gate:SWAP")


def is_kind(kind: str) -> bool:
    if kind.startswith("gate:"):
        return len(kind) > 5
    return kind in KINDS


def _fraction(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


class ResourceVector(Mapping[str, Fraction]):
    """Nonnegative rational counts, compared componentwise."""

    __slots__ = ("_counts", "_hash")

    def __init__(self, counts: Mapping[str, object] | None = None, **kw):
        merged: dict[str, Fraction] = {}
        for source in (counts or {}, kw):
            for kind, n in source.items():
                if not is_kind(kind):
                    raise ValueError(f"unknown resource kind {kind!r}")
                n = _fraction(n)
                if n < 0:
                    raise ValueError(f"negative count for {kind}: {n}")
                if n:
                    merged[kind] = merged.get(kind, Fraction(0)) + n
        self._counts = dict(sorted(merged.items()))
        self._hash = None

    def __getitem__(self, kind):
        return self._counts[kind]

    def get(self, kind, default=Fraction(0)):
        return self._counts.get(kind, default)

    def __iter__(self) -> Iterator[str]:
        return iter(self._counts)

    def __len__(self):
        return len(self._counts)

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._counts.items()))
        return self._hash

    def __eq__(self, other):
        if isinstance(other, ResourceVector):
            return self._counts == other._counts
        return NotImplemented

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        out = dict(self._counts)
        for k, n in other.items():
            out[k] = out.get(k, Fraction(0)) + n
        return ResourceVector(out)

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        out = dict(self._counts)
        for k, n in other.items():
            out[k] = out.get(k, Fraction(0)) - n
            if out[k] < 0:
                raise ValueError(f"subtraction leaves negative {k}")
        return ResourceVector(out)

    def __mul__(self, factor) -> "ResourceVector":
        factor = _fraction(factor)
        return ResourceVector({k: n * factor for k, n in self._counts.items()})

    __rmul__ = __mul__

    def dominates(self, other: "ResourceVector") -> bool:
        return all(self.get(k) >= n for k, n in other.items())

    __ge__ = dominates

    def __le__(self, other):
        return other.dominates(self)

    def mirrored(self) -> "ResourceVector":
        """Swap the direction of every directed kind."""
        out = {}
        for k, n in self._counts.items():
            if k.endswith("->"):
                k = k[:-2] + "<-"
            elif k.endswith("<-"):
                k = k[:-2] + "->"
            out[k] = n
        return ResourceVector(out)

    def to_json(self) -> dict:
        return {k: (int(n) if n.denominator == 1 else float(n)) for k, n in self._counts.items()}

    @classmethod
    def from_json(cls, data: Mapping[str, object]) -> "ResourceVector":
        return cls({k: Fraction(v) if isinstance(v, (int, str)) else v for k, v in data.items()})

    def __str__(self):
        if not self._counts:
            return "0"
        return " + ".join(f"{n} {k}" for k, n in self._counts.items())

    def __repr__(self):
        return f"ResourceVector({self.to_json()})"


ZERO = ResourceVector()


@dataclass(frozen=True)
class Delta:
    """What a protocol or conversion uses up, hands out, and borrows-and-returns."""

    consumed: ResourceVector
    produced: ResourceVector
    catalyst: ResourceVector = ZERO
