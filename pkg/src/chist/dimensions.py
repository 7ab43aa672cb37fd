"""Visibility/ordering/composition classification and the weaker-than lattice."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Optional

from .checkers.base import ModelId, UnknownModel


class Visibility(Enum):
    EXTERNAL = "External"
    CAUSAL = "Causal"
    TRANSITIVE = "Transitive"
    ROLLBACK = "Rollback"


class Ordering(Enum):
    TOTAL = "Total"
    GAPLESS = "Gapless"
    CAPRICIOUS = "Capricious"
    CONCURRENT = "Concurrent"


class Composition(Enum):
    ALL_OR_NOTHING = "AllOrNothing"
    SNAPSHOT = "Snapshot"
    NONE = "None"


@dataclass(frozen=True)
class DimensionTriple:
    visibility: Visibility
    ordering: Ordering
    composition: Composition


@dataclass(frozen=True)
class LatticeEdge:
    stronger: ModelId
    weaker: ModelId


class Comparison(Enum):
    STRONGER = "Stronger"
    WEAKER = "Weaker"
    EQUIVALENT = "Equivalent"
    INCOMPARABLE = "Incomparable"


class LatticeFormatError(Exception):
    pass


@dataclass(frozen=True)
class Lattice:
    triples: dict[ModelId, DimensionTriple]
    edges: tuple[LatticeEdge, ...]

    def classify(self, m: ModelId) -> DimensionTriple:
        if m not in self.triples:
            raise UnknownModel(m.value if isinstance(m, ModelId) else str(m))
        return self.triples[m]

    def reachable(self, start: ModelId) -> frozenset[ModelId]:
        succ: dict[ModelId, list[ModelId]] = {}
        for e in self.edges:
            succ.setdefault(e.stronger, []).append(e.weaker)
        out: set[ModelId] = set()
        stack = [start]
        while stack:
            node = stack.pop()
            for nxt in succ.get(node, ()):
                if nxt not in out:
                    out.add(nxt)
                    stack.append(nxt)
        return frozenset(out)

    def compare(self, a: ModelId, b: ModelId) -> Comparison:
        if a not in self.triples:
            raise UnknownModel(str(a))
        if b not in self.triples:
            raise UnknownModel(str(b))
        if a is b:
            return Comparison.EQUIVALENT
        if b in self.reachable(a):
            return Comparison.STRONGER
        if a in self.reachable(b):
            return Comparison.WEAKER
        return Comparison.INCOMPARABLE

    def assert_acyclic(self) -> None:
        for m in self.triples:
            if m in self.reachable(m):
                raise LatticeFormatError(f"lattice contains a cycle through {m.value}")


def parse_lattice(text: str) -> Lattice:
    triples: dict[ModelId, DimensionTriple] = {}
    edges: list[LatticeEdge] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        try:
            if parts[0] == "model":
                if len(parts) != 5:
                    raise LatticeFormatError(f"line {lineno}: model lines take 4 fields")
                m = ModelId.parse(parts[1])
                fields = dict(p.split("=", 1) for p in parts[2:])
                triples[m] = DimensionTriple(
                    Visibility(fields["vis"]),
                    Ordering(fields["ord"]),
                    Composition(fields["comp"]),
                )
            elif parts[0] == "edge":
                if len(parts) != 3:
                    raise LatticeFormatError(f"line {lineno}: edge lines take 2 fields")
                edges.append(LatticeEdge(ModelId.parse(parts[1]), ModelId.parse(parts[2])))
            else:
                raise LatticeFormatError(f"line {lineno}: unknown directive {parts[0]!r}")
        except (KeyError, ValueError, UnknownModel) as exc:
            raise LatticeFormatError(f"line {lineno}: {exc}") from exc
    lattice = Lattice(triples, tuple(edges))
    lattice.assert_acyclic()
    return lattice


_default: Optional[Lattice] = None


def default_lattice() -> Lattice:
    global _default
    if _default is None:
        text = resources.files("chist.data").joinpath("models.lattice").read_text("utf-8")
        _default = parse_lattice(text)
    return _default


def classify(m: ModelId) -> DimensionTriple:
    return default_lattice().classify(m)


def compare(a: ModelId, b: ModelId) -> Comparison:
    return default_lattice().compare(a, b)


def lattice_edges() -> tuple[LatticeEdge, ...]:
    return default_lattice().edges
