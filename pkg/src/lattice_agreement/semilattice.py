"""Finite-set join semi-lattice.

Lattice values are ``frozenset`` objects of opaque string tokens. Join is set
union, the order is set inclusion and the height grading is cardinality.
"""

from __future__ import annotations

from typing import Dict, FrozenSet, Iterable, List, Sequence

Element = str
LatticeValue = FrozenSet[Element]

BOTTOM: LatticeValue = frozenset()

DEFAULT_CLOSURE_CAP = 1 << 12


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


class ClosureTooLarge(RuntimeError):
    """The join closure grew past the configured cap."""


def value(*tokens: str) -> LatticeValue:
    return frozenset(tokens)


def join(u: LatticeValue, v: LatticeValue) -> LatticeValue:
    return u | v


def leq(u: LatticeValue, v: LatticeValue) -> bool:
    return u <= v


def comparable(u: LatticeValue, v: LatticeValue) -> bool:
    return u <= v or v <= u


def join_all(vs: Iterable[LatticeValue]) -> LatticeValue:
    vs = list(vs)
    if not vs:
        raise ContractViolation("join_all needs at least one value")
    return frozenset().union(*vs)


def height(v: LatticeValue) -> int:
    return len(v)


def encode_value(v: LatticeValue) -> List[str]:
    return sorted(v)


def decode_value(tokens: Sequence[str]) -> LatticeValue:
    if isinstance(tokens, str):
        raise TypeError("lattice value must be a list of tokens, not a string")
    return frozenset(str(t) for t in tokens)


def join_closure(inputs: Iterable[LatticeValue], cap: int = DEFAULT_CLOSURE_CAP) -> FrozenSet[LatticeValue]:
    """All joins of nonempty subsets of ``inputs``."""
    closure = set(frozenset(v) for v in inputs)
    if not closure:
        raise ContractViolation("closure of an empty collection")
    frontier = list(closure)
    base = list(closure)
    while frontier:
        nxt = []
        for x in frontier:
            for b in base:
                y = x | b
                if y not in closure:
                    closure.add(y)
                    nxt.append(y)
                    if len(closure) > cap:
                        raise ClosureTooLarge(f"join closure exceeds {cap} values")
        frontier = nxt
    return frozenset(closure)


def depth_to_top(elements: Iterable[LatticeValue]) -> Dict[LatticeValue, int]:
    """Longest chain length (in edges) from each element up to the top.

    ``elements`` must be join-closed so that the top is unique.
    """
    ordered = sorted(set(elements), key=len, reverse=True)
    depth: Dict[LatticeValue, int] = {}
    for i, x in enumerate(ordered):
        best = 0
        for y in ordered[:i]:
            if len(y) > len(x) and x < y:
                d = depth[y] + 1
                if d > best:
                    best = d
        depth[x] = best
    return depth


def closure_height_oracle(inputs: Iterable[LatticeValue], cap: int = DEFAULT_CLOSURE_CAP) -> int:
    """Height of the join closure of ``inputs`` by brute-force enumeration.

    The longest chain is counted in edges from a minimal closure element to
    the top, which is the literal longest-path definition, not cardinality.
    """
    depth = depth_to_top(join_closure(inputs, cap))
    return max(depth.values())
