"""Cubes, Boolean heaps, and sets of Boolean heaps.

A cube is a partial truth assignment over the abstraction predicates, packed
as a (mask, bits) pair of machine integers over the predicate indices.  A
Boolean heap is a set of cubes kept in Blake canonical form (the set of all
prime implicants of the disjunction, computed by consensus closure): two heaps
denote the same per-object Boolean function iff they are equal, and the
subsumption preorder then coincides with propositional entailment.  A heap set
is a ⊑-antichain of heaps.

The meaning function: a cube concretizes to the conjunction of its literals
over the free object variable v, a heap to "every object matches some cube",
and a heap set to the disjunction of its members' meanings.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .formula import FALSE, Formula, Forall, Not, TRUE, conj, disj, substitute

__all__ = [
    "Predicate", "PredicateSpace", "Cube", "BooleanHeap", "HeapSet",
    "EMPTY_CUBE", "BOTTOM_HEAP", "TOP_HEAP", "EMPTY_SET",
    "cube_leq", "cube_meet", "cube_join",
    "make_heap", "heap_leq", "heap_meet", "heap_join", "heap_complement",
    "complete_cubes", "in_c", "count_complete",
    "make_heap_set", "set_leq", "set_meet", "set_join", "set_difference",
    "gamma_cube", "gamma_heap", "gamma_set",
    "dump_cube", "dump_heap", "dump_heap_set",
]


@dataclass(frozen=True)
class Predicate:
    """Abstraction predicate: a formula with at most the free variable v.

    ``singleton`` asserts the predicate holds of at most one object per state;
    formulas of shape (x = v) get it automatically, anything else needs a
    recorded justification.  State predicates (v does not occur) hold uniformly
    across objects.
    """
    name: str
    formula: Formula
    singleton: bool = False
    justification: str = ""
    is_state: bool = False
    track: bool = True
    auto: bool = False


@dataclass(frozen=True)
class PredicateSpace:
    """Fixed, declaration-ordered predicate universe of one analysis."""
    predicates: tuple

    def __post_init__(self):
        names = [p.name for p in self.predicates]
        if len(names) != len(set(names)):
            raise ValueError("duplicate predicate names")

    @property
    def size(self) -> int:
        return len(self.predicates)

    def index(self, name: str) -> int:
        for i, p in enumerate(self.predicates):
            if p.name == name:
                return i
        raise KeyError(name)

    def singleton_indices(self) -> tuple:
        return tuple(i for i, p in enumerate(self.predicates) if p.singleton)

    def names(self) -> tuple:
        return tuple(p.name for p in self.predicates)


@dataclass(frozen=True, order=True)
class Cube:
    """Partial map from predicate index to {0,1}: bit i of ``mask`` says the
    predicate is assigned, and then bit i of ``bits`` is its value."""
    mask: int
    bits: int

    def __post_init__(self):
        if self.bits & ~self.mask:
            raise ValueError("value bit outside mask")

    def get(self, i: int):
        if not (self.mask >> i) & 1:
            return None
        return (self.bits >> i) & 1

    def assign(self, i: int, val: int) -> "Cube":
        return Cube(self.mask | (1 << i), (self.bits & ~(1 << i)) | (val << i))

    def drop(self, i: int) -> "Cube":
        b = ~(1 << i)
        return Cube(self.mask & b, self.bits & b)

    def literals(self):
        m = self.mask
        i = 0
        while m:
            if m & 1:
                yield i, (self.bits >> i) & 1
            m >>= 1
            i += 1

    @property
    def length(self) -> int:
        return bin(self.mask).count("1")


EMPTY_CUBE = Cube(0, 0)


def cube_leq(c1: Cube, c2: Cube) -> bool:
    """c1 ⊑ c2: wherever c2 is defined, c1 is defined and agrees."""
    return (c2.mask & ~c1.mask) == 0 and ((c1.bits ^ c2.bits) & c2.mask) == 0


def cube_meet(c1: Cube, c2: Cube):
    """Union of consistent assignments; None when inconsistent."""
    if (c1.mask & c2.mask) & (c1.bits ^ c2.bits):
        return None
    return Cube(c1.mask | c2.mask, c1.bits | c2.bits)


def cube_join(c1: Cube, c2: Cube) -> Cube:
    """Smallest cube above both: the literals they agree on."""
    m = c1.mask & c2.mask & ~(c1.bits ^ c2.bits)
    return Cube(m, c1.bits & m)


# ---------------------------------------------------------------------------
# Boolean heaps (Blake canonical cube sets)

@dataclass(frozen=True)
class BooleanHeap:
    cubes: frozenset

    def key(self) -> tuple:
        return tuple(sorted((c.mask, c.bits) for c in self.cubes))

    @property
    def is_empty(self) -> bool:
        return not self.cubes


BOTTOM_HEAP = BooleanHeap(frozenset())
TOP_HEAP = BooleanHeap(frozenset({EMPTY_CUBE}))


def _prune_subsumed(cubes) -> set:
    out = set()
    for c in sorted(cubes, key=lambda c: (c.length, c.mask, c.bits)):
        if not any(cube_leq(c, d) for d in out):
            out.add(c)
    return out


def _consensus(c1: Cube, c2: Cube):
    """Consensus term when the cubes conflict on exactly one predicate."""
    conflict = c1.mask & c2.mask & (c1.bits ^ c2.bits)
    if conflict == 0 or conflict & (conflict - 1):
        return None
    mask = (c1.mask | c2.mask) & ~conflict
    return Cube(mask, (c1.bits | c2.bits) & mask)


def make_heap(cubes) -> BooleanHeap:
    """Blake canonical form: consensus closure, subsumed cubes removed."""
    work = _prune_subsumed(set(cubes))
    pending = list(itertools.combinations(sorted(work, key=lambda c: (c.mask, c.bits)), 2))
    while pending:
        c1, c2 = pending.pop()
        if c1 not in work or c2 not in work:
            continue
        cons = _consensus(c1, c2)
        if cons is None:
            continue
        if any(cube_leq(cons, d) for d in work):
            continue
        work = {d for d in work if not cube_leq(d, cons)}
        for d in sorted(work, key=lambda c: (c.mask, c.bits)):
            pending.append((cons, d))
        work.add(cons)
    return BooleanHeap(frozenset(work))


def heap_leq(h1: BooleanHeap, h2: BooleanHeap) -> bool:
    """Every cube of h1 is subsumed by some cube of h2."""
    return all(any(cube_leq(c, d) for d in h2.cubes) for c in h1.cubes)


def heap_meet(h1: BooleanHeap, h2: BooleanHeap) -> BooleanHeap:
    out = []
    for c1 in h1.cubes:
        for c2 in h2.cubes:
            m = cube_meet(c1, c2)
            if m is not None:
                out.append(m)
    return make_heap(out)


def heap_join(h1: BooleanHeap, h2: BooleanHeap) -> BooleanHeap:
    return make_heap(h1.cubes | h2.cubes)


def heap_complement(h: BooleanHeap, universe_mask: int | None = None) -> BooleanHeap:
    """Propositional complement of the cube-set function (De Morgan product)."""
    del universe_mask  # complement never needs the ambient predicate count
    result = TOP_HEAP
    for c in sorted(h.cubes, key=lambda c: (c.mask, c.bits)):
        lits = [EMPTY_CUBE.assign(i, 1 - val) for i, val in c.literals()]
        result = heap_meet(result, make_heap(lits))
        if result.is_empty:
            return BOTTOM_HEAP
    return result


def complete_cubes(h: BooleanHeap, n_preds: int):
    """All total cubes over ``n_preds`` predicates subsumed by some cube of h,
    in ascending bit order."""
    full = (1 << n_preds) - 1
    seen = set()
    for c in h.cubes:
        free = full & ~c.mask
        free_bits = [i for i in range(n_preds) if (free >> i) & 1]
        for combo in range(1 << len(free_bits)):
            bits = c.bits
            for j, i in enumerate(free_bits):
                if (combo >> j) & 1:
                    bits |= 1 << i
            seen.add(bits)
    return [Cube(full, b) for b in sorted(seen)]


def count_complete(h: BooleanHeap, n_preds: int) -> int:
    return len(complete_cubes(h, n_preds))


def in_c(c: Cube, h: BooleanHeap, n_preds: int) -> bool:
    """c ∈_c h: c is complete and subsumed by some cube of h."""
    if c.mask != (1 << n_preds) - 1:
        return False
    return any(cube_leq(c, d) for d in h.cubes)


# ---------------------------------------------------------------------------
# heap sets (⊑-antichains)

@dataclass(frozen=True)
class HeapSet:
    heaps: frozenset

    def key(self) -> tuple:
        return tuple(sorted(h.key() for h in self.heaps))

    @property
    def is_empty(self) -> bool:
        return not self.heaps

    def sorted_heaps(self):
        return sorted(self.heaps, key=BooleanHeap.key)


EMPTY_SET = HeapSet(frozenset())


def make_heap_set(heaps) -> HeapSet:
    """Drop heaps ⊑-subsumed by another member.

    Members are Blake-canonical, so mutual subsumption implies equality and
    keeping the maximal elements yields a canonical antichain.
    """
    hs = set(heaps)
    maximal = [h for h in hs if not any(g != h and heap_leq(h, g) for g in hs)]
    return HeapSet(frozenset(maximal))


def set_leq(s1: HeapSet, s2: HeapSet) -> bool:
    """Pointwise lifting: every heap of s1 below some heap of s2."""
    return all(any(heap_leq(h, g) for g in s2.heaps) for h in s1.heaps)


def set_join(s1: HeapSet, s2: HeapSet) -> HeapSet:
    return make_heap_set(list(s1.heaps) + list(s2.heaps))


def set_meet(s1: HeapSet, s2: HeapSet) -> HeapSet:
    out = []
    for h1 in s1.heaps:
        for h2 in s2.heaps:
            m = heap_meet(h1, h2)
            if not m.is_empty:
                out.append(m)
    return make_heap_set(out)


def set_difference(s1: HeapSet, s2: HeapSet) -> HeapSet:
    """Heaps of s1 not ⊑-covered by a member of s2 (quotient difference)."""
    return HeapSet(frozenset(h for h in s1.heaps
                             if not any(heap_leq(h, g) for g in s2.heaps)))


# ---------------------------------------------------------------------------
# meaning function

def gamma_cube(c: Cube, space: PredicateSpace) -> Formula:
    lits = []
    for i, val in c.literals():
        p = space.predicates[i].formula
        lits.append(p if val else Not(p))
    return conj(lits)


def gamma_heap(h: BooleanHeap, space: PredicateSpace) -> Formula:
    body = disj([gamma_cube(c, space)
                 for c in sorted(h.cubes, key=lambda c: (c.mask, c.bits))])
    return Forall(("v",), body)


def gamma_set(s: HeapSet, space: PredicateSpace) -> Formula:
    return disj([gamma_heap(h, space) for h in s.sorted_heaps()])


# ---------------------------------------------------------------------------
# debug dump format: one cube per line "p=1 q=0"; heaps separated by blank
# lines within a heap-set block; stable ordering for diffing

def dump_cube(c: Cube, space: PredicateSpace, primed_base: int | None = None) -> str:
    parts = []
    for i, val in sorted(c.literals()):
        if primed_base is not None and i >= primed_base:
            parts.append(f"{space.predicates[i - primed_base].name}'={val}")
        else:
            parts.append(f"{space.predicates[i].name}={val}")
    return " ".join(parts) if parts else "(true)"


def dump_heap(h: BooleanHeap, space: PredicateSpace, primed_base: int | None = None) -> str:
    if h.is_empty:
        return "(empty heap)"
    return "\n".join(dump_cube(c, space, primed_base)
                     for c in sorted(h.cubes, key=lambda c: (c.mask, c.bits)))


def dump_heap_set(s: HeapSet, space: PredicateSpace) -> str:
    if s.is_empty:
        return "(empty heap set)"
    return "\n\n".join(dump_heap(h, space) for h in s.sorted_heaps())
