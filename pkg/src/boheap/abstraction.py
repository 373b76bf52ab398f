"""Abstraction operators over Boolean heaps.

``wlp_sharp`` abstracts weakest preconditions into cube sets by bounded,
shortest-first cube enumeration with subsumption pruning.  Abstract transition
relations constrain each relevant primed predicate from the complemented
abstractions of p and not-p, are memoized per (command, context normal form),
and are applied per Boolean heap by the relational product (conjoin, project
unprimed, rename).  Splitting rewrites a heap into a gamma-equivalent set of
heaps with a unique positive complete cube per singleton predicate; cleaning
removes heaps and complete cubes unsatisfiable relative to a strengthening
formula.  The context operator instantiates the joined heap at the objects
pointed to by program variables, yielding the quantifier-free context formula
that strengthens all abstraction queries.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass

from .commands import GuardedCommand
from .config import AnalysisConfig
from .formula import (
    FALSE, Formula, Not, TRUE, Truth, Var, cache_text, conj, free_vars,
    implies, neg, substitute, symbols,
)
from .heaps import (
    BOTTOM_HEAP, BooleanHeap, Cube, EMPTY_CUBE, EMPTY_SET, HeapSet,
    PredicateSpace, TOP_HEAP, complete_cubes, cube_leq, cube_meet,
    gamma_cube, gamma_heap, gamma_set, heap_complement, heap_join, heap_leq,
    heap_meet, make_heap, make_heap_set, set_join,
)
from .prover import Prover, Query

__all__ = ["AbstractTransition", "Abstraction"]


@dataclass(frozen=True)
class AbstractTransition:
    """Relation over unprimed (bits 0..P-1) and primed (bits P..2P-1) cubes.

    Only primed predicates relevant at the target location are constrained.
    """
    relation: BooleanHeap
    key: tuple              # (command label/id, context normal form)
    relevant: tuple         # predicate indices constrained on the primed side
    checker_calls: int = 0


def _prime(c: Cube, n: int) -> Cube:
    return Cube(c.mask << n, c.bits << n)


def _unprime_project(c: Cube, n: int) -> Cube:
    keep = ((1 << n) - 1) << n
    return Cube((c.mask & keep) >> n, (c.bits & keep) >> n)


class Abstraction:
    """Shared context for the abstraction operators of one analysis."""

    def __init__(self, space: PredicateSpace, prover: Prover,
                 config: AnalysisConfig | None = None):
        self.space = space
        self.prover = prover
        self.config = config or AnalysisConfig()
        self._transition_memo: dict = {}
        self._gamma_cube_memo: dict = {}
        self._lock = threading.RLock()

    # -- helpers --

    @property
    def n_preds(self) -> int:
        return self.space.size

    def gamma_cube(self, c: Cube) -> Formula:
        f = self._gamma_cube_memo.get(c)
        if f is None:
            f = gamma_cube(c, self.space)
            self._gamma_cube_memo[c] = f
        return f

    def pred_symbols(self, i: int) -> frozenset:
        return symbols(self.space.predicates[i].formula)

    # ------------------------------------------------------------------
    # wlp#

    def wlp_sharp(self, c: GuardedCommand, context: Formula, target: Formula,
                  extra=(), chain=None) -> BooleanHeap:
        """Cubes whose meaning, under the context formula, entails
        wlp(c, target); enumerated shortest-first up to the configured cube
        length with subsumption pruning, then canonicalized.

        Unknown verdicts count as "not entailed", which only shrinks the
        result and is sound for every use site.
        """
        from .commands import wlp
        goal = wlp(c, target)
        return self.cube_abstraction(goal, context, extra, chain)

    def cube_abstraction(self, goal: Formula, context: Formula,
                         extra=(), chain=None) -> BooleanHeap:
        """{C : context /\\ gamma(C) |= goal} as a canonical cube set."""
        found: list = []
        assumptions = (context,) + tuple(extra)

        def qualifies(cube: Cube) -> bool:
            q = Query(assumptions, implies(self.gamma_cube(cube), goal),
                      chain=chain)
            return self.prover.check(q).is_valid

        if qualifies(EMPTY_CUBE):
            return TOP_HEAP
        frontier = [EMPTY_CUBE]
        n = self.n_preds
        for _length in range(1, self.config.cube_max + 1):
            next_frontier = []
            for base in frontier:
                start = max((i for i, _ in base.literals()), default=-1) + 1
                for i in range(start, n):
                    for val in (1, 0):
                        cand = base.assign(i, val)
                        if any(cube_leq(cand, f) for f in found):
                            continue
                        if qualifies(cand):
                            found.append(cand)
                        else:
                            next_frontier.append(cand)
            frontier = next_frontier
            if not frontier:
                break
        return make_heap(found)

    # ------------------------------------------------------------------
    # abstract transition relations

    def abstract_transition(self, c: GuardedCommand, context: Formula,
                            relevant=None, extra=(), chain=None) -> AbstractTransition:
        """Constrain every relevant primed predicate per the complemented
        weakest-precondition abstractions; memoized by (command, context
        normal form) so a repeated call issues zero checker calls.
        """
        n = self.n_preds
        if relevant is None:
            relevant = tuple(range(n))
        relevant = tuple(sorted(relevant))
        memo_key = (id(c), cache_text(context), relevant)
        with self._lock:
            hit = self._transition_memo.get(memo_key)
            if hit is not None:
                return hit

        updated = c.updated_symbols()
        calls_before = self.prover.stats.backend_calls

        rel = TOP_HEAP
        for i in relevant:
            pred = self.space.predicates[i]
            if (self.config.frame_unaffected
                    and not (symbols(pred.formula) & updated)):
                # frame: an untouched predicate keeps its value; weaker than
                # the exact construction, so the post stays an overapproximation
                frame = make_heap([Cube(1 << i, 1 << i).assign(n + i, 1),
                                   Cube(1 << i, 0).assign(n + i, 0)])
                rel = heap_meet(rel, frame)
                continue
            w_pos = self.wlp_sharp(c, context, pred.formula, extra, chain)
            w_neg = self.wlp_sharp(c, context, Not(pred.formula), extra, chain)
            pos_side = heap_meet(make_heap([EMPTY_CUBE.assign(n + i, 1)]),
                                 heap_complement(w_neg))
            neg_side = heap_meet(make_heap([EMPTY_CUBE.assign(n + i, 0)]),
                                 heap_complement(w_pos))
            rel = heap_meet(rel, heap_join(pos_side, neg_side))

        out = AbstractTransition(
            relation=rel, key=(c.label or str(id(c)), cache_text(context)),
            relevant=relevant,
            checker_calls=self.prover.stats.backend_calls - calls_before)
        with self._lock:
            self._transition_memo[memo_key] = out
        return out

    def relational_product(self, h: BooleanHeap, t: AbstractTransition) -> BooleanHeap:
        """Conjoin a heap with the transition relation, project the unprimed
        predicates, and rename primed to unprimed."""
        n = self.n_preds
        conjoined = heap_meet(h, t.relation)
        projected = [_unprime_project(c, n) for c in conjoined.cubes]
        return make_heap(projected)

    # ------------------------------------------------------------------
    # Cartesian post (production path and definitional oracle)

    def cartesian_post(self, c: GuardedCommand, context: Formula, s: HeapSet,
                       relevant=None, extra=(), chain=None) -> HeapSet:
        """Fetch or build the abstract transition for (c, context), then apply
        the relational product to every member heap."""
        t = self.abstract_transition(c, context, relevant, extra, chain)
        out = []
        for h in s.sorted_heaps():
            out.append(self.relational_product(h, t))
        return make_heap_set(out)

    def cartesian_post_direct(self, c: GuardedCommand, context: Formula,
                              s: HeapSet, extra=()) -> HeapSet:
        """Set-comprehension definition: each complete cube maps to the meet
        of the cubes [p -> b] whose abstracted weakest precondition it
        entails.  Kept as the independent dual of the relational-product
        implementation."""
        n = self.n_preds
        w = {}
        for i in range(n):
            p = self.space.predicates[i]
            w[(i, 1)] = self.wlp_sharp(c, context, p.formula, extra)
            w[(i, 0)] = self.wlp_sharp(c, context, Not(p.formula), extra)
        out = []
        for h in s.sorted_heaps():
            cubes = []
            for cc in complete_cubes(h, n):
                row = EMPTY_CUBE
                dead = False
                for i in range(n):
                    pos = any(cube_leq(cc, d) for d in w[(i, 1)].cubes)
                    negv = any(cube_leq(cc, d) for d in w[(i, 0)].cubes)
                    if pos and negv:
                        dead = True
                        break
                    if pos:
                        row = row.assign(i, 1)
                    elif negv:
                        row = row.assign(i, 0)
                if not dead:
                    cubes.append(row)
            out.append(make_heap(cubes))
        return make_heap_set(out)

    # ------------------------------------------------------------------
    # splitting

    def split(self, s: HeapSet) -> HeapSet:
        """Rewrite each heap into a set of heaps with at most one positive
        complete cube per singleton predicate; gamma-preserving."""
        singles = self.space.singleton_indices()
        heaps = self._split_rec(list(singles), list(s.sorted_heaps()))
        return make_heap_set(heaps)

    def _split_rec(self, singles, heaps):
        if not singles:
            return heaps
        p, rest = singles[0], singles[1:]
        cube_pos = EMPTY_CUBE.assign(p, 1)
        cube_neg = EMPTY_CUBE.assign(p, 0)
        out = []
        for h in heaps:
            pos_part = heap_meet(h, make_heap([cube_pos]))
            neg_part = heap_meet(h, make_heap([cube_neg]))
            completes = complete_cubes(pos_part, self.n_preds)
            if not completes:
                # no object can satisfy p: keep the negative part so the
                # at-most-one singleton's empty case is not lost
                out.append(neg_part)
                continue
            for cc in completes:
                out.append(heap_join(neg_part, make_heap([cc])))
        return self._split_rec(rest, out)

    # ------------------------------------------------------------------
    # cleaning

    def clean(self, strengthen: Formula, s: HeapSet, extra=()) -> HeapSet:
        """Drop heaps unsatisfiable together with ``strengthen``, then drop
        unsatisfiable complete cubes within the survivors.  Unknown verdicts
        keep the heap or cube (cleaning only ever strengthens)."""
        n = self.n_preds
        out = []
        for h in s.sorted_heaps():
            sat, _ = self._sat([strengthen, *extra, gamma_heap(h, self.space)])
            if sat is False:
                continue
            survivors = []
            for cc in complete_cubes(h, n):
                cube_f = self.gamma_cube(cc)
                csat, _ = self._sat([strengthen, *extra,
                                     gamma_heap(h, self.space), cube_f])
                if csat is False:
                    continue
                survivors.append(cc)
            out.append(make_heap(survivors))
        return make_heap_set(out)

    def _sat(self, formulas):
        """Satisfiability of the existential closure, asked as a validity
        query on the negation."""
        v = self.prover.check(Query((), neg(conj(list(formulas)))))
        if v.is_not_valid:
            return True, v.witness
        if v.is_valid:
            return False, None
        return None, None

    # ------------------------------------------------------------------
    # fused clean-after-split
    #
    # The composition Clean(F, Split(S)) enumerates, per heap, the states of
    # F /\ gamma(H); each state's objects realize a set of complete cubes (its
    # profile) and a choice of positive row per singleton predicate.  Grouping
    # states by that choice and uniting the profiles of each group yields
    # exactly the cleaned split heaps without materializing the intermediate
    # exponential heap set.

    def shatter(self, strengthen: Formula, s: HeapSet, extra=()) -> HeapSet:
        if not self.config.fuse_split_clean:
            return self.clean(strengthen, self.split(s), extra)
        profiles = self._realized_profiles(strengthen, extra)
        if profiles is None:
            return self.clean(strengthen, self.split(s), extra)
        singles = self.space.singleton_indices()
        n = self.n_preds
        out = []
        for h in s.sorted_heaps():
            completes = {c.bits for c in complete_cubes(h, n)}
            groups: dict = {}
            mixed = False
            for rows in profiles:
                if not rows <= completes:
                    continue  # state outside gamma(H)
                choice = []
                for p in singles:
                    pos = sorted(r for r in rows if (r >> p) & 1)
                    if len(pos) > 1:
                        choice = None  # singleton violated: outside every output
                        break
                    if not pos:
                        mixed = True  # possibly-empty singleton: exact grouping
                        break          # needs the literal composition
                    choice.append(pos[0])
                if mixed:
                    break
                if choice is not None:
                    groups.setdefault(tuple(choice), set()).update(rows)
            if mixed:
                return self.clean(strengthen, self.split(s), extra)
            full = (1 << n) - 1
            for key in sorted(groups):
                out.append(make_heap(Cube(full, b) for b in groups[key]))
        return make_heap_set(out)

    def _realized_profiles(self, strengthen: Formula, extra=()):
        """Distinct per-state sets of realized complete-cube rows (as bit
        values) over states satisfying the strengthening assumptions, via the
        enumeration backend's state bank."""
        backend = self.prover.enum_backend
        if backend is None:
            return None
        import numpy as np
        n = self.n_preds
        forms = [strengthen, *extra]
        closed = tuple(f for f in forms if not (isinstance(f, Truth) and f.value))
        pred_forms = [p.formula for p in self.space.predicates]
        bank, _syms, _comp = backend._bank_for(closed, list(pred_forms),
                                               self.prover.scope)
        if bank is None:
            return None
        cache_key = ("profiles", tuple(cache_text(pf) for pf in pred_forms))
        with bank.lock:
            hit = bank.__dict__.setdefault("_user_cache", {}).get(cache_key)
        if hit is not None:
            return hit
        bits = np.zeros((len(bank.states), bank.max_elems), dtype=np.int64)
        for i, pf in enumerate(pred_forms):
            if "v" in free_vars(pf):
                m = backend._goal_elem(bank, pf, "v")
            else:
                m = np.repeat(backend._goal_bool(bank, pf)[:, None],
                              bank.max_elems, axis=1)
            bits |= m.astype(np.int64) << i
        profiles = set()
        for si, st in enumerate(bank.states):
            profiles.add(frozenset(int(b) for b in bits[si, : st.n + 1]))
        with bank.lock:
            bank.__dict__["_user_cache"][cache_key] = profiles
        return profiles

    # ------------------------------------------------------------------
    # abstraction of a formula and the abstract post

    def abstract_formula(self, f: Formula, extra=()) -> HeapSet:
        """Initial abstraction: complement of the cube set entailing the
        negation, then cleaned splitting with the original formula."""
        under = self.cube_abstraction(neg(f), TRUE, extra)
        h0 = heap_complement(under)
        if h0.is_empty:
            return EMPTY_SET
        return self.shatter(f, make_heap_set([h0]), extra)

    def abstract_post(self, c: GuardedCommand, context: HeapSet, s0: HeapSet,
                      relevant=None, extra=(), chain_id=None) -> HeapSet:
        """Clean the split input with the guard, strengthen the context with
        the freshly cleaned states, then apply the Cartesian post."""
        s = self.shatter(c.guard, s0, extra)
        gamma_ctx = self.kappa(set_join(context, s))
        chain = None
        if chain_id is not None:
            pos = self.prover.register_context(chain_id, gamma_ctx)
            chain = (chain_id, pos)
        return self.cartesian_post(c, gamma_ctx, s, relevant, extra, chain)

    # ------------------------------------------------------------------
    # quantifier instantiation and the context operator

    def instantiate(self, h: BooleanHeap, object_vars=None) -> Formula:
        """For each object-valued program variable x, join the cubes of the
        heap positive on (x = v), concretize, and substitute v by x.  A
        variable with no positive (x = v) cube contributes true: the join over
        the empty set is the bottom cube, and a trivially true conjunct is the
        only sound reading for a context formula."""
        if object_vars is None:
            object_vars = [x for x in self.prover.vocab.object_vars
                           if x not in self.prover.vocab.ghost_vars]
        parts = []
        for x in object_vars:
            idx = self._var_pred_index(x)
            if idx is None:
                continue
            met = heap_meet(h, make_heap([EMPTY_CUBE.assign(idx, 1)]))
            if met.is_empty:
                continue  # empty join is bottom: contributes true
            cubes = sorted(met.cubes, key=lambda c: (c.mask, c.bits))
            join = cubes[0]
            for c in cubes[1:]:
                m = join.mask & c.mask & ~(join.bits ^ c.bits)
                join = Cube(m, join.bits & m)
            parts.append(substitute(self.gamma_cube(join), {"v": Var(x)}))
        return conj(parts)

    def _var_pred_index(self, x: str):
        from .formula import Eq
        want = cache_text(Eq(Var(x), Var("v")))
        want2 = cache_text(Eq(Var("v"), Var(x)))
        for i, p in enumerate(self.space.predicates):
            t = cache_text(p.formula)
            if t == want or t == want2:
                return i
        return None

    def kappa(self, s: HeapSet) -> Formula:
        """Join the heap set and instantiate; monotone, and implied by the
        concretization of the set."""
        if s.is_empty:
            return TRUE
        joined = BOTTOM_HEAP
        for h in s.sorted_heaps():
            joined = heap_join(joined, h)
        return self.instantiate(joined)
