"""Propagation of precondition conjuncts across the control-flow graph.

The precondition splits into conjuncts, all assumed at every location; a
conjunct is removed at a location with an incoming edge from somewhere it was
already removed or where it is not preserved under the edge's command.  The
surviving map is a per-location invariant, and the subsequent shape analysis
assumes it.  Preservation may assume the other conjuncts still standing at the
source location; Unknown verdicts count as "not preserved", which only weakens
the assumptions and stays sound.
"""

from __future__ import annotations

from dataclasses import dataclass

from .commands import ControlFlowGraph, GuardedCommand, wlp
from .formula import Formula, cache_text, conj, conjuncts
from .prover import Prover, Query

__all__ = ["ConjunctMap", "propagate", "preserved"]


@dataclass
class ConjunctMap:
    """Per location, the conjuncts currently assumed there (keyed by
    canonical text, valued by representative formula, insertion ordered)."""
    by_location: dict

    def conjuncts_at(self, loc):
        return list(self.by_location[loc].values())

    def formula_at(self, loc) -> Formula:
        return conj(self.conjuncts_at(loc))

    def keys_at(self, loc):
        return set(self.by_location[loc])

    def snapshot(self):
        return {loc: tuple(m.keys()) for loc, m in self.by_location.items()}


def preserved(conjunct: Formula, assumed, command: GuardedCommand,
              prover: Prover) -> bool:
    """Edge-local check: do the assumed conjuncts entail wlp(c, conjunct)?"""
    v = prover.check(Query(tuple(assumed), wlp(command, conjunct)))
    return v.is_valid


def propagate(pre: Formula, cfg: ControlFlowGraph, prover: Prover,
              order=None) -> ConjunctMap:
    """Worklist fixpoint of the removal rules; terminates since conjunct sets
    only shrink.  ``order`` overrides the location processing order (reverse
    postorder by default); the final map does not depend on it.
    """
    parts = conjuncts(pre)
    base = {}
    for f in parts:
        base.setdefault(cache_text(f), f)
    cmap = ConjunctMap({loc: dict(base) for loc in cfg.locations})

    locs = list(order) if order is not None else list(cfg.reverse_postorder())
    work = list(locs)
    in_work = set(work)
    while work:
        loc = work.pop(0)
        in_work.discard(loc)
        for e in cfg.in_edges(loc):
            src_map = cmap.by_location[e.source]
            assumed = list(src_map.values())
            tgt_map = cmap.by_location[loc]
            for key in list(tgt_map):
                if key not in tgt_map:
                    continue
                f = tgt_map[key]
                if key in src_map:
                    if preserved(f, assumed, e.command, prover):
                        continue
                del tgt_map[key]
                for e2 in cfg.out_edges(loc):
                    if e2.target not in in_work:
                        work.append(e2.target)
                        in_work.add(e2.target)
        # removals at loc can invalidate conjuncts downstream only; handled above
    return cmap
