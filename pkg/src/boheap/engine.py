"""Analysis engine: abstract reachability, loop invariants, verification
conditions, and reporting.

The reachability loop abstracts the precondition, then grows an abstract
reachability tree: for each unprocessed node and outgoing edge it computes the
abstract post of the node's states under the context of everything already
discovered at the source location, subtracts (modulo subsumption) what is
already known at the target, and enqueues a child when anything new remains.
Scheduling follows the topological order of locations with back edges removed,
then insertion order, so sequential loops stabilize one after the other.

Invariants conjoin the surviving propagated conjuncts with the concretization
of the discovered heap sets.  Verification conditions cover every loop-free
path between annotated points (entry, loop heads, exit), as one query per
conclusion conjunct so different backends may discharge different conjuncts.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field as dc_field

from .abstraction import Abstraction
from .commands import ControlFlowGraph, GuardedCommand, command_symbols, wlp_seq
from .config import AnalysisConfig
from .formula import (
    Eq, Formula, TRUE, Var, cache_text, conj, conjuncts, free_vars, symbols,
    to_text,
)
from .heaps import (
    EMPTY_SET, HeapSet, Predicate, PredicateSpace, dump_heap_set, gamma_set,
    make_heap_set, set_difference, set_join,
)
from .parser import ProcedureSpec
from .propagation import ConjunctMap, propagate
from .prover import Prover, Query, QueryCache, Verdict
from .semantics import Scope, Vocabulary

__all__ = ["Procedure", "ReachNode", "ReachResult", "VCRecord",
           "AnalysisReport", "Engine", "build_predicate_space"]


@dataclass
class ReachNode:
    location: str
    states: HeapSet
    sons: list = dc_field(default_factory=list)
    parent: "ReachNode | None" = None
    via: GuardedCommand | None = None


@dataclass(frozen=True)
class Procedure:
    """Analysis-ready procedure: parsed spec plus the predicate space with
    auto-added pointer predicates."""
    name: str
    vocab: Vocabulary
    space: PredicateSpace
    requires: tuple
    ensures: tuple
    cfg: ControlFlowGraph
    user_predicates: int


def build_predicate_space(spec: ProcedureSpec) -> PredicateSpace:
    """Declared tracked predicates plus an automatic (x = v) singleton for
    every non-ghost object-valued program variable."""
    preds = [p for p in spec.predicates if p.track]
    have = {cache_text(p.formula) for p in preds}
    for x in spec.vocab.object_vars:
        if x in spec.vocab.ghost_vars:
            continue
        f = Eq(Var(x), Var("v"))
        if cache_text(f) in have or cache_text(Eq(Var("v"), Var(x))) in have:
            continue
        name = f"eq_{x}"
        taken = {p.name for p in preds}
        while name in taken:
            name += "_"
        preds.append(Predicate(name=name, formula=f, singleton=True,
                               justification=f"points-to predicate for {x}",
                               is_state=False, track=True, auto=True))
    return PredicateSpace(tuple(preds))


def make_procedure(spec: ProcedureSpec) -> Procedure:
    return Procedure(name=spec.name, vocab=spec.vocab,
                     space=build_predicate_space(spec),
                     requires=spec.requires, ensures=spec.ensures,
                     cfg=spec.cfg,
                     user_predicates=len([p for p in spec.predicates if p.track]))


# ---------------------------------------------------------------------------
# predicate relevance (backwards symbol analysis from the postconditions)

def relevant_predicates(proc: Procedure) -> dict:
    """Per location, the indices of predicates whose program symbols reach a
    use on some path to the exit.  Predicates without program symbols are kept
    everywhere (there is nothing to intersect on)."""
    cfg = proc.cfg
    post_syms = set()
    for f in proc.ensures:
        post_syms |= set(symbols(f))
    flow = {loc: set() for loc in cfg.locations}
    flow[cfg.exit] |= post_syms
    changed = True
    while changed:
        changed = False
        for e in cfg.edges:
            add = set(command_symbols(e.command)) | flow[e.target]
            if not add <= flow[e.source]:
                flow[e.source] |= add
                changed = True
    out = {}
    for loc in cfg.locations:
        idx = []
        for i, p in enumerate(proc.space.predicates):
            psyms = set(symbols(p.formula)) - {"v"}
            if not psyms or psyms & flow[loc]:
                idx.append(i)
        out[loc] = tuple(idx)
    return out


# ---------------------------------------------------------------------------
# reachability

@dataclass
class ReachResult:
    root: ReachNode
    location_states: dict          # loc -> HeapSet (union over tree nodes)
    nodes_at: dict                 # loc -> [ReachNode]
    posts_computed: int
    conjunct_map: ConjunctMap


def schedule_next(worklist):
    """Pop the node with minimal (topological index, insertion order)."""
    return heapq.heappop(worklist)[2]


class Engine:
    def __init__(self, spec: ProcedureSpec, config: AnalysisConfig | None = None,
                 cache: QueryCache | None = None):
        self.spec = spec
        self.config = config or AnalysisConfig()
        self.proc = make_procedure(spec)
        self.prover = Prover(self.proc.vocab, self.config.scope,
                             backends=self.config.backends,
                             cache=cache, bank_cap=self.config.bank_cap)
        self.abstraction = Abstraction(self.proc.space, self.prover, self.config)
        self.relevance = (relevant_predicates(self.proc)
                          if self.config.relevance_filter else
                          {loc: tuple(range(self.proc.space.size))
                           for loc in self.proc.cfg.locations})
        self.timings: dict = {}

    # -- phases --

    def run(self) -> "AnalysisReport":
        t0 = time.perf_counter()
        cmap = self.propagate_phase()
        t1 = time.perf_counter()
        reach = self.reach_phase(cmap)
        t2 = time.perf_counter()
        vcs = self.vcgen(reach)
        t3 = time.perf_counter()
        records = self.check_vcs(vcs, reach)
        t4 = time.perf_counter()
        self.timings = {"propagate": t1 - t0, "reach": t2 - t1,
                        "vcgen": t3 - t2, "check": t4 - t3}
        return self.report(reach, records)

    def propagate_phase(self) -> ConjunctMap:
        pre = conj(list(self.proc.requires))
        return propagate(pre, self.proc.cfg, self.prover)

    def reach_phase(self, cmap: ConjunctMap) -> ReachResult:
        cfg = self.proc.cfg
        pre = conj(list(self.proc.requires))
        init = self.abstraction.abstract_formula(pre)
        root = ReachNode(cfg.entry, init)
        nodes_at = {loc: [] for loc in cfg.locations}
        nodes_at[cfg.entry].append(root)
        topo = cfg.topo_index()
        counter = itertools.count()
        worklist = [(topo[cfg.entry], next(counter), root)]
        posts = 0
        while worklist:
            n = schedule_next(worklist)
            for e in cfg.out_edges(n.location):
                context = self._states_at(nodes_at, e.source)
                old = self._states_at(nodes_at, e.target)
                extra = tuple(cmap.conjuncts_at(e.source))
                chain_id = f"{self.proc.name}/{e.command.label}"
                post = self.abstraction.abstract_post(
                    e.command, context, n.states,
                    relevant=self.relevance[e.target], extra=extra,
                    chain_id=chain_id)
                posts += 1
                new = set_difference(post, old)
                if not new.is_empty:
                    child = ReachNode(e.target, new, parent=n, via=e.command)
                    n.sons.append((e.command, child))
                    nodes_at[e.target].append(child)
                    heapq.heappush(worklist, (topo[e.target], next(counter), child))
        location_states = {loc: self._states_at(nodes_at, loc)
                           for loc in cfg.locations}
        return ReachResult(root=root, location_states=location_states,
                           nodes_at=nodes_at, posts_computed=posts,
                           conjunct_map=cmap)

    def _states_at(self, nodes_at, loc) -> HeapSet:
        out = EMPTY_SET
        for m in nodes_at[loc]:
            out = set_join(out, m.states)
        return out

    # -- invariants --

    def invariant_at(self, reach: ReachResult, loc: str) -> Formula:
        if loc not in self.proc.cfg.locations:
            raise KeyError(f"unknown location {loc!r}")
        parts = list(reach.conjunct_map.conjuncts_at(loc))
        parts.append(gamma_set(reach.location_states[loc], self.proc.space))
        return conj(parts)

    def annotated_points(self):
        cfg = self.proc.cfg
        pts = [cfg.entry]
        for h in cfg.back_edge_targets():
            if h not in pts:
                pts.append(h)
        if cfg.exit not in pts:
            pts.append(cfg.exit)
        return tuple(pts)

    # -- verification conditions --

    def vcgen(self, reach: ReachResult):
        """One query per loop-free path between annotated points and per
        conclusion conjunct of the target invariant (postcondition at exit)."""
        cfg = self.proc.cfg
        annotated = set(self.annotated_points())
        vcs = []
        for start in self.annotated_points():
            for path, end in self._paths_from(start, annotated):
                if end == cfg.exit:
                    target = conj(list(self.proc.ensures))
                else:
                    target = self.invariant_at(reach, end)
                commands = [e.command for e in path]
                inv = self.invariant_at(reach, start)
                assumptions = tuple(conjuncts(inv))
                for k, concl in enumerate(conjuncts(target)):
                    goal = wlp_seq(commands, concl)
                    vcs.append({
                        "source": start, "target": end,
                        "path": tuple(e.command.label for e in path),
                        "conjunct": k, "conclusion": concl,
                        "query": Query(assumptions, goal),
                    })
        return vcs

    def _paths_from(self, start, annotated):
        """Loop-free CFG paths from an annotated point to the next annotated
        point (paths never pass through an annotated point internally)."""
        cfg = self.proc.cfg
        out = []

        def dfs(loc, path, seen):
            for e in cfg.out_edges(loc):
                if e.target in annotated:
                    out.append((path + [e], e.target))
                elif e.target not in seen:
                    dfs(e.target, path + [e], seen | {e.target})
        dfs(start, [], {start})
        return out

    def check_vcs(self, vcs, reach: ReachResult):
        records = []
        for i, vc in enumerate(vcs):
            verdict = self.prover.check(vc["query"])
            rec = VCRecord(
                index=i, source=vc["source"], target=vc["target"],
                path=vc["path"], conjunct=vc["conjunct"],
                conclusion=to_text(vc["conclusion"]), verdict=verdict.kind,
                witness=(verdict.witness.describe() if verdict.witness else None),
                trace=(self._trace_to(reach, vc["source"])
                       if verdict.is_not_valid else None),
                reason=verdict.reason or None)
            records.append(rec)
        return records

    def _trace_to(self, reach: ReachResult, loc: str):
        nodes = reach.nodes_at.get(loc) or []
        if not nodes:
            return None
        node = nodes[0]
        steps = []
        while node is not None:
            steps.append(node.location if node.via is None
                         else f"{node.via.label} -> {node.location}")
            node = node.parent
        return tuple(reversed(steps))

    # -- report --

    def report(self, reach: ReachResult, records) -> "AnalysisReport":
        any_invalid = any(r.verdict == "not_valid" for r in records)
        any_unknown = any(r.verdict == "unknown" for r in records)
        if any_invalid:
            status = "NOT VERIFIED"
        elif any_unknown:
            status = "INCONCLUSIVE"
        else:
            status = "VERIFIED"
        invariants = {loc: to_text(self.invariant_at(reach, loc))
                      for loc in self.proc.cfg.locations}
        scope = self.config.scope
        stats = {
            "predicates_total": self.proc.space.size,
            "predicates_user": self.proc.user_predicates,
            "checker_queries": self.prover.stats.queries,
            "checker_cache_hits": self.prover.stats.cache_hits,
            "checker_backend_calls": self.prover.stats.backend_calls,
            "verdicts_valid": self.prover.stats.valid,
            "verdicts_not_valid": self.prover.stats.not_valid,
            "verdicts_unknown": self.prover.stats.unknown,
            "abstract_posts": reach.posts_computed,
        }
        return AnalysisReport(
            procedure=self.proc.name,
            scope=(scope.n_objects, scope.data_max),
            status=status, invariants=invariants, vcs=tuple(records),
            stats=stats, timings=dict(self.timings),
            heap_dump={loc: dump_heap_set(reach.location_states[loc], self.proc.space)
                       for loc in self.proc.cfg.locations} if self.config.trace else None)


@dataclass(frozen=True)
class VCRecord:
    index: int
    source: str
    target: str
    path: tuple
    conjunct: int
    conclusion: str
    verdict: str
    witness: str | None = None
    trace: tuple | None = None
    reason: str | None = None


@dataclass
class AnalysisReport:
    procedure: str
    scope: tuple
    status: str
    invariants: dict
    vcs: tuple
    stats: dict
    timings: dict
    heap_dump: dict | None = None

    def render_text(self, include_timings: bool = False) -> str:
        lines = [
            "boheap report 1",
            f"procedure: {self.procedure}",
            f"scope: N={self.scope[0]} M={self.scope[1]}",
            f"status: {self.status} (validity relative to scope)",
            "",
            "invariants:",
        ]
        for loc in sorted(self.invariants):
            lines.append(f"  {loc}: {self.invariants[loc]}")
        lines.append("")
        lines.append("verification conditions:")
        for r in self.vcs:
            path = ",".join(r.path) if r.path else "(empty path)"
            lines.append(f"  vc {r.index} [{r.source} -> {r.target} via {path}] "
                         f"conjunct {r.conjunct}: {r.verdict}")
            if r.verdict != "valid":
                lines.append(f"    conclusion: {r.conclusion}")
            if r.reason:
                lines.append(f"    reason: {r.reason}")
            if r.witness:
                for wl in r.witness.splitlines():
                    lines.append(f"    | {wl}")
            if r.trace:
                lines.append(f"    trace: {' ; '.join(r.trace)}")
        lines.append("")
        s = self.stats
        lines.append(f"stats: predicates={s['predicates_total']} "
                     f"(user {s['predicates_user']}); "
                     f"checker calls={s['checker_queries']} "
                     f"(cache hits {s['checker_cache_hits']}, "
                     f"backend {s['checker_backend_calls']}); "
                     f"verdicts V/N/U={s['verdicts_valid']}/"
                     f"{s['verdicts_not_valid']}/{s['verdicts_unknown']}; "
                     f"abstract posts={s['abstract_posts']}")
        if include_timings:
            t = " ".join(f"{k}={v:.2f}s" for k, v in self.timings.items())
            lines.append(f"timings: {t}")
        if self.heap_dump is not None:
            lines.append("")
            lines.append("heap sets:")
            for loc in sorted(self.heap_dump):
                lines.append(f"-- {loc} --")
                lines.append(self.heap_dump[loc])
        return "\n".join(lines) + "\n"

    def render_json_lines(self) -> str:
        import json
        out = [json.dumps({"kind": "header", "procedure": self.procedure,
                           "scope": list(self.scope), "status": self.status},
                          sort_keys=True)]
        for loc in sorted(self.invariants):
            out.append(json.dumps({"kind": "invariant", "location": loc,
                                   "formula": self.invariants[loc]},
                                  sort_keys=True))
        for r in self.vcs:
            out.append(json.dumps({"kind": "vc", "index": r.index,
                                   "source": r.source, "target": r.target,
                                   "path": list(r.path),
                                   "conjunct": r.conjunct,
                                   "conclusion": r.conclusion,
                                   "verdict": r.verdict,
                                   "witness": r.witness,
                                   "trace": list(r.trace) if r.trace else None,
                                   "reason": r.reason}, sort_keys=True))
        out.append(json.dumps({"kind": "stats", **self.stats}, sort_keys=True))
        return "\n".join(out) + "\n"
