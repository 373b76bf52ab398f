"""Guarded commands, control-flow graphs, and weakest liberal preconditions.

A guarded command is a guard formula plus simultaneous updates: variable
assignments ``x := t``, field point updates ``f := f[t1 := t2]``, and havoc of
a program variable.  A control-flow graph is a set of locations with guarded
commands on loop-free edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

from .formula import (
    Const, Eq, FieldApp, FieldRef, FieldUpd, Formula, Forall, Implies, Term,
    Truth, Var, free_vars, implies, substitute, symbols, to_text,
)
from .semantics import SortError, Vocabulary, check_sorts, _term_sort, _OBJ, _INT

__all__ = ["VarUpdate", "FieldUpdate", "Havoc", "GuardedCommand",
           "ControlFlowGraph", "Edge", "wlp", "wlp_seq", "command_symbols"]


@dataclass(frozen=True)
class VarUpdate:
    var: str
    term: Term


@dataclass(frozen=True)
class FieldUpdate:
    """Point update ``field := field[at := to]``."""
    field: str
    at: Term
    to: Term


@dataclass(frozen=True)
class Havoc:
    var: str


@dataclass(frozen=True)
class GuardedCommand:
    guard: Formula
    updates: tuple = ()
    label: str = ""

    def __post_init__(self):
        lhs = [u.var if isinstance(u, (VarUpdate, Havoc)) else u.field
               for u in self.updates]
        if len(lhs) != len(set(lhs)):
            raise ValueError(f"duplicate assignment target in {self.label or 'command'}")

    def updated_symbols(self) -> frozenset:
        return frozenset(u.var if isinstance(u, (VarUpdate, Havoc)) else u.field
                         for u in self.updates)

    def describe(self) -> str:
        parts = []
        for u in self.updates:
            if isinstance(u, VarUpdate):
                parts.append(f"{u.var} := {_term_text(u.term)}")
            elif isinstance(u, FieldUpdate):
                parts.append(f"{u.field}[{_term_text(u.at)}] := {_term_text(u.to)}")
            else:
                parts.append(f"havoc {u.var}")
        upd = ", ".join(parts) if parts else "skip"
        return f"[{to_text(self.guard)}] {upd}"


def _term_text(t):
    from .formula import _t_text
    return _t_text(t)


@dataclass(frozen=True)
class Edge:
    source: str
    command: GuardedCommand
    target: str


@dataclass(frozen=True)
class ControlFlowGraph:
    locations: tuple
    entry: str
    exit: str
    edges: tuple

    def __post_init__(self):
        locs = set(self.locations)
        if self.entry not in locs or self.exit not in locs:
            raise ValueError("entry/exit location not declared")
        for e in self.edges:
            if e.source not in locs or e.target not in locs:
                raise ValueError(f"edge endpoint not declared: {e.source}->{e.target}")

    def out_edges(self, loc: str):
        return [e for e in self.edges if e.source == loc]

    def in_edges(self, loc: str):
        return [e for e in self.edges if e.target == loc]

    def back_edge_targets(self) -> tuple:
        """Loop heads: targets of back edges under a DFS spanning tree."""
        heads = []
        color = {}  # 0 open, 1 done
        stack = [(self.entry, iter(self.out_edges(self.entry)))]
        color[self.entry] = 0
        while stack:
            loc, it = stack[-1]
            advanced = False
            for e in it:
                t = e.target
                if t not in color:
                    color[t] = 0
                    stack.append((t, iter(self.out_edges(t))))
                    advanced = True
                    break
                if color[t] == 0 and t not in heads:
                    heads.append(t)
            if not advanced:
                color[loc] = 1
                stack.pop()
        return tuple(heads)

    def topo_index(self) -> dict:
        """Topological order of locations with back edges removed (reverse
        postorder of the DFS forest from the entry)."""
        order = []
        seen = set()

        def dfs(loc):
            seen.add(loc)
            for e in self.out_edges(loc):
                if e.target not in seen:
                    dfs(e.target)
            order.append(loc)

        dfs(self.entry)
        for loc in self.locations:
            if loc not in seen:
                dfs(loc)
        order.reverse()
        return {loc: i for i, loc in enumerate(order)}

    def reverse_postorder(self) -> tuple:
        idx = self.topo_index()
        return tuple(sorted(self.locations, key=lambda l: idx[l]))


def command_symbols(c: GuardedCommand) -> frozenset:
    syms = set(symbols(c.guard))
    for u in c.updates:
        if isinstance(u, VarUpdate):
            syms.add(u.var)
            syms |= _term_syms(u.term)
        elif isinstance(u, FieldUpdate):
            syms.add(u.field)
            syms |= _term_syms(u.at) | _term_syms(u.to)
        else:
            syms.add(u.var)
    return frozenset(syms)


def _term_syms(t) -> frozenset:
    from .formula import Eq
    return symbols(Eq(t, t))


def check_command_sorts(c: GuardedCommand, vocab: Vocabulary) -> None:
    check_sorts(c.guard, vocab)
    for u in c.updates:
        if isinstance(u, VarUpdate):
            want = _INT if vocab.is_int_var(u.var) else _OBJ
            got = _term_sort(u.term, vocab, set())
            if want != got:
                raise SortError(f"assignment of {got} term to {want} variable {u.var}")
        elif isinstance(u, FieldUpdate):
            if u.field not in vocab.fields:
                raise SortError(f"update of undeclared field {u.field}")
            if (_term_sort(u.at, vocab, set()) != _OBJ
                    or _term_sort(u.to, vocab, set()) != _OBJ):
                raise SortError(f"field update with non-object terms on {u.field}")


def wlp(c: GuardedCommand, post: Formula) -> Formula:
    """Weakest liberal precondition ``guard -> post[updates]``.

    Field updates substitute function-update expressions; simultaneous
    assignments read the pre-state.  Havoc universally quantifies a fresh
    variable.  Only true/false absorption is applied.
    """
    var_map = {}
    field_map = {}
    havocs = []
    for u in c.updates:
        if isinstance(u, VarUpdate):
            var_map[u.var] = u.term
        elif isinstance(u, FieldUpdate):
            field_map[u.field] = FieldUpd(FieldRef(u.field), u.at, u.to)
        else:
            havocs.append(u.var)
    body = post
    if havocs:
        taken = set(free_vars(post)) | set(var_map) | set(havocs)
        for t in var_map.values():
            taken |= set(free_vars(Eq(t, t)))
        for fu in field_map.values():
            taken |= set(free_vars(Eq(FieldApp(fu, Const("null")), Const("null"))))
        renames = {}
        fresh_names = []
        for x in havocs:
            nx = x + "0"
            while nx in taken:
                nx += "0"
            taken.add(nx)
            renames[x] = Var(nx)
            fresh_names.append(nx)
        body = substitute(body, renames)
        body = Forall(tuple(fresh_names), body) if fresh_names else body
        # havoc'd variables must not also be read by the substitution
    if var_map or field_map:
        body = substitute(body, var_map, field_map)
    return implies(c.guard, body)


def wlp_seq(commands, post: Formula) -> Formula:
    """wlp of a command sequence (first command executes first)."""
    out = post
    for c in reversed(commands):
        out = wlp(c, out)
    return out
