"""Explicit-state concrete reachability at finite scope.

This is the independent ground truth for the soundness tests: it shares only
the formula AST with the main pipeline.  Truth evaluation is a separate naive
recursion (reach by iterated successor sets, no closure memoization), initial
states come from a self-contained product enumeration with conjunct-level
pruning, and the post of a command mutates states directly rather than going
through weakest preconditions.

States are canonicalized up to object renaming; invariance checks are closed
under isomorphism, so this only shrinks the reach sets.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

from .commands import FieldUpdate, GuardedCommand, Havoc, VarUpdate
from .formula import (
    And, Const, DataApp, Eq, Exists, FieldApp, FieldRef, FieldUpd, Forall,
    Implies, IntAdd, IntConst, IntLt, IntLe, Member, Not, Or, Reach, Truth,
    Var, conjuncts, symbols,
)
from .semantics import ConcreteState, Scope, Vocabulary

__all__ = ["OracleError", "naive_eval", "initial_states", "concrete_post",
           "concrete_reach", "ConcreteReachSet", "canonical_state"]


class OracleError(Exception):
    """State-space ceiling exceeded or evaluation failure."""


# ---------------------------------------------------------------------------
# naive evaluation (structurally independent of semantics.evaluate)

def _oval(state: ConcreteState, t, env):
    if isinstance(t, Var):
        if t.name in env:
            return env[t.name]
        return dict(state.valuation)[t.name]
    if isinstance(t, Const):
        return state.n if t.name == "null" else dict(state.valuation)[t.name]
    if isinstance(t, FieldApp):
        return _ofield(state, t.field, env)[_oval(state, t.arg, env)]
    if isinstance(t, DataApp):
        return dict(state.data)[t.field][_oval(state, t.arg, env)]
    if isinstance(t, IntConst):
        return t.value
    if isinstance(t, IntAdd):
        x = _oval(state, t.arg, env) + t.offset
        if x < 0:
            return 0
        return min(x, state.data_max)
    raise OracleError(f"not a term: {t!r}")


def _ofield(state, fe, env):
    if isinstance(fe, FieldRef):
        return dict(state.fields)[fe.name]
    base = list(_ofield(state, fe.base, env))
    at = _oval(state, fe.at, env)
    if at != state.n:
        base[at] = _oval(state, fe.to, env)
    return tuple(base)


def naive_eval(state: ConcreteState, f, env=None) -> bool:
    """Direct recursive truth; reach computed by successor iteration."""
    env = env or {}
    if isinstance(f, Truth):
        return f.value
    if isinstance(f, Eq):
        return _oval(state, f.left, env) == _oval(state, f.right, env)
    if isinstance(f, IntLt):
        return _oval(state, f.left, env) < _oval(state, f.right, env)
    if isinstance(f, IntLe):
        return _oval(state, f.left, env) <= _oval(state, f.right, env)
    if isinstance(f, Not):
        return not naive_eval(state, f.body, env)
    if isinstance(f, And):
        for a in f.args:
            if not naive_eval(state, a, env):
                return False
        return True
    if isinstance(f, Or):
        for a in f.args:
            if naive_eval(state, a, env):
                return True
        return False
    if isinstance(f, Implies):
        return naive_eval(state, f.right, env) if naive_eval(state, f.left, env) else True
    if isinstance(f, Forall):
        for combo in itertools.product(range(state.n + 1), repeat=len(f.vars)):
            if not naive_eval(state, f.body, {**env, **dict(zip(f.vars, combo))}):
                return False
        return True
    if isinstance(f, Exists):
        for combo in itertools.product(range(state.n + 1), repeat=len(f.vars)):
            if naive_eval(state, f.body, {**env, **dict(zip(f.vars, combo))}):
                return True
        return False
    if isinstance(f, Member):
        x = _oval(state, f.term, env)
        return naive_eval(state, f.set.body, {**env, f.set.var: x})
    if isinstance(f, Reach):
        fm = _ofield(state, f.field, env)
        a = _oval(state, f.source, env)
        b = _oval(state, f.target, env)
        seen = set()
        x = a
        while x not in seen:
            if x == b:
                return True
            seen.add(x)
            x = fm[x]
        return False
    raise OracleError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# canonicalization up to object renaming

def canonical_state(s: ConcreteState) -> ConcreteState:
    """Lexicographically least state over all permutations of the objects."""
    if s.n <= 1:
        return s
    best = None
    best_key = None
    ids = list(range(s.n))
    for perm in itertools.permutations(ids):
        # perm maps old index -> new index; null stays fixed
        m = list(perm) + [s.n]
        fields = []
        for k, vs in s.fields:
            new_vs = [0] * (s.n + 1)
            for old_i in range(s.n):
                new_vs[m[old_i]] = m[vs[old_i]]
            new_vs[s.n] = s.n
            fields.append((k, tuple(new_vs)))
        data = []
        for k, vs in s.data:
            new_vs = [0] * (s.n + 1)
            for old_i in range(s.n):
                new_vs[m[old_i]] = vs[old_i]
            data.append((k, tuple(new_vs)))
        valuation = []
        for k, v in s.valuation:
            if k in s.int_vars:
                valuation.append((k, v))
            else:
                valuation.append((k, m[v]))
        cand = ConcreteState(n=s.n, fields=tuple(fields), data=tuple(data),
                             valuation=tuple(valuation), data_max=s.data_max,
                             int_vars=s.int_vars)
        key = (cand.fields, cand.data, cand.valuation)
        if best_key is None or key < best_key:
            best_key = key
            best = cand
    return best


# ---------------------------------------------------------------------------
# initial-state enumeration

def initial_states(pre_conjuncts, vocab: Vocabulary, scope: Scope,
                   ceiling: int = 5_000_000):
    """All states within scope satisfying the conjuncts, canonicalized up to
    object renaming; deterministic order."""
    out = []
    seen = set()
    count = 0
    conj_list = []
    for c in pre_conjuncts:
        conj_list.extend(conjuncts(c))
    by_need = [(set(symbols(c)) - {"null"}, c) for c in conj_list]

    for n in range(scope.n_objects + 1):
        null = n
        units = ([("var", x) for x in vocab.object_vars]
                 + [("ivar", x) for x in vocab.int_vars]
                 + [("field", f) for f in vocab.fields]
                 + [("data", d) for d in vocab.data_fields])

        def values(kind):
            if kind == "var":
                return list(range(n)) + [null]
            if kind == "ivar":
                return list(range(scope.data_max + 1))
            if kind == "field":
                return [tuple(c) + (null,) for c in itertools.product(
                    list(range(n)) + [null], repeat=n)]
            return [tuple(c) + (0,) for c in itertools.product(
                range(scope.data_max + 1), repeat=n)]

        # checks that become possible once a prefix of units is assigned
        ready_at = []
        assigned: set = set()
        remaining = list(by_need)
        for kind, name in units:
            assigned.add(name)
            now = [c for need, c in remaining if need <= assigned]
            remaining = [(need, c) for need, c in remaining if not need <= assigned]
            ready_at.append(now)
        leftovers = [c for _need, c in remaining]

        def rec(i, fields, data, valuation):
            nonlocal count
            count += 1
            if count > ceiling:
                raise OracleError(f"initial-state ceiling exceeded ({count} nodes)")
            if i == len(units):
                st = ConcreteState(n=n, fields=tuple(sorted(fields.items())),
                                   data=tuple(sorted(data.items())),
                                   valuation=tuple(sorted(valuation.items())),
                                   data_max=scope.data_max,
                                   int_vars=tuple(vocab.int_vars))
                for c in leftovers:
                    if not naive_eval(st, c):
                        return
                canon = canonical_state(st)
                key = (canon.n, canon.fields, canon.data, canon.valuation)
                if key not in seen:
                    seen.add(key)
                    out.append(canon)
                return
            kind, name = units[i]
            for val in values(kind):
                if kind == "var" or kind == "ivar":
                    valuation[name] = val
                elif kind == "field":
                    fields[name] = val
                else:
                    data[name] = val
                st = ConcreteState(n=n, fields=tuple(sorted(fields.items())),
                                   data=tuple(sorted(data.items())),
                                   valuation=tuple(sorted(valuation.items())),
                                   data_max=scope.data_max,
                                   int_vars=tuple(vocab.int_vars))
                ok = True
                for c in ready_at[i]:
                    if not naive_eval(st, c):
                        ok = False
                        break
                if ok:
                    rec(i + 1, fields, data, valuation)
            if kind in ("var", "ivar"):
                valuation.pop(name, None)
            elif kind == "field":
                fields.pop(name, None)
            else:
                data.pop(name, None)

        rec(0, {}, {}, {})
    return out


# ---------------------------------------------------------------------------
# concrete post and reachability

def concrete_post(c: GuardedCommand, s: ConcreteState):
    """Empty when the guard fails; otherwise the simultaneously updated state
    (one per havoc branch)."""
    if not naive_eval(s, c.guard):
        return []
    base_val = dict(s.valuation)
    base_fields = dict(s.fields)
    havocs = [u.var for u in c.updates if isinstance(u, Havoc)]
    branches = []
    for combo in itertools.product(range(s.n + 1), repeat=len(havocs)):
        val = dict(base_val)
        fields = dict(base_fields)
        for u in c.updates:
            if isinstance(u, VarUpdate):
                val[u.var] = _oval(s, u.term, {})
            elif isinstance(u, FieldUpdate):
                at = _oval(s, u.at, {})
                if at != s.n:
                    vs = list(fields[u.field])
                    vs[at] = _oval(s, u.to, {})
                    fields[u.field] = tuple(vs)
        for x, v in zip(havocs, combo):
            val[x] = v
        branches.append(ConcreteState(
            n=s.n, fields=tuple(sorted(fields.items())), data=s.data,
            valuation=tuple(sorted(val.items())), data_max=s.data_max,
            int_vars=s.int_vars))
    return branches


@dataclass
class ConcreteReachSet:
    """Per location, the canonical reachable states."""
    by_location: dict
    explored: int

    def states(self, loc):
        return self.by_location.get(loc, [])


def concrete_reach(cfg, pre_conjuncts, vocab, scope,
                   ceiling: int = 5_000_000) -> ConcreteReachSet:
    """Enumerate initial states at the entry and close under all enabled
    guarded commands; deterministic worklist order."""
    init = initial_states(pre_conjuncts, vocab, scope, ceiling)
    by_loc: dict = {loc: [] for loc in cfg.locations}
    seen: dict = {loc: set() for loc in cfg.locations}
    work = []

    def add(loc, st):
        canon = canonical_state(st)
        key = (canon.n, canon.fields, canon.data, canon.valuation)
        if key in seen[loc]:
            return
        seen[loc].add(key)
        by_loc[loc].append(canon)
        work.append((loc, canon))

    for st in init:
        add(cfg.entry, st)
    explored = 0
    while work:
        loc, st = work.pop(0)
        explored += 1
        if explored > ceiling:
            raise OracleError(f"reachability ceiling exceeded ({explored} states)")
        for e in cfg.out_edges(loc):
            for succ in concrete_post(e.command, st):
                add(e.target, succ)
    return ConcreteReachSet(by_location=by_loc, explored=explored)
