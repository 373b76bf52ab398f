"""Finite-scope concrete semantics.

A concrete state has a universe of objects ``0..n-1`` plus ``null`` (index n),
total object-field maps with ``f(null) = null``, integer data maps over
``[0, data_max]`` with ``d(null) = 0``, and a valuation for program variables.
``evaluate`` gives the standard finite-model truth value; ``reach`` is graph
reachability via memoized transitive closures.

Validity at scope (N, M) means truth in every state with at most N objects and
data values in [0, M]; that is the ground truth for the built-in checker.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field as dc_field

from .formula import (
    And, Const, DataApp, Eq, Exists, FieldApp, FieldRef, FieldUpd, Forall,
    Implies, IntAdd, IntConst, IntLt, IntLe, Member, Not, Or, Reach,
    SortError, Truth, Var, free_vars,
)

__all__ = ["Scope", "Vocabulary", "ConcreteState", "EvalError", "evaluate",
           "check_sorts", "reach_closure"]


class EvalError(Exception):
    """Unbound variable or malformed term during evaluation."""


@dataclass(frozen=True)
class Scope:
    """Bound on the finite concrete semantics."""
    n_objects: int = 3
    data_max: int = 7
    max_states: int = 20_000_000  # search-node ceiling for the enumerator


@dataclass(frozen=True)
class Vocabulary:
    """Declared program symbols of a procedure."""
    fields: tuple = ()
    data_fields: tuple = ()
    object_vars: tuple = ()
    int_vars: tuple = ()
    ghost_vars: tuple = ()  # subset of object_vars frozen at entry

    def object_var_names(self):
        return self.object_vars

    def is_object_var(self, name: str) -> bool:
        return name in self.object_vars

    def is_int_var(self, name: str) -> bool:
        return name in self.int_vars

    def restrict(self, syms) -> "Vocabulary":
        s = set(syms)
        return Vocabulary(
            fields=tuple(f for f in self.fields if f in s),
            data_fields=tuple(d for d in self.data_fields if d in s),
            object_vars=tuple(x for x in self.object_vars if x in s),
            int_vars=tuple(x for x in self.int_vars if x in s),
            ghost_vars=tuple(x for x in self.ghost_vars if x in s),
        )


@dataclass(frozen=True)
class ConcreteState:
    """Finite heap state; ``null`` is the object with index ``n``."""
    n: int
    fields: tuple        # ((name, values tuple of len n+1), ...) sorted by name
    data: tuple          # ((name, values tuple of len n+1), ...); slot n is 0
    valuation: tuple     # ((name, value), ...) sorted; objects by index, ints raw
    data_max: int = 7
    int_vars: tuple = ()  # names in valuation holding integers

    @property
    def null(self) -> int:
        return self.n

    def field_map(self, name):
        for k, vs in self.fields:
            if k == name:
                return vs
        raise EvalError(f"undeclared field {name!r}")

    def data_map(self, name):
        for k, vs in self.data:
            if k == name:
                return vs
        raise EvalError(f"undeclared data field {name!r}")

    def value(self, name):
        for k, x in self.valuation:
            if k == name:
                return x
        raise EvalError(f"unbound variable {name!r}")

    def elements(self):
        return range(self.n + 1)

    def describe(self) -> str:
        """Human-readable rendering, used for counterexample witnesses."""
        def obj(i):
            return "null" if i == self.n else f"o{i + 1}"
        lines = [f"universe: {{{', '.join(obj(i) for i in range(self.n))}}}"]
        for name, x in self.valuation:
            lines.append(f"  {name} = {x}" if name in self.int_vars else f"  {name} = {obj(x)}")
        for name, vs in self.fields:
            pairs = ", ".join(f"{obj(i)}->{obj(vs[i])}" for i in range(self.n))
            lines.append(f"  {name}: {pairs}" if pairs else f"  {name}: (empty)")
        for name, vs in self.data:
            pairs = ", ".join(f"{obj(i)}={vs[i]}" for i in range(self.n))
            lines.append(f"  {name}: {pairs}" if pairs else f"  {name}: (empty)")
        return "\n".join(lines)


@functools.lru_cache(maxsize=65536)
def reach_closure(fmap: tuple) -> tuple:
    """Bitmask per element of the targets reachable via 0+ steps of ``fmap``."""
    m = len(fmap)
    out = []
    for a in range(m):
        mask = 0
        x = a
        while not (mask >> x) & 1:
            mask |= 1 << x
            x = fmap[x]
        out.append(mask)
    return tuple(out)


def evaluate(state: ConcreteState, f, env: dict | None = None) -> bool:
    """Truth of ``f`` in ``state``; free variables are looked up in ``env``
    first, then in the state's valuation.
    """

    def t_val(t, env):
        if isinstance(t, Var):
            if env and t.name in env:
                return env[t.name]
            return state.value(t.name)
        if isinstance(t, Const):
            if t.name == "null":
                return state.null
            return state.value(t.name)
        if isinstance(t, FieldApp):
            return fe_map(t.field, env)[t_val(t.arg, env)]
        if isinstance(t, DataApp):
            return state.data_map(t.field)[t_val(t.arg, env)]
        if isinstance(t, IntConst):
            return t.value
        if isinstance(t, IntAdd):
            return max(0, min(state.data_max, t_val(t.arg, env) + t.offset))
        raise EvalError(f"not a term: {t!r}")

    def fe_map(fe, env):
        if isinstance(fe, FieldRef):
            return state.field_map(fe.name)
        base = fe_map(fe.base, env)
        at = t_val(fe.at, env)
        if at == state.null:
            return base  # updates at null are identity: f(null) stays null
        out = list(base)
        out[at] = t_val(fe.to, env)
        return tuple(out)

    elems = range(state.n + 1)

    def go(g, env):
        if isinstance(g, Truth):
            return g.value
        if isinstance(g, Eq):
            return t_val(g.left, env) == t_val(g.right, env)
        if isinstance(g, IntLt):
            return t_val(g.left, env) < t_val(g.right, env)
        if isinstance(g, IntLe):
            return t_val(g.left, env) <= t_val(g.right, env)
        if isinstance(g, Not):
            return not go(g.body, env)
        if isinstance(g, And):
            return all(go(a, env) for a in g.args)
        if isinstance(g, Or):
            return any(go(a, env) for a in g.args)
        if isinstance(g, Implies):
            return (not go(g.left, env)) or go(g.right, env)
        if isinstance(g, (Forall, Exists)):
            want_all = isinstance(g, Forall)

            def rec(i, e):
                if i == len(g.vars):
                    return go(g.body, e)
                for x in elems:
                    r = rec(i + 1, {**(e or {}), g.vars[i]: x})
                    if r != want_all:
                        return not want_all
                return want_all

            return rec(0, env)
        if isinstance(g, Member):
            x = t_val(g.term, env)
            return go(g.set.body, {**(env or {}), g.set.var: x})
        if isinstance(g, Reach):
            fm = fe_map(g.field, env)
            a = t_val(g.source, env)
            b = t_val(g.target, env)
            return bool((reach_closure(fm)[a] >> b) & 1)
        raise EvalError(f"not a formula: {g!r}")

    return go(f, env)


# ---------------------------------------------------------------------------
# sort checking

_OBJ, _INT = "object", "int"


def _term_sort(t, vocab: Vocabulary, bound: set) -> str:
    if isinstance(t, Var):
        if t.name in bound:
            return _OBJ
        if vocab.is_int_var(t.name):
            return _INT
        return _OBJ
    if isinstance(t, Const):
        return _OBJ
    if isinstance(t, FieldApp):
        _check_fe(t.field, vocab, bound)
        if _term_sort(t.arg, vocab, bound) != _OBJ:
            raise SortError(f"field applied to integer term: {t!r}")
        return _OBJ
    if isinstance(t, DataApp):
        if t.field not in vocab.data_fields:
            raise SortError(f"undeclared data field {t.field!r}")
        if _term_sort(t.arg, vocab, bound) != _OBJ:
            raise SortError(f"data field applied to integer term: {t!r}")
        return _INT
    if isinstance(t, IntConst):
        return _INT
    if isinstance(t, IntAdd):
        if _term_sort(t.arg, vocab, bound) != _INT:
            raise SortError(f"addition on object term: {t!r}")
        return _INT
    raise SortError(f"not a term: {t!r}")


def _check_fe(fe, vocab, bound):
    if isinstance(fe, FieldRef):
        if fe.name not in vocab.fields:
            raise SortError(f"undeclared field {fe.name!r}")
        return
    _check_fe(fe.base, vocab, bound)
    if _term_sort(fe.at, vocab, bound) != _OBJ or _term_sort(fe.to, vocab, bound) != _OBJ:
        raise SortError(f"field update with integer index or value: {fe!r}")


def check_sorts(f, vocab: Vocabulary, extra_object_vars=()) -> None:
    """Raise :class:`SortError` if object and integer subterms mix.

    Free variables default to object sort unless declared integer;
    ``extra_object_vars`` admits auxiliary free names (e.g. the predicate
    variable ``v``).
    """
    def go(g, bound):
        if isinstance(g, Truth):
            return
        if isinstance(g, Eq):
            if _term_sort(g.left, vocab, bound) != _term_sort(g.right, vocab, bound):
                raise SortError(f"equality between different sorts: {g!r}")
        elif isinstance(g, (IntLt, IntLe)):
            if (_term_sort(g.left, vocab, bound) != _INT
                    or _term_sort(g.right, vocab, bound) != _INT):
                raise SortError(f"integer comparison on object terms: {g!r}")
        elif isinstance(g, Not):
            go(g.body, bound)
        elif isinstance(g, (And, Or)):
            for a in g.args:
                go(a, bound)
        elif isinstance(g, Implies):
            go(g.left, bound)
            go(g.right, bound)
        elif isinstance(g, (Forall, Exists)):
            go(g.body, bound | set(g.vars))
        elif isinstance(g, Member):
            if _term_sort(g.term, vocab, bound) != _OBJ:
                raise SortError(f"membership of integer term: {g!r}")
            go(g.set.body, bound | {g.set.var})
        elif isinstance(g, Reach):
            _check_fe(g.field, vocab, bound)
            if (_term_sort(g.source, vocab, bound) != _OBJ
                    or _term_sort(g.target, vocab, bound) != _OBJ):
                raise SortError(f"reach endpoints must be objects: {g!r}")
        else:
            raise SortError(f"not a formula: {g!r}")

    go(f, set(extra_object_vars))
