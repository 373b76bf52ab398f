"""First-order formula and term ASTs over heap states.

Terms are object-sorted (variables, constants, field applications) or
integer-sorted (data-field applications, integer literals, bounded addition).
Formulas add equality, integer comparisons, Boolean connectives, quantifiers
over objects, set membership/comprehension, and ``reach`` (reflexive-transitive
closure of a field-successor relation).

Everything is immutable and hashable; substitution is capture-avoiding;
``alpha_normalize`` produces the canonical form used for caching.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from typing import Iterator, Mapping, Union

__all__ = [
    "Term", "Var", "Const", "FieldApp", "DataApp", "IntConst", "IntAdd",
    "FieldExpr", "FieldRef", "FieldUpd",
    "Formula", "Truth", "Eq", "IntLt", "IntLe", "Not", "And", "Or",
    "Implies", "Forall", "Exists", "Member", "SetComprehension", "Reach",
    "TRUE", "FALSE", "V",
    "conj", "disj", "neg", "implies", "iff", "forall", "exists",
    "SortError", "free_vars", "symbols", "substitute", "alpha_normalize",
    "conjuncts", "to_text", "struct_key", "cache_text",
]

BOUND_PREFIX = "_b"  # reserved for normalized bound variables


class SortError(Exception):
    """Object-sorted and integer-sorted subterms were mixed."""


# ---------------------------------------------------------------------------
# terms and field expressions

@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    """Object constant; ``null`` is the only one the corpus uses."""
    name: str


@dataclass(frozen=True)
class FieldRef:
    name: str


@dataclass(frozen=True)
class FieldUpd:
    """Point update ``base[at := to]`` of an object field."""
    base: "FieldExpr"
    at: "Term"
    to: "Term"


FieldExpr = Union[FieldRef, FieldUpd]


@dataclass(frozen=True)
class FieldApp:
    field: FieldExpr
    arg: "Term"


@dataclass(frozen=True)
class DataApp:
    field: str
    arg: "Term"


@dataclass(frozen=True)
class IntConst:
    value: int


@dataclass(frozen=True)
class IntAdd:
    """Saturating bounded addition ``arg + offset`` (clamped to [0, data_max])."""
    arg: "Term"
    offset: int


Term = Union[Var, Const, FieldApp, DataApp, IntConst, IntAdd]


# ---------------------------------------------------------------------------
# formulas

@dataclass(frozen=True)
class Truth:
    value: bool


@dataclass(frozen=True)
class Eq:
    left: Term
    right: Term


@dataclass(frozen=True)
class IntLt:
    left: Term
    right: Term


@dataclass(frozen=True)
class IntLe:
    left: Term
    right: Term


@dataclass(frozen=True)
class Not:
    body: "Formula"


@dataclass(frozen=True)
class And:
    args: tuple


@dataclass(frozen=True)
class Or:
    args: tuple


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class Forall:
    vars: tuple
    body: "Formula"


@dataclass(frozen=True)
class Exists:
    vars: tuple
    body: "Formula"


@dataclass(frozen=True)
class SetComprehension:
    var: str
    body: "Formula"


@dataclass(frozen=True)
class Member:
    term: Term
    set: SetComprehension


@dataclass(frozen=True)
class Reach:
    """``reach f a b``: b reachable from a via 0+ steps of field f."""
    field: FieldExpr
    source: Term
    target: Term


Formula = Union[Truth, Eq, IntLt, IntLe, Not, And, Or, Implies,
                Forall, Exists, Member, Reach]

TRUE = Truth(True)
FALSE = Truth(False)
V = Var("v")  # the distinguished free object variable of abstraction predicates


# ---------------------------------------------------------------------------
# smart constructors (flatten nested conjunction/disjunction, absorb truth)

def conj(args) -> Formula:
    flat = []
    for a in args:
        if isinstance(a, Truth):
            if not a.value:
                return FALSE
        elif isinstance(a, And):
            flat.extend(a.args)
        else:
            flat.append(a)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(args) -> Formula:
    flat = []
    for a in args:
        if isinstance(a, Truth):
            if a.value:
                return TRUE
        elif isinstance(a, Or):
            flat.extend(a.args)
        else:
            flat.append(a)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def neg(f: Formula) -> Formula:
    if isinstance(f, Truth):
        return Truth(not f.value)
    if isinstance(f, Not):
        return f.body
    return Not(f)


def implies(a: Formula, b: Formula) -> Formula:
    if isinstance(a, Truth):
        return b if a.value else TRUE
    if isinstance(b, Truth) and b.value:
        return TRUE
    return Implies(a, b)


def iff(a: Formula, b: Formula) -> Formula:
    return conj([implies(a, b), implies(b, a)])


def forall(names, body: Formula) -> Formula:
    names = tuple(names)
    return Forall(names, body) if names else body


def exists(names, body: Formula) -> Formula:
    names = tuple(names)
    return Exists(names, body) if names else body


# ---------------------------------------------------------------------------
# traversal helpers

def _term_free_vars(t: Term, out: set) -> None:
    if isinstance(t, Var):
        out.add(t.name)
    elif isinstance(t, FieldApp):
        _fexpr_free_vars(t.field, out)
        _term_free_vars(t.arg, out)
    elif isinstance(t, (DataApp, IntAdd)):
        _term_free_vars(t.arg, out)


def _fexpr_free_vars(fe: FieldExpr, out: set) -> None:
    if isinstance(fe, FieldUpd):
        _fexpr_free_vars(fe.base, out)
        _term_free_vars(fe.at, out)
        _term_free_vars(fe.to, out)


def free_vars(f: Formula) -> frozenset:
    """Names of free variables (object- or integer-sorted)."""
    out: set = set()

    def go(g, bound):
        if isinstance(g, Truth):
            return
        if isinstance(g, (Eq, IntLt, IntLe)):
            for t in (g.left, g.right):
                tv: set = set()
                _term_free_vars(t, tv)
                out.update(tv - bound)
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
            tv: set = set()
            _term_free_vars(g.term, tv)
            out.update(tv - bound)
            go(g.set.body, bound | {g.set.var})
        elif isinstance(g, Reach):
            tv = set()
            _fexpr_free_vars(g.field, tv)
            _term_free_vars(g.source, tv)
            _term_free_vars(g.target, tv)
            out.update(tv - bound)
        else:  # pragma: no cover
            raise TypeError(f"not a formula: {g!r}")

    go(f, set())
    return frozenset(out)


def _term_symbols(t: Term, fields: set, data: set, consts: set) -> None:
    if isinstance(t, Const):
        consts.add(t.name)
    elif isinstance(t, FieldApp):
        _fexpr_symbols(t.field, fields, data, consts)
        _term_symbols(t.arg, fields, data, consts)
    elif isinstance(t, DataApp):
        data.add(t.field)
        _term_symbols(t.arg, fields, data, consts)
    elif isinstance(t, IntAdd):
        _term_symbols(t.arg, fields, data, consts)


def _fexpr_symbols(fe: FieldExpr, fields: set, data: set, consts: set) -> None:
    if isinstance(fe, FieldRef):
        fields.add(fe.name)
    else:
        _fexpr_symbols(fe.base, fields, data, consts)
        _term_symbols(fe.at, fields, data, consts)
        _term_symbols(fe.to, fields, data, consts)


def symbols(f: Formula) -> frozenset:
    """Program symbols of a formula: free variables, field and data-field names."""
    fields: set = set()
    data: set = set()
    consts: set = set()

    def go(g, bound):
        if isinstance(g, Truth):
            return
        if isinstance(g, (Eq, IntLt, IntLe)):
            for t in (g.left, g.right):
                _collect(t, bound)
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
            _collect(g.term, bound)
            go(g.set.body, bound | {g.set.var})
        elif isinstance(g, Reach):
            _fexpr_symbols(g.field, fields, data, consts)
            _collect(g.source, bound)
            _collect(g.target, bound)

    def _collect(t, bound):
        if isinstance(t, Var):
            if t.name not in bound:
                fields_vars.add(t.name)
        elif isinstance(t, Const):
            consts.add(t.name)
        elif isinstance(t, FieldApp):
            _fexpr_symbols(t.field, fields, data, consts)
            _collect(t.arg, bound)
        elif isinstance(t, DataApp):
            data.add(t.field)
            _collect(t.arg, bound)
        elif isinstance(t, IntAdd):
            _collect(t.arg, bound)

    fields_vars: set = set()
    go(f, set())
    return frozenset(fields_vars | fields | data)


# ---------------------------------------------------------------------------
# substitution

def _fresh(base: str, taken) -> str:
    cand = base + "'"
    while cand in taken:
        cand += "'"
    return cand


def substitute(f: Formula, var_map: Mapping[str, Term] | None = None,
               field_map: Mapping[str, FieldExpr] | None = None) -> Formula:
    """Capture-avoiding simultaneous substitution of variables and field symbols."""
    vmap = dict(var_map or {})
    fmap = dict(field_map or {})
    if not vmap and not fmap:
        return f
    # free variables of replacement terms, for capture detection
    danger: set = set()
    for t in vmap.values():
        s: set = set()
        _term_free_vars(t, s)
        danger |= s
    for fe in fmap.values():
        s = set()
        _fexpr_free_vars(fe, s)
        danger |= s

    def sub_fe(fe, vm):
        if isinstance(fe, FieldRef):
            return fmap.get(fe.name, fe)
        return FieldUpd(sub_fe(fe.base, vm), sub_t(fe.at, vm), sub_t(fe.to, vm))

    def sub_t(t, vm):
        if isinstance(t, Var):
            return vm.get(t.name, t)
        if isinstance(t, Const):
            return t
        if isinstance(t, FieldApp):
            return FieldApp(sub_fe(t.field, vm), sub_t(t.arg, vm))
        if isinstance(t, DataApp):
            return DataApp(t.field, sub_t(t.arg, vm))
        if isinstance(t, IntAdd):
            return IntAdd(sub_t(t.arg, vm), t.offset)
        return t

    def go(g, vm):
        if isinstance(g, Truth):
            return g
        if isinstance(g, Eq):
            return Eq(sub_t(g.left, vm), sub_t(g.right, vm))
        if isinstance(g, IntLt):
            return IntLt(sub_t(g.left, vm), sub_t(g.right, vm))
        if isinstance(g, IntLe):
            return IntLe(sub_t(g.left, vm), sub_t(g.right, vm))
        if isinstance(g, Not):
            return Not(go(g.body, vm))
        if isinstance(g, And):
            return And(tuple(go(a, vm) for a in g.args))
        if isinstance(g, Or):
            return Or(tuple(go(a, vm) for a in g.args))
        if isinstance(g, Implies):
            return Implies(go(g.left, vm), go(g.right, vm))
        if isinstance(g, (Forall, Exists)):
            names, body, vm2 = _rebind(g.vars, g.body, vm)
            cls = type(g)
            return cls(names, go(body, vm2))
        if isinstance(g, Member):
            names, body, vm2 = _rebind((g.set.var,), g.set.body, vm)
            return Member(sub_t(g.term, vm),
                          SetComprehension(names[0], go(body, vm2)))
        if isinstance(g, Reach):
            return Reach(sub_fe(g.field, vm), sub_t(g.source, vm), sub_t(g.target, vm))
        raise TypeError(f"not a formula: {g!r}")  # pragma: no cover

    def _rebind(names, body, vm):
        vm2 = {k: v for k, v in vm.items() if k not in names}
        new_names = []
        renames = {}
        taken = danger | set(vm2) | free_vars(body)
        for nm in names:
            if nm in danger:
                nn = _fresh(nm, taken)
                renames[nm] = Var(nn)
                taken.add(nn)
                new_names.append(nn)
            else:
                new_names.append(nm)
        if renames:
            body = substitute(body, renames)
        return tuple(new_names), body, vm2

    return go(f, vmap)


# ---------------------------------------------------------------------------
# alpha normalization

def alpha_normalize(f: Formula) -> Formula:
    """Canonical form: bound variables renamed ``_b0, _b1, ...`` in traversal
    order, arguments of commutative connectives sorted by structural order.
    Two formulas are alpha-equivalent iff their normal forms are equal.
    """
    counter = itertools.count()

    def go_t(t, env):
        if isinstance(t, Var):
            return Var(env.get(t.name, t.name))
        if isinstance(t, Const):
            return t
        if isinstance(t, FieldApp):
            return FieldApp(go_fe(t.field, env), go_t(t.arg, env))
        if isinstance(t, DataApp):
            return DataApp(t.field, go_t(t.arg, env))
        if isinstance(t, IntAdd):
            return IntAdd(go_t(t.arg, env), t.offset)
        return t

    def go_fe(fe, env):
        if isinstance(fe, FieldRef):
            return fe
        return FieldUpd(go_fe(fe.base, env), go_t(fe.at, env), go_t(fe.to, env))

    def go(g, env):
        if isinstance(g, Truth):
            return g
        if isinstance(g, Eq):
            return Eq(go_t(g.left, env), go_t(g.right, env))
        if isinstance(g, IntLt):
            return IntLt(go_t(g.left, env), go_t(g.right, env))
        if isinstance(g, IntLe):
            return IntLe(go_t(g.left, env), go_t(g.right, env))
        if isinstance(g, Not):
            return Not(go(g.body, env))
        if isinstance(g, (And, Or)):
            args = sorted((go(a, env) for a in g.args), key=struct_key)
            return type(g)(tuple(args))
        if isinstance(g, Implies):
            return Implies(go(g.left, env), go(g.right, env))
        if isinstance(g, (Forall, Exists)):
            env2 = dict(env)
            names = []
            for nm in g.vars:
                nn = f"{BOUND_PREFIX}{next(counter)}"
                env2[nm] = nn
                names.append(nn)
            return type(g)(tuple(names), go(g.body, env2))
        if isinstance(g, Member):
            env2 = dict(env)
            nn = f"{BOUND_PREFIX}{next(counter)}"
            env2[g.set.var] = nn
            return Member(go_t(g.term, env), SetComprehension(nn, go(g.set.body, env2)))
        if isinstance(g, Reach):
            return Reach(go_fe(g.field, env), go_t(g.source, env), go_t(g.target, env))
        raise TypeError(f"not a formula: {g!r}")  # pragma: no cover

    return go(f, {})


def struct_key(node) -> tuple:
    """Total structural order on terms/formulas, used to sort commutative args."""
    if isinstance(node, Truth):
        return (0, node.value)
    if isinstance(node, Var):
        return (1, node.name)
    if isinstance(node, Const):
        return (2, node.name)
    if isinstance(node, IntConst):
        return (3, node.value)
    if isinstance(node, IntAdd):
        return (4, struct_key(node.arg), node.offset)
    if isinstance(node, FieldRef):
        return (5, node.name)
    if isinstance(node, FieldUpd):
        return (6, struct_key(node.base), struct_key(node.at), struct_key(node.to))
    if isinstance(node, FieldApp):
        return (7, struct_key(node.field), struct_key(node.arg))
    if isinstance(node, DataApp):
        return (8, node.field, struct_key(node.arg))
    if isinstance(node, Eq):
        return (9, struct_key(node.left), struct_key(node.right))
    if isinstance(node, IntLt):
        return (10, struct_key(node.left), struct_key(node.right))
    if isinstance(node, IntLe):
        return (11, struct_key(node.left), struct_key(node.right))
    if isinstance(node, Not):
        return (12, struct_key(node.body))
    if isinstance(node, And):
        return (13,) + tuple(struct_key(a) for a in node.args)
    if isinstance(node, Or):
        return (14,) + tuple(struct_key(a) for a in node.args)
    if isinstance(node, Implies):
        return (15, struct_key(node.left), struct_key(node.right))
    if isinstance(node, Forall):
        return (16, len(node.vars), struct_key(node.body))
    if isinstance(node, Exists):
        return (17, len(node.vars), struct_key(node.body))
    if isinstance(node, Member):
        return (18, struct_key(node.term), struct_key(node.set.body))
    if isinstance(node, Reach):
        return (19, struct_key(node.field), struct_key(node.source), struct_key(node.target))
    raise TypeError(f"no structural key for {node!r}")  # pragma: no cover


def conjuncts(f: Formula) -> list:
    """Flatten top-level conjunctions; quantifiers block splitting."""
    if isinstance(f, And):
        out = []
        for a in f.args:
            out.extend(conjuncts(a))
        return out
    return [f]


# ---------------------------------------------------------------------------
# compositional canonical text
#
# ``cache_text`` renders a formula with bound variables as de Bruijn distances
# and commutative arguments sorted by their rendered text.  Equality of texts
# coincides with equality of alpha normal forms, but the rendering of a
# subformula is context independent, so composite texts are assembled from
# id-memoized pieces in O(1) per composition.

_CACHE_TEXT: dict = {}  # id(node) -> (node, text); strong refs keep ids stable


def cache_text(f) -> str:
    return _ct(f, ())


def _ct(node, stack) -> str:
    if not stack:
        # outside any binder the rendering is context independent, so it can
        # be memoized per object; under a binder the de Bruijn distances
        # depend on the path and the node is rendered through its binder
        ent = _CACHE_TEXT.get(id(node))
        if ent is not None and ent[0] is node:
            return ent[1]
        text = _ct_raw(node, stack)
        _CACHE_TEXT[id(node)] = (node, text)
        return text
    return _ct_raw(node, stack)


def _ct_raw(node, stack) -> str:
    if isinstance(node, Truth):
        return "T" if node.value else "F"
    if isinstance(node, Var):
        for d, nm in enumerate(reversed(stack)):
            if nm == node.name:
                return f"%{d}"
        return node.name
    if isinstance(node, Const):
        return f"#{node.name}"
    if isinstance(node, IntConst):
        return str(node.value)
    if isinstance(node, IntAdd):
        return f"(+ {_ct(node.arg, stack)} {node.offset})"
    if isinstance(node, FieldRef):
        return f"@{node.name}"
    if isinstance(node, FieldUpd):
        return f"(upd {_ct(node.base, stack)} {_ct(node.at, stack)} {_ct(node.to, stack)})"
    if isinstance(node, FieldApp):
        return f"(. {_ct(node.field, stack)} {_ct(node.arg, stack)})"
    if isinstance(node, DataApp):
        return f"(d {node.field} {_ct(node.arg, stack)})"
    if isinstance(node, Eq):
        return f"(= {_ct(node.left, stack)} {_ct(node.right, stack)})"
    if isinstance(node, IntLt):
        return f"(< {_ct(node.left, stack)} {_ct(node.right, stack)})"
    if isinstance(node, IntLe):
        return f"(<= {_ct(node.left, stack)} {_ct(node.right, stack)})"
    if isinstance(node, Not):
        return f"(~ {_ct(node.body, stack)})"
    if isinstance(node, And):
        parts = sorted(_ct(a, stack) for a in node.args)
        return f"(& {' '.join(parts)})"
    if isinstance(node, Or):
        parts = sorted(_ct(a, stack) for a in node.args)
        return f"(| {' '.join(parts)})"
    if isinstance(node, Implies):
        return f"(-> {_ct(node.left, stack)} {_ct(node.right, stack)})"
    if isinstance(node, Forall):
        return f"(A{len(node.vars)} {_ct(node.body, stack + node.vars)})"
    if isinstance(node, Exists):
        return f"(E{len(node.vars)} {_ct(node.body, stack + node.vars)})"
    if isinstance(node, Member):
        return f"(: {_ct(node.term, stack)} (S {_ct(node.set.body, stack + (node.set.var,))}))"
    if isinstance(node, Reach):
        return (f"(r {_ct(node.field, stack)} {_ct(node.source, stack)} "
                f"{_ct(node.target, stack)})")
    raise TypeError(f"no cache text for {node!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# printing (mirrors the documented concrete syntax; see parser)

def _t_text(t: Term) -> str:
    if isinstance(t, Var):
        return t.name
    if isinstance(t, Const):
        return t.name
    if isinstance(t, IntConst):
        return str(t.value)
    if isinstance(t, IntAdd):
        off = f"+ {t.offset}" if t.offset >= 0 else f"- {-t.offset}"
        return f"{_t_atom(t.arg)} {off}"
    if isinstance(t, FieldApp):
        return f"{_fe_text(t.field)} {_t_atom(t.arg)}"
    if isinstance(t, DataApp):
        return f"{t.field} {_t_atom(t.arg)}"
    raise TypeError(f"not a term: {t!r}")


def _t_atom(t: Term) -> str:
    s = _t_text(t)
    return f"({s})" if isinstance(t, (FieldApp, DataApp, IntAdd)) else s


def _fe_text(fe: FieldExpr) -> str:
    if isinstance(fe, FieldRef):
        return fe.name
    return f"{_fe_text(fe.base)}[{_t_text(fe.at)} := {_t_text(fe.to)}]"


_PREC = {"-->": 1, "|": 2, "&": 3}


def to_text(f: Formula) -> str:
    """Render in the textual syntax accepted by the parser (round-trips)."""
    return _f_text(f, 0)


def _f_text(f: Formula, prec: int) -> str:
    if isinstance(f, Truth):
        return "true" if f.value else "false"
    if isinstance(f, Eq):
        return f"{_t_text(f.left)} = {_t_text(f.right)}"
    if isinstance(f, IntLt):
        return f"{_t_text(f.left)} < {_t_text(f.right)}"
    if isinstance(f, IntLe):
        return f"{_t_text(f.left)} <= {_t_text(f.right)}"
    if isinstance(f, Not):
        body = f.body
        if isinstance(body, Eq):
            return f"{_t_text(body.left)} ~= {_t_text(body.right)}"
        if isinstance(body, Member):
            return f"{_t_text(body.term)} ~: {{{body.set.var}. {_f_text(body.set.body, 0)}}}"
        return f"~{_f_text(body, 4)}"
    if isinstance(f, And):
        s = " & ".join(_f_text(a, _PREC['&']) for a in f.args)
        return _paren(s, prec, _PREC["&"])
    if isinstance(f, Or):
        s = " | ".join(_f_text(a, _PREC['|'] ) for a in f.args)
        return _paren(s, prec, _PREC["|"])
    if isinstance(f, Implies):
        s = f"{_f_text(f.left, _PREC['-->'] + 1)} --> {_f_text(f.right, _PREC['-->'])}"
        return _paren(s, prec, _PREC["-->"])
    if isinstance(f, Forall):
        s = f"ALL {' '.join(f.vars)}. {_f_text(f.body, 0)}"
        return _paren(s, prec, 0)
    if isinstance(f, Exists):
        s = f"EX {' '.join(f.vars)}. {_f_text(f.body, 0)}"
        return _paren(s, prec, 0)
    if isinstance(f, Member):
        return f"{_t_text(f.term)} : {{{f.set.var}. {_f_text(f.set.body, 0)}}}"
    if isinstance(f, Reach):
        fe = _fe_text(f.field)
        if isinstance(f.field, FieldUpd):
            fe = f"({fe})"
        return f"reach {fe} {_t_atom(f.source)} {_t_atom(f.target)}"
    raise TypeError(f"not a formula: {f!r}")


def _paren(s: str, outer: int, inner: int) -> str:
    return f"({s})" if outer > inner else s
