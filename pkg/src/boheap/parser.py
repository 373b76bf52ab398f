"""Concrete syntax: formulas and benchmark procedure files.

Formula grammar (presented loosely; application binds tightest, ``-->`` is
right associative and weakest, ``~`` strongest among connectives)::

    F ::= ALL x y . F | EX x y . F | F --> F | F '|' F | F & F | ~F
        | t = t | t ~= t | i < i | i <= i | t : S | t ~: S
        | true | false | ( F )
    t ::= null | name | fe t | ( t )                    (object terms)
    i ::= number | name | d t | i + number | i - number (integer terms)
    fe ::= fieldname | fe [ t := t ]
    S ::= { w . F } | setname                           (setname expands)

``reach fe t t`` is the reflexive-transitive closure of the field successor
relation.  Identifiers starting with ``_`` are reserved.  The benchmark file
format is line oriented with a ``boheap 1`` header; see the shipped corpus.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .formula import (
    Const, DataApp, Eq, Exists, FieldApp, FieldRef, FieldUpd, Forall,
    IntAdd, IntConst, IntLt, IntLe, Member, Not, Reach, SetComprehension,
    TRUE, FALSE, Truth, Var, conj, disj, free_vars, iff, implies, neg,
    to_text,
)
from .commands import (
    ControlFlowGraph, Edge, FieldUpdate, GuardedCommand, Havoc, VarUpdate,
    check_command_sorts,
)
from .heaps import Predicate
from .semantics import SortError, Vocabulary, check_sorts

__all__ = ["ParseError", "FormulaParser", "parse_formula", "parse_procedure",
           "print_procedure", "ProcedureSpec"]


class ParseError(Exception):
    pass


_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>\d+)
  | (?P<name>[A-Za-z][A-Za-z0-9_']*)
  | (?P<op><=|~=|~:|-->|<->|:=|[()\[\]{}.=<>&|~:+\-])
""", re.VERBOSE)


def _tokenize(text: str):
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"bad character {text[pos]!r} at {pos} in {text!r}")
        pos = m.end()
        if m.lastgroup != "ws":
            out.append((m.lastgroup, m.group()))
    out.append(("eof", ""))
    return out


class FormulaParser:
    """Recursive-descent parser; needs the vocabulary to resolve whether a
    name is a field, data field, variable, or named set."""

    def __init__(self, vocab: Vocabulary, sets: dict | None = None,
                 extra_vars=()):
        self.vocab = vocab
        self.sets = sets or {}
        self.extra_vars = set(extra_vars)

    def parse(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        f = self._formula()
        self._expect("eof")
        return f

    def parse_term(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        t = self._term()
        self._expect("eof")
        return t

    def parse_set(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0
        s = self._set_expr()
        self._expect("eof")
        return s

    # -- token helpers --

    def _peek(self):
        return self.toks[self.i]

    def _next(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def _expect(self, kind, value=None):
        k, v = self._next()
        if k != kind or (value is not None and v != value):
            raise ParseError(f"expected {value or kind}, got {v!r}")
        return v

    def _at(self, value):
        k, v = self._peek()
        return v == value and k in ("op", "name")

    # -- formulas --

    def _formula(self):
        return self._iff()

    def _iff(self):
        left = self._implies()
        if self._at("<->"):
            self._next()
            right = self._iff()
            return iff(left, right)
        return left

    def _implies(self):
        left = self._or()
        if self._at("-->"):
            self._next()
            right = self._implies()
            return implies(left, right)
        return left

    def _or(self):
        args = [self._and()]
        while self._at("|"):
            self._next()
            args.append(self._and())
        return disj(args) if len(args) > 1 else args[0]

    def _and(self):
        args = [self._unary()]
        while self._at("&"):
            self._next()
            args.append(self._unary())
        return conj(args) if len(args) > 1 else args[0]

    def _unary(self):
        if self._at("~"):
            self._next()
            return neg(self._unary())
        if self._at("ALL") or self._at("EX"):
            kind = self._next()[1]
            names = []
            while self._peek()[0] == "name" and not self._at("."):
                names.append(self._ident())
            self._expect("op", ".")
            body = self._formula()
            cls = Forall if kind == "ALL" else Exists
            return cls(tuple(names), body)
        return self._atom()

    def _atom(self):
        k, v = self._peek()
        if v == "(":
            save = self.i
            self._next()
            try:
                f = self._formula()
                self._expect("op", ")")
                if self._peek()[1] in ("=", "~=", "<", "<=", ":", "~:", "+", "-"):
                    raise ParseError("parenthesized term, not formula")
                return f
            except ParseError:
                self.i = save
        if v == "true":
            self._next()
            return TRUE
        if v == "false":
            self._next()
            return FALSE
        if v == "reach":
            self._next()
            fe = self._field_expr()
            a = self._term_atom()
            b = self._term_atom()
            return Reach(fe, a, b)
        return self._comparison()

    def _comparison(self):
        left = self._term()
        k, op = self._peek()
        if op == "=":
            self._next()
            return Eq(left, self._term())
        if op == "~=":
            self._next()
            return Not(Eq(left, self._term()))
        if op == "<":
            self._next()
            return IntLt(left, self._term())
        if op == "<=":
            self._next()
            return IntLe(left, self._term())
        if op == ":":
            self._next()
            return Member(left, self._set_expr())
        if op == "~:":
            self._next()
            return Not(Member(left, self._set_expr()))
        raise ParseError(f"expected comparison, got {op!r}")

    def _set_expr(self) -> SetComprehension:
        k, v = self._peek()
        if v == "{":
            self._next()
            w = self._ident()
            self._expect("op", ".")
            body = self._formula()
            self._expect("op", "}")
            return SetComprehension(w, body)
        if k == "name" and v in self.sets:
            self._next()
            return self.sets[v]
        raise ParseError(f"expected set expression, got {v!r}")

    # -- terms --

    def _term(self):
        t = self._term_atom()
        while self._peek()[1] in ("+", "-"):
            sign = 1 if self._next()[1] == "+" else -1
            k, v = self._next()
            if k != "num":
                raise ParseError("expected integer offset after +/-")
            t = IntAdd(t, sign * int(v))
        return t

    def _term_atom(self):
        k, v = self._peek()
        if v == "(":
            self._next()
            t = self._term()
            self._expect("op", ")")
            return t
        if k == "num":
            self._next()
            return IntConst(int(v))
        if k != "name":
            raise ParseError(f"expected term, got {v!r}")
        if v == "null":
            self._next()
            return Const("null")
        if v in self.vocab.fields:
            fe = self._field_expr()
            return FieldApp(fe, self._term_atom())
        if v in self.vocab.data_fields:
            self._next()
            return DataApp(v, self._term_atom())
        self._next()
        return Var(v)

    def _field_expr(self):
        k, v = self._next()
        if v == "(":
            fe = self._field_expr()
            self._expect("op", ")")
        else:
            if k != "name" or v not in self.vocab.fields:
                raise ParseError(f"expected field name, got {v!r}")
            fe = FieldRef(v)
        while self._at("["):
            self._next()
            at = self._term()
            self._expect("op", ":=")
            to = self._term()
            self._expect("op", "]")
            fe = FieldUpd(fe, at, to)
        return fe

    def _ident(self):
        k, v = self._next()
        if k != "name":
            raise ParseError(f"expected identifier, got {v!r}")
        if v.startswith("_"):
            raise ParseError("identifiers starting with '_' are reserved")
        return v


def parse_formula(text: str, vocab: Vocabulary, sets=None):
    return FormulaParser(vocab, sets).parse(text)


# ---------------------------------------------------------------------------
# benchmark files

@dataclass
class ProcedureSpec:
    """Parsed benchmark file: vocabulary, predicates, contracts, CFG."""
    name: str
    vocab: Vocabulary
    predicates: tuple
    requires: tuple
    ensures: tuple
    cfg: ControlFlowGraph
    sets: dict


HEADER = "boheap 1"


def parse_procedure(text: str) -> ProcedureSpec:
    lines = [ln.rstrip() for ln in text.splitlines()]
    body = [(i + 1, ln) for i, ln in enumerate(lines)
            if ln.strip() and not ln.strip().startswith("#")]
    if not body or body[0][1].strip() != HEADER:
        raise ParseError(f"missing '{HEADER}' header line")
    body = body[1:]

    name = None
    object_vars: list = []
    ghost_vars: list = []
    int_vars: list = []
    fields: list = []
    data_fields: list = []
    preds: list = []
    requires: list = []
    ensures: list = []
    invariants: list = []
    sets: dict = {}
    locations: list = []
    entry = exit_ = None
    raw_edges: list = []

    def unquote(rest, lineno):
        rest = rest.strip()
        if not (rest.startswith('"') and rest.endswith('"')):
            raise ParseError(f"line {lineno}: expected quoted formula")
        return rest[1:-1]

    pred_re = re.compile(r'^pred\s+(\w+)\s+"([^"]*)"\s*(.*)$')
    set_re = re.compile(r'^set\s+(\w+)\s+"([^"]*)"\s*$')
    edge_re = re.compile(r'^edge\s+(\w+)\s+->\s+(\w+)\s+guard\s+"([^"]*)"\s*(?:do\s+(.*))?$')

    for lineno, raw in body:
        ln = raw.strip()
        kw, _, rest = ln.partition(" ")
        if kw == "procedure":
            name = rest.strip()
        elif kw == "var":
            object_vars.extend(rest.split())
        elif kw == "ghostvar":
            gs = rest.split()
            object_vars.extend(gs)
            ghost_vars.extend(gs)
        elif kw == "intvar":
            int_vars.extend(rest.split())
        elif kw == "field":
            fields.extend(rest.split())
        elif kw == "data":
            data_fields.extend(rest.split())
        elif kw == "set":
            m = set_re.match(ln)
            if not m:
                raise ParseError(f"line {lineno}: bad set declaration")
            sets[m.group(1)] = (lineno, m.group(2))
        elif kw == "pred":
            m = pred_re.match(ln)
            if not m:
                raise ParseError(f"line {lineno}: bad predicate declaration")
            flags = m.group(3).split()
            preds.append((lineno, m.group(1), m.group(2), flags))
        elif kw == "requires":
            requires.append((lineno, unquote(rest, lineno)))
        elif kw == "ensures":
            ensures.append((lineno, unquote(rest, lineno)))
        elif kw == "invariant":
            invariants.append((lineno, unquote(rest, lineno)))
        elif kw == "location":
            parts = rest.split()
            locations.append(parts[0])
            if "entry" in parts[1:]:
                entry = parts[0]
            if "exit" in parts[1:]:
                exit_ = parts[0]
        elif kw == "edge":
            m = edge_re.match(ln)
            if not m:
                raise ParseError(f"line {lineno}: bad edge")
            raw_edges.append((lineno, m.group(1), m.group(2), m.group(3),
                              m.group(4) or ""))
        else:
            raise ParseError(f"line {lineno}: unknown keyword {kw!r}")

    if name is None:
        raise ParseError("missing procedure name")
    if entry is None or exit_ is None:
        raise ParseError("entry/exit locations must be marked")

    vocab = Vocabulary(fields=tuple(fields), data_fields=tuple(data_fields),
                       object_vars=tuple(object_vars), int_vars=tuple(int_vars),
                       ghost_vars=tuple(ghost_vars))

    set_objs: dict = {}
    for sname, (lineno, stext) in sets.items():
        try:
            set_objs[sname] = FormulaParser(vocab, set_objs).parse_set(stext)
        except ParseError as e:
            raise ParseError(f"line {lineno}: {e}") from e

    def parse_f(lineno, text, extra=()):
        try:
            f = FormulaParser(vocab, set_objs).parse(text)
        except ParseError as e:
            raise ParseError(f"line {lineno}: {e}") from e
        try:
            check_sorts(f, vocab, extra_object_vars=tuple(free_vars(f)))
        except SortError as e:
            raise ParseError(f"line {lineno}: {e}") from e
        return f

    predicates = []
    for lineno, pname, ptext, flags in preds:
        f = parse_f(lineno, ptext)
        bad = set(free_vars(f)) - set(object_vars) - set(int_vars) - {"v"}
        if bad:
            raise ParseError(f"line {lineno}: predicate {pname} has undeclared "
                             f"free variables {sorted(bad)}")
        singleton = "singleton" in flags
        is_state = "v" not in free_vars(f)
        justification = ""
        if singleton:
            shape = _singleton_shape(f)
            justification = shape or "user-asserted singleton"
        predicates.append(Predicate(
            name=pname, formula=f, singleton=singleton,
            justification=justification, is_state=is_state,
            track=("notrack" not in flags), auto=False))

    def closed(lineno, f, what):
        extra = free_vars(f) - set(object_vars) - set(int_vars)
        if extra:
            raise ParseError(f"line {lineno}: {what} has free variables {sorted(extra)}")
        return f

    req = [closed(ln, parse_f(ln, t), "requires") for ln, t in requires]
    ens = [closed(ln, parse_f(ln, t), "ensures") for ln, t in ensures]
    for ln, t in invariants:
        f = closed(ln, parse_f(ln, t), "invariant")
        req.append(f)
        ens.append(f)

    edges = []
    for lineno, src, dst, guard_text, update_text in raw_edges:
        guard = parse_f(lineno, guard_text)
        updates = _parse_updates(lineno, update_text, vocab, set_objs)
        cmd = GuardedCommand(guard=guard, updates=tuple(updates),
                             label=f"{src}->{dst}#{lineno}")
        try:
            check_command_sorts(cmd, vocab)
        except SortError as e:
            raise ParseError(f"line {lineno}: {e}") from e
        for u in updates:
            tgt = u.var if isinstance(u, (VarUpdate, Havoc)) else u.field
            if isinstance(u, (VarUpdate, Havoc)) and tgt in ghost_vars:
                raise ParseError(f"line {lineno}: ghost variable {tgt} updated")
        edges.append(Edge(src, cmd, dst))

    cfg = ControlFlowGraph(locations=tuple(locations), entry=entry,
                           exit=exit_, edges=tuple(edges))
    return ProcedureSpec(name=name, vocab=vocab, predicates=tuple(predicates),
                         requires=tuple(req), ensures=tuple(ens), cfg=cfg,
                         sets={k: v for k, v in set_objs.items()})


def _singleton_shape(f):
    """(x = v) or (v = x) defining formulas are singleton by shape."""
    if isinstance(f, Eq):
        sides = {getattr(f.left, "name", None), getattr(f.right, "name", None)}
        if "v" in sides and isinstance(f.left, (Var, Const)) \
                and isinstance(f.right, (Var, Const)):
            return f"equality with v: {to_text(f)}"
    return None


def _parse_updates(lineno, text, vocab, sets):
    if not text.strip():
        return []
    out = []
    for part in text.split(","):
        part = part.strip()
        if part.startswith("havoc "):
            out.append(Havoc(part.split()[1]))
            continue
        lhs, sep, rhs = part.partition(":=")
        if not sep:
            raise ParseError(f"line {lineno}: bad update {part!r}")
        lhs = lhs.strip()
        rhs = rhs.strip()
        try:
            term = FormulaParser(vocab, sets).parse_term(rhs)
        except ParseError as e:
            raise ParseError(f"line {lineno}: {e}") from e
        m = re.match(r"^(\w+)\[(.+)\]$", lhs)
        if m:
            fname = m.group(1)
            if fname not in vocab.fields:
                raise ParseError(f"line {lineno}: unknown field {fname!r}")
            at = FormulaParser(vocab, sets).parse_term(m.group(2))
            out.append(FieldUpdate(fname, at, term))
        else:
            if lhs not in vocab.object_vars and lhs not in vocab.int_vars:
                raise ParseError(f"line {lineno}: unknown variable {lhs!r}")
            out.append(VarUpdate(lhs, term))
    return out


# ---------------------------------------------------------------------------
# printing (round-trips through parse_procedure)

def print_procedure(spec: ProcedureSpec) -> str:
    v = spec.vocab
    out = [HEADER, f"procedure {spec.name}"]
    plain = [x for x in v.object_vars if x not in v.ghost_vars]
    if plain:
        out.append("var " + " ".join(plain))
    if v.ghost_vars:
        out.append("ghostvar " + " ".join(v.ghost_vars))
    if v.int_vars:
        out.append("intvar " + " ".join(v.int_vars))
    if v.fields:
        out.append("field " + " ".join(v.fields))
    if v.data_fields:
        out.append("data " + " ".join(v.data_fields))
    for p in spec.predicates:
        flags = []
        if p.singleton:
            flags.append("singleton")
        if not p.track:
            flags.append("notrack")
        flag_s = (" " + " ".join(flags)) if flags else ""
        out.append(f'pred {p.name} "{to_text(p.formula)}"{flag_s}')
    for f in spec.requires:
        out.append(f'requires "{to_text(f)}"')
    for f in spec.ensures:
        out.append(f'ensures "{to_text(f)}"')
    for loc in spec.cfg.locations:
        marks = ""
        if loc == spec.cfg.entry:
            marks += " entry"
        if loc == spec.cfg.exit:
            marks += " exit"
        out.append(f"location {loc}{marks}")
    for e in spec.cfg.edges:
        cmd = e.command
        parts = []
        for u in cmd.updates:
            if isinstance(u, VarUpdate):
                parts.append(f"{u.var} := {_tt(u.term)}")
            elif isinstance(u, FieldUpdate):
                parts.append(f"{u.field}[{_tt(u.at)}] := {_tt(u.to)}")
            else:
                parts.append(f"havoc {u.var}")
        do = (" do " + ", ".join(parts)) if parts else ""
        out.append(f'edge {e.source} -> {e.target} guard "{to_text(cmd.guard)}"{do}')
    return "\n".join(out) + "\n"


def _tt(t):
    from .formula import _t_text
    return _t_text(t)
