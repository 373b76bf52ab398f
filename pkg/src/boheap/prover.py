"""Validity checking: query/verdict types, the bounded finite-model
enumerator, the semantic query cache, and SMT-LIB export.

Validity is relative to a scope (N objects, data in [0, M]): a query is Valid
iff its universal closure holds in every state within scope.  The enumerator
performs a staged backtracking search over the query's own vocabulary,
pruning a branch as soon as some assumption with fully assigned symbols fails.
States satisfying a recurring assumption set are materialized once into a
"bank" and re-scanned per goal, with subformula truth masks cached as numpy
arrays; this makes the thousands of cube entailment queries issued by the
abstraction affordable.

The cache stores verdicts keyed by the alpha-normal form of the query with the
context assumption factored out.  Contexts at one program point weaken
monotonically across fixpoint iterations; recording their order on a chain
lets a NotValid verdict obtained under an earlier (stronger) context be reused
under any later one.  The cache serializes to a line-oriented file and is
reusable across runs and across procedures.
"""

from __future__ import annotations

import base64
import hashlib
import itertools
import json
import subprocess
import threading
import time
from dataclasses import dataclass

import numpy as np

from .formula import (
    And, Const, DataApp, Eq, Exists, FieldApp, FieldRef, FieldUpd, Forall,
    Implies, IntAdd, IntConst, IntLt, IntLe, Member, Not, Or, Reach,
    SortError, Truth, Var, cache_text, conj, free_vars, implies,
    symbols, to_text,
)
from .semantics import ConcreteState, Scope, Vocabulary, check_sorts, evaluate

__all__ = ["Query", "Verdict", "ExportError", "CheckerStats", "QueryCache",
           "Prover", "bounded_valid", "export_smtlib", "infer_vocabulary"]


class ExportError(Exception):
    """Query not expressible in the SMT-LIB export fragment."""


@dataclass(frozen=True)
class Query:
    """Assumptions (context formula first, when present) and a goal.

    Denotes the universal closure of ``/\\ assumptions --> goal``.  ``chain``
    optionally places the context on a monotone chain as ``(chain_id, pos)``.
    """
    assumptions: tuple = ()
    goal: object = Truth(True)
    scope: Scope | None = None
    chain: tuple | None = None

    def closed_formula(self):
        return implies(conj(list(self.assumptions)), self.goal)


@dataclass(frozen=True)
class Verdict:
    kind: str  # "valid" | "not_valid" | "unknown"
    witness: ConcreteState | None = None
    reason: str = ""

    @property
    def is_valid(self):
        return self.kind == "valid"

    @property
    def is_not_valid(self):
        return self.kind == "not_valid"

    @property
    def is_unknown(self):
        return self.kind == "unknown"


VALID = Verdict("valid")


@dataclass
class CheckerStats:
    queries: int = 0
    cache_hits_exact: int = 0
    cache_hits_chain: int = 0
    backend_calls: int = 0
    valid: int = 0
    not_valid: int = 0
    unknown: int = 0
    backend_seconds: float = 0.0

    @property
    def cache_hits(self):
        return self.cache_hits_exact + self.cache_hits_chain

    def hit_percent(self) -> float:
        return 100.0 * self.cache_hits / self.queries if self.queries else 0.0

    def snapshot(self) -> dict:
        return {"queries": self.queries, "cache_hits": self.cache_hits,
                "backend_calls": self.backend_calls, "valid": self.valid,
                "not_valid": self.not_valid, "unknown": self.unknown}


def _nf_text(f) -> str:
    # compositional alpha-invariant rendering; equality coincides with
    # equality of alpha normal forms
    return cache_text(f)


def _digest(s: str) -> str:
    return hashlib.sha256(s.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# semantic cache

@dataclass
class _CacheEntry:
    context_nf: str
    verdict_code: str            # "V" | "N" | "U"
    chain_id: str | None
    chain_pos: int | None
    witness_blob: str | None
    reason: str = ""

    def verdict(self) -> Verdict:
        if self.verdict_code == "V":
            return VALID
        if self.verdict_code == "N":
            w = _decode_state(self.witness_blob) if self.witness_blob else None
            return Verdict("not_valid", witness=w)
        return Verdict("unknown", reason=self.reason or "cached unknown")


def _encode_state(s: ConcreteState) -> str:
    payload = {"n": s.n, "fields": [[k, list(v)] for k, v in s.fields],
               "data": [[k, list(v)] for k, v in s.data],
               "val": [[k, v] for k, v in s.valuation],
               "dmax": s.data_max, "ints": list(s.int_vars)}
    return base64.b64encode(json.dumps(payload, separators=(",", ":")).encode()).decode()


def _decode_state(blob: str) -> ConcreteState:
    d = json.loads(base64.b64decode(blob).decode())
    return ConcreteState(n=d["n"],
                         fields=tuple((k, tuple(v)) for k, v in d["fields"]),
                         data=tuple((k, tuple(v)) for k, v in d["data"]),
                         valuation=tuple((k, v) for k, v in d["val"]),
                         data_max=d["dmax"], int_vars=tuple(d["ints"]))


class QueryCache:
    """Alpha-equivalence cache with context-chain reuse of NotValid verdicts.

    A NotValid verdict recorded at chain position i is reusable for the same
    non-context query at any position j >= i of the same chain: later contexts
    are weaker, and a countermodel of the query under a stronger antecedent
    still falsifies it under a weaker one.  Valid verdicts are reused only on
    exact normal-form match of context and non-context parts.
    """

    HEADER = "boheap-cache 1"

    def __init__(self):
        self._entries: dict = {}   # (noncontext_nf, scope_key) -> [_CacheEntry]
        self._lock = threading.RLock()

    def lookup(self, key, context_nf, chain):
        with self._lock:
            entries = self._entries.get(key, ())
            for e in entries:
                if e.context_nf == context_nf:
                    return e.verdict(), "exact"
            if chain is not None:
                chain_id, pos = chain
                for e in entries:
                    if (e.verdict_code == "N" and e.chain_id == chain_id
                            and e.chain_pos is not None and e.chain_pos <= pos):
                        return e.verdict(), "chain"
        return None, None

    def insert(self, key, context_nf, chain, verdict: Verdict):
        code = {"valid": "V", "not_valid": "N", "unknown": "U"}[verdict.kind]
        blob = _encode_state(verdict.witness) if verdict.witness is not None else None
        chain_id, pos = chain if chain is not None else (None, None)
        with self._lock:
            self._entries.setdefault(key, []).append(
                _CacheEntry(context_nf, code, chain_id, pos, blob, verdict.reason))

    def __len__(self):
        return sum(len(v) for v in self._entries.values())

    def save(self, path) -> None:
        lines = [self.HEADER]
        with self._lock:
            for (nf, scope_key), entries in sorted(self._entries.items()):
                for e in sorted(entries, key=lambda e: (e.context_nf, e.verdict_code)):
                    lines.append("\t".join([
                        _digest(nf), e.verdict_code, e.chain_id or "-",
                        str(e.chain_pos) if e.chain_pos is not None else "-",
                        json.dumps(list(scope_key)),
                        base64.b64encode(e.context_nf.encode()).decode() or "=",
                        base64.b64encode(nf.encode()).decode(),
                        e.witness_blob or "-",
                        base64.b64encode(e.reason.encode()).decode() or "=",
                    ]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "QueryCache":
        cache = cls()
        try:
            with open(path) as fh:
                lines = fh.read().splitlines()
        except OSError:
            return cache
        if not lines or lines[0] != cls.HEADER:
            import warnings
            warnings.warn(f"ignoring cache file {path}: bad header")
            return cache
        for line in lines[1:]:
            if not line.strip():
                continue
            try:
                (_h, code, chain_id, pos, scope_json, ctx_b64, nf_b64,
                 wit, reason_b64) = line.split("\t")
                nf = base64.b64decode(nf_b64).decode()
                ctx = base64.b64decode(ctx_b64).decode() if ctx_b64 != "=" else ""
                scope_key = tuple(json.loads(scope_json))
                cache._entries.setdefault((nf, scope_key), []).append(_CacheEntry(
                    ctx, code,
                    None if chain_id == "-" else chain_id,
                    None if pos == "-" else int(pos),
                    None if wit == "-" else wit,
                    base64.b64decode(reason_b64).decode() if reason_b64 != "=" else ""))
            except (ValueError, KeyError, json.JSONDecodeError):
                import warnings
                warnings.warn(f"ignoring corrupt cache line in {path}")
        return cache


# ---------------------------------------------------------------------------
# vocabulary analysis

def infer_vocabulary(forms) -> Vocabulary:
    """Infer a vocabulary from formula structure: field/data symbols from
    applications, variable sorts from the contexts they appear in."""
    fields: set = set()
    data: set = set()
    int_vars: set = set()
    names: set = set()

    def t_sort(t, want_int):
        if isinstance(t, Var):
            names.add(t.name)
            if want_int:
                int_vars.add(t.name)
        elif isinstance(t, FieldApp):
            fe(t.field)
            t_sort(t.arg, False)
        elif isinstance(t, DataApp):
            data.add(t.field)
            t_sort(t.arg, False)
        elif isinstance(t, IntAdd):
            t_sort(t.arg, True)

    def fe(x):
        if isinstance(x, FieldRef):
            fields.add(x.name)
        else:
            fe(x.base)
            t_sort(x.at, False)
            t_sort(x.to, False)

    def is_int_term(t):
        return isinstance(t, (IntConst, IntAdd, DataApp)) or (
            isinstance(t, Var) and t.name in int_vars)

    def go(g):
        if isinstance(g, Eq):
            want = is_int_term(g.left) or is_int_term(g.right)
            t_sort(g.left, want)
            t_sort(g.right, want)
        elif isinstance(g, (IntLt, IntLe)):
            t_sort(g.left, True)
            t_sort(g.right, True)
        elif isinstance(g, Not):
            go(g.body)
        elif isinstance(g, (And, Or)):
            for a in g.args:
                go(a)
        elif isinstance(g, Implies):
            go(g.left)
            go(g.right)
        elif isinstance(g, (Forall, Exists)):
            go(g.body)
        elif isinstance(g, Member):
            t_sort(g.term, False)
            go(g.set.body)
        elif isinstance(g, Reach):
            fe(g.field)
            t_sort(g.source, False)
            t_sort(g.target, False)

    free: set = set()
    for f in forms:
        go(f)
        free |= set(free_vars(f))
    ovars = tuple(sorted((free & names) - int_vars))
    return Vocabulary(fields=tuple(sorted(fields)),
                      data_fields=tuple(sorted(data)),
                      object_vars=ovars,
                      int_vars=tuple(sorted(free & int_vars)))


def _split_vocab(forms, vocab: Vocabulary):
    """Restrict declared vocabulary to the symbols occurring in ``forms`` and
    classify undeclared free names as logical (universally closed) variables."""
    syms: set = set()
    free: set = set()
    for f in forms:
        syms |= set(symbols(f))
        free |= set(free_vars(f))
    inferred = infer_vocabulary(forms)
    declared = (set(vocab.fields) | set(vocab.data_fields)
                | set(vocab.object_vars) | set(vocab.int_vars))
    logical = sorted(s for s in (syms - declared - {"null"})
                     if s not in inferred.fields and s not in inferred.data_fields)
    logical_obj = tuple(x for x in logical if x not in inferred.int_vars)
    logical_int = tuple(x for x in logical if x in inferred.int_vars)
    qvocab = Vocabulary(
        fields=tuple(f for f in vocab.fields if f in syms),
        data_fields=tuple(d for d in vocab.data_fields if d in syms),
        object_vars=tuple(x for x in vocab.object_vars if x in syms),
        int_vars=tuple(x for x in vocab.int_vars if x in syms),
    )
    return qvocab, logical_obj, logical_int


def _comparison_only(forms) -> bool:
    """True when every integer atom only compares data applications, so data
    ranges can be compressed to order types without changing validity."""
    ok = True

    def chk(t):
        nonlocal ok
        if isinstance(t, (IntConst, IntAdd)):
            ok = False
        elif isinstance(t, (FieldApp, DataApp)):
            chk(t.arg)

    def go(g):
        if isinstance(g, (Eq, IntLt, IntLe)):
            chk(g.left)
            chk(g.right)
        elif isinstance(g, Not):
            go(g.body)
        elif isinstance(g, (And, Or)):
            for a in g.args:
                go(a)
        elif isinstance(g, Implies):
            go(g.left)
            go(g.right)
        elif isinstance(g, (Forall, Exists)):
            go(g.body)
        elif isinstance(g, Member):
            go(g.set.body)

    for f in forms:
        go(f)
    return ok


# ---------------------------------------------------------------------------
# backtracking enumeration

class _SearchOverflow(Exception):
    pass


class _MutState:
    """Partially assigned state; duck-types the parts of ConcreteState that
    ``evaluate`` touches."""
    __slots__ = ("n", "null", "data_max", "fields", "data", "vals", "int_names")

    def __init__(self, n, data_max):
        self.n = n
        self.null = n
        self.data_max = data_max
        self.fields = {}
        self.data = {}
        self.vals = {}

    def field_map(self, name):
        return self.fields[name]

    def data_map(self, name):
        return self.data[name]

    def value(self, name):
        return self.vals[name]

    def elements(self):
        return range(self.n + 1)

    def freeze(self, scope_dmax, int_names) -> ConcreteState:
        return ConcreteState(
            n=self.n,
            fields=tuple(sorted(self.fields.items())),
            data=tuple(sorted(self.data.items())),
            valuation=tuple(sorted(self.vals.items())),
            data_max=scope_dmax,
            int_vars=tuple(sorted(int_names)))


@dataclass(frozen=True)
class _Unit:
    kind: str      # "ovar" | "ivar" | "field" | "data"
    name: str
    branches: int


def _order_units(units, constraint_vocabs):
    """Greedy deterministic order: prefer units completing the most pending
    constraints, tie-break on branching factor, kind, then name."""
    remaining = sorted(units, key=lambda u: (u.branches, u.kind, u.name))
    pending = [set(v) for v in constraint_vocabs]
    ordered = []
    assigned: set = set()
    while remaining:
        best = min(remaining, key=lambda u: (
            -sum(1 for v in pending if u.name in v and v <= assigned | {u.name}),
            u.branches, u.kind, u.name))
        ordered.append(best)
        remaining.remove(best)
        assigned.add(best.name)
        pending = [v for v in pending if not v <= assigned]
    return ordered


def _search(closed_assumptions, qvocab, logical_obj, logical_int, scope,
            compress, on_state, budget):
    """Enumerate in-scope states satisfying the closed assumptions, in
    canonical order (universe sizes ascending, greedy unit order, objects
    before null).  ``on_state`` may return a truthy value to stop."""
    nodes = 0
    all_int_names = set(qvocab.int_vars) | set(logical_int)
    for n in range(scope.n_objects + 1):
        null = n
        dmax = min(scope.data_max, max(n - 1, 0)) if compress else scope.data_max
        units = ([_Unit("ovar", x, n + 1) for x in qvocab.object_vars]
                 + [_Unit("ovar", x, n + 1) for x in logical_obj]
                 + [_Unit("ivar", x, scope.data_max + 1) for x in qvocab.int_vars]
                 + [_Unit("ivar", x, scope.data_max + 1) for x in logical_int]
                 + [_Unit("field", f, (n + 1) ** n) for f in qvocab.fields]
                 + [_Unit("data", d, (dmax + 1) ** n) for d in qvocab.data_fields])
        cvocabs = [set(symbols(a)) - {"null"} for a in closed_assumptions]
        ordered = _order_units(units, cvocabs)

        check_at = [[] for _ in range(len(ordered) + 1)]
        for ci, cv in enumerate(cvocabs):
            need = set(cv)
            level = 0
            for li, u in enumerate(ordered):
                if not need:
                    break
                need.discard(u.name)
                level = li + 1
            if need:
                # symbols outside every unit (can't happen for well-formed input)
                level = len(ordered)
            check_at[level if cv else 0].append(ci)

        def unit_values(u):
            if u.kind == "ovar":
                return list(range(n)) + [null]
            if u.kind == "ivar":
                return list(range(scope.data_max + 1))
            if u.kind == "field":
                slots = [list(range(n)) + [null] for _ in range(n)]
                return [tuple(c) + (null,) for c in itertools.product(*slots)]
            slots = [list(range(dmax + 1)) for _ in range(n)]
            return [tuple(c) + (0,) for c in itertools.product(*slots)]

        values = [unit_values(u) for u in ordered]
        st = _MutState(n, scope.data_max)

        def rec(level):
            nonlocal nodes
            nodes += 1
            if nodes > budget:
                raise _SearchOverflow(nodes)
            for ci in check_at[level]:
                if not evaluate(st, closed_assumptions[ci]):
                    return None
            if level == len(ordered):
                return on_state(st.freeze(scope.data_max, all_int_names))
            u = ordered[level]
            store = {"ovar": st.vals, "ivar": st.vals,
                     "field": st.fields, "data": st.data}[u.kind]
            for val in values[level]:
                store[u.name] = val
                r = rec(level + 1)
                if r:
                    return r
            del store[u.name]
            return None

        r = rec(0)
        if r:
            return r
    return None


# ---------------------------------------------------------------------------
# state banks: materialized assumption models with cached truth masks

class _Bank:
    def __init__(self, states, scope, max_elems):
        self.states = states
        self.scope = scope
        self.max_elems = max_elems            # N + 1
        self.elem_valid = np.zeros((len(states), max_elems), dtype=bool)
        for i, s in enumerate(states):
            self.elem_valid[i, : s.n + 1] = True
        self._bool_masks: dict = {}           # nf -> (S,) bool array
        self._elem_masks: dict = {}           # (nf, var) -> (S, E) bool array
        self._proj_cache: dict = {}
        self.lock = threading.RLock()

    def _projection(self, state, syms):
        parts = [state.n]
        for k, v in state.fields:
            if k in syms:
                parts.append(v)
        for k, v in state.data:
            if k in syms:
                parts.append(v)
        for k, v in state.valuation:
            if k in syms:
                parts.append(v)
        return tuple(parts)

    def bool_mask(self, f):
        nf = _nf_text(f)
        with self.lock:
            m = self._bool_masks.get(nf)
            if m is not None:
                return m
        syms = set(symbols(f))
        cache = {}
        out = np.zeros(len(self.states), dtype=bool)
        for i, s in enumerate(self.states):
            key = self._projection(s, syms)
            r = cache.get(key)
            if r is None:
                r = evaluate(s, f)
                cache[key] = r
            out[i] = r
        with self.lock:
            self._bool_masks[nf] = out
        return out

    def elem_mask(self, f, var):
        nf = (_nf_text(f), var)
        with self.lock:
            m = self._elem_masks.get(nf)
            if m is not None:
                return m
        syms = set(symbols(f))
        cache = {}
        out = np.zeros((len(self.states), self.max_elems), dtype=bool)
        for i, s in enumerate(self.states):
            key = self._projection(s, syms)
            r = cache.get(key)
            if r is None:
                r = tuple(evaluate(s, f, {var: e}) for e in range(s.n + 1))
                cache[key] = r
            out[i, : s.n + 1] = r
        with self.lock:
            self._elem_masks[nf] = out
        return out


class _BankOverflow(Exception):
    pass


# ---------------------------------------------------------------------------
# enumeration backend

class EnumBackend:
    """Bounded finite-model enumerator; the built-in validity checker."""

    name = "enum"

    def __init__(self, vocab: Vocabulary, scope: Scope, bank_cap: int = 200_000):
        self.vocab = vocab
        self.scope = scope
        self.bank_cap = bank_cap
        self._banks: dict = {}   # assumptions_nf -> [(vocab_syms, compress, bank|None)]
        self._lock = threading.RLock()

    # -- bank management --

    def _bank_for(self, assumptions, goal_forms, scope):
        all_forms = list(assumptions) + list(goal_forms)
        qvocab, lobj, lint = _split_vocab(all_forms, self.vocab)
        compress = _comparison_only(all_forms) and not (qvocab.int_vars or lint)
        key = tuple(sorted(_nf_text(a) for a in assumptions)) + (
            scope.n_objects, scope.data_max)
        vocab_syms = frozenset(set(qvocab.fields) | set(qvocab.data_fields)
                               | set(qvocab.object_vars) | set(qvocab.int_vars))
        with self._lock:
            for syms, comp, bank in self._banks.get(key, []):
                # an uncompressed bank serves any query; a compressed one only
                # serves comparison-only queries
                if vocab_syms <= syms and (not comp or compress):
                    return bank, syms, comp
        build_vocab = Vocabulary(
            fields=tuple(f for f in self.vocab.fields if f in vocab_syms),
            data_fields=tuple(d for d in self.vocab.data_fields if d in vocab_syms),
            object_vars=tuple(x for x in self.vocab.object_vars if x in vocab_syms),
            int_vars=tuple(x for x in self.vocab.int_vars if x in vocab_syms))
        states = []

        def collect(s):
            states.append(s)
            if len(states) > self.bank_cap:
                raise _BankOverflow()
            return None

        bank = None
        try:
            _search(list(assumptions), build_vocab, (), (), scope, compress,
                    collect, scope.max_states)
            bank = _Bank(states, scope, scope.n_objects + 1)
        except (_BankOverflow, _SearchOverflow):
            bank = None
        with self._lock:
            self._banks.setdefault(key, []).append((vocab_syms, compress, bank))
        return bank, vocab_syms, compress

    def prewarm(self, assumptions, goal_forms, scope=None):
        """Materialize the assumption bank covering the given goal family."""
        scope = scope or self.scope
        closed = [a for a in assumptions if not self._logical_names([a])]
        self._bank_for(tuple(closed), list(goal_forms), scope)

    def _logical_names(self, forms):
        _, lobj, lint = _split_vocab(forms, self.vocab)
        return lobj + lint

    # -- checking --

    def check(self, query: Query) -> Verdict:
        scope = query.scope or self.scope
        # assumptions with free logical names fold into the goal so that the
        # closure quantifies the whole implication
        closed = []
        open_assumptions = []
        for a in query.assumptions:
            (open_assumptions if self._logical_names([a]) else closed).append(a)
        goal = implies(conj(open_assumptions), query.goal)
        try:
            return self._check_split(tuple(closed), goal, scope)
        except _SearchOverflow as e:
            return Verdict("unknown", reason=f"state-space ceiling exceeded ({e})")

    def _check_split(self, closed, goal, scope) -> Verdict:
        bank, bank_syms, bank_comp = self._bank_for(closed, [goal], scope)
        if bank is None:
            return self._direct(closed, goal, scope)
        lnames = self._logical_names([goal])
        if len(lnames) == 0:
            mask = self._goal_bool(bank, goal)
            bad = np.flatnonzero(~mask)
            if bad.size:
                return self._witness(bank.states[int(bad[0])], {}, closed, goal)
            return VALID
        if len(lnames) == 1:
            var = lnames[0]
            mask = self._goal_elem(bank, goal, var)
            bad = ~mask & bank.elem_valid
            if bad.any():
                i, e = np.argwhere(bad)[0]
                return self._witness(bank.states[int(i)], {var: int(e)}, closed, goal)
            return VALID
        # rare: several logical variables; evaluate directly per state
        for s in bank.states:
            elems = range(s.n + 1)
            for combo in itertools.product(elems, repeat=len(lnames)):
                env = dict(zip(lnames, combo))
                if not evaluate(s, goal, env):
                    return self._witness(s, env, closed, goal)
        return VALID

    def _witness(self, state, env, closed, goal) -> Verdict:
        if env:
            valuation = tuple(sorted(list(state.valuation) + list(env.items())))
            state = ConcreteState(n=state.n, fields=state.fields, data=state.data,
                                  valuation=valuation, data_max=state.data_max,
                                  int_vars=state.int_vars)
        return Verdict("not_valid", witness=state)

    def _goal_bool(self, bank, f):
        if isinstance(f, Truth):
            return np.full(len(bank.states), f.value, dtype=bool)
        if isinstance(f, Not):
            return ~self._goal_bool(bank, f.body)
        if isinstance(f, Implies):
            return ~self._goal_bool(bank, f.left) | self._goal_bool(bank, f.right)
        if isinstance(f, And):
            out = self._goal_bool(bank, f.args[0])
            for a in f.args[1:]:
                out = out & self._goal_bool(bank, a)
            return out
        if isinstance(f, Or):
            out = self._goal_bool(bank, f.args[0])
            for a in f.args[1:]:
                out = out | self._goal_bool(bank, a)
            return out
        return bank.bool_mask(f)

    def _goal_elem(self, bank, f, var):
        def free_in(g):
            return var in free_vars(g)

        if isinstance(f, Not):
            return ~self._goal_elem(bank, f.body, var)
        if isinstance(f, Implies):
            return ~self._goal_elem(bank, f.left, var) | self._goal_elem(bank, f.right, var)
        if isinstance(f, And):
            out = self._goal_elem(bank, f.args[0], var)
            for a in f.args[1:]:
                out = out & self._goal_elem(bank, a, var)
            return out
        if isinstance(f, Or):
            out = self._goal_elem(bank, f.args[0], var)
            for a in f.args[1:]:
                out = out | self._goal_elem(bank, a, var)
            return out
        if not free_in(f):
            col = self._goal_bool(bank, f)
            return np.repeat(col[:, None], bank.max_elems, axis=1)
        return bank.elem_mask(f, var)

    def _direct(self, closed, goal, scope) -> Verdict:
        all_forms = list(closed) + [goal]
        qvocab, lobj, lint = _split_vocab(all_forms, self.vocab)
        compress = _comparison_only(all_forms) and not (qvocab.int_vars or lint)

        found = []

        def on_state(s):
            if not evaluate(s, goal):
                found.append(s)
                return True
            return None

        _search(list(closed), qvocab, lobj, lint, scope, compress,
                on_state, scope.max_states)
        if found:
            return Verdict("not_valid", witness=found[0])
        return VALID


# ---------------------------------------------------------------------------
# SMT-LIB backend and export

def _smt_sym(name: str) -> str:
    return name.replace("'", "_p")


def export_smtlib(query: Query, vocab: Vocabulary | None = None,
                  scope: Scope | None = None) -> str:
    """Standard SMT-LIB v2 script checking satisfiability of the negated
    query at the given scope; ``unsat`` means the query is valid.

    Reach is expanded by scope-bounded unrolling, so a scope is required.
    """
    scope = scope or query.scope
    if scope is None:
        raise ExportError("reach cannot be expanded at unbounded scope")
    forms = list(query.assumptions) + [query.goal]
    if vocab is None:
        vocab = infer_vocabulary(forms)
    for f in forms:
        try:
            check_sorts(f, vocab, extra_object_vars=tuple(free_vars(f)))
        except SortError as e:
            raise ExportError(f"ill-sorted query: {e}") from e
    qvocab, lobj, lint = _split_vocab(forms, vocab)
    n = scope.n_objects
    objs = [f"o{i + 1}" for i in range(n)]
    lines = [
        f"; boheap query export, scope N={n} M={scope.data_max}",
        "(set-logic UFLIA)" if qvocab.data_fields or qvocab.int_vars or lint
        else "(set-logic UF)",
        "(declare-sort Obj 0)",
        "(declare-fun null () Obj)",
    ]
    for o in objs:
        lines.append(f"(declare-fun {o} () Obj)")
    closure = " ".join([f"(= x {o})" for o in objs] + ["(= x null)"])
    lines.append(f"(assert (forall ((x Obj)) (or {closure})))")
    for f in qvocab.fields:
        lines.append(f"(declare-fun {_smt_sym(f)} (Obj) Obj)")
        lines.append(f"(assert (= ({_smt_sym(f)} null) null))")
    for d in qvocab.data_fields:
        lines.append(f"(declare-fun {_smt_sym(d)} (Obj) Int)")
        lines.append(f"(assert (forall ((x Obj)) (and (<= 0 ({_smt_sym(d)} x)) "
                     f"(<= ({_smt_sym(d)} x) {scope.data_max}))))")
        lines.append(f"(assert (= ({_smt_sym(d)} null) 0))")
    for x in qvocab.object_vars + tuple(lobj):
        lines.append(f"(declare-fun {_smt_sym(x)} () Obj)")
    for x in qvocab.int_vars + tuple(lint):
        lines.append(f"(declare-fun {_smt_sym(x)} () Int)")
        lines.append(f"(assert (and (<= 0 {_smt_sym(x)}) (<= {_smt_sym(x)} {scope.data_max})))")

    def term(t, env):
        if isinstance(t, Var):
            return env.get(t.name, _smt_sym(t.name))
        if isinstance(t, Const):
            return "null" if t.name == "null" else _smt_sym(t.name)
        if isinstance(t, FieldApp):
            return fe_app(t.field, term(t.arg, env), env)
        if isinstance(t, DataApp):
            return f"({_smt_sym(t.field)} {term(t.arg, env)})"
        if isinstance(t, IntConst):
            return str(t.value)
        if isinstance(t, IntAdd):
            a = term(t.arg, env)
            raw = f"(+ {a} {t.offset})" if t.offset >= 0 else f"(- {a} {-t.offset})"
            m = scope.data_max
            return f"(ite (> {raw} {m}) {m} (ite (< {raw} 0) 0 {raw}))"
        raise ExportError(f"cannot export term {t!r}")

    def fe_app(fexpr, x, env):
        if isinstance(fexpr, FieldRef):
            return f"({_smt_sym(fexpr.name)} {x})"
        at = term(fexpr.at, env)
        to = term(fexpr.to, env)
        base = fe_app(fexpr.base, x, env)
        # updates at null are identity (null stays a sink)
        return f"(ite (and (= {x} {at}) (distinct {at} null)) {to} {base})"

    fresh = itertools.count()

    def fm(g, env):
        if isinstance(g, Truth):
            return "true" if g.value else "false"
        if isinstance(g, Eq):
            return f"(= {term(g.left, env)} {term(g.right, env)})"
        if isinstance(g, IntLt):
            return f"(< {term(g.left, env)} {term(g.right, env)})"
        if isinstance(g, IntLe):
            return f"(<= {term(g.left, env)} {term(g.right, env)})"
        if isinstance(g, Not):
            return f"(not {fm(g.body, env)})"
        if isinstance(g, And):
            return f"(and {' '.join(fm(a, env) for a in g.args)})"
        if isinstance(g, Or):
            return f"(or {' '.join(fm(a, env) for a in g.args)})"
        if isinstance(g, Implies):
            return f"(=> {fm(g.left, env)} {fm(g.right, env)})"
        if isinstance(g, (Forall, Exists)):
            binder = "forall" if isinstance(g, Forall) else "exists"
            env2 = dict(env)
            bound = []
            for v in g.vars:
                nm = f"q{next(fresh)}"
                env2[v] = nm
                bound.append(f"({nm} Obj)")
            return f"({binder} ({' '.join(bound)}) {fm(g.body, env2)})"
        if isinstance(g, Member):
            env2 = dict(env)
            env2[g.set.var] = term(g.term, env)
            return fm(g.set.body, env2)
        if isinstance(g, Reach):
            # unrolled reflexive-transitive closure: N steps suffice at scope
            x = term(g.source, env)
            cases = []
            for _k in range(n + 1):
                cases.append(f"(= {x} {term(g.target, env)})")
                x = fe_app(g.field, x, env)
            return f"(or {' '.join(cases)})" if len(cases) > 1 else cases[0]
        raise ExportError(f"cannot export formula {g!r}")

    closed = query.closed_formula()
    lines.append(f"(assert (not {fm(closed, {})}))")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


class SmtlibBackend:
    """Escape hatch: runs an external SMT-LIB solver binary on the exported
    script; sat maps to NotValid without a structured witness."""

    def __init__(self, solver_path: str, vocab: Vocabulary, scope: Scope,
                 timeout: float = 60.0):
        self.solver_path = solver_path
        self.vocab = vocab
        self.scope = scope
        self.timeout = timeout
        self.name = f"smtlib:{solver_path}"

    def check(self, query: Query) -> Verdict:
        import os
        import tempfile
        try:
            script = export_smtlib(query, self.vocab, query.scope or self.scope)
        except ExportError as e:
            return Verdict("unknown", reason=str(e))
        with tempfile.NamedTemporaryFile("w", suffix=".smt2", delete=False) as fh:
            fh.write(script)
            path = fh.name
        try:
            out = subprocess.run([self.solver_path, path], capture_output=True,
                                 text=True, timeout=self.timeout)
            first = (out.stdout.strip().splitlines() or [""])[0]
            if first == "unsat":
                return VALID
            if first == "sat":
                return Verdict("not_valid", witness=None)
            return Verdict("unknown", reason=f"solver said {first!r}")
        except subprocess.TimeoutExpired:
            return Verdict("unknown", reason="solver timeout")
        except OSError as e:
            return Verdict("unknown", reason=f"solver unavailable: {e}")
        finally:
            try:
                os.unlink(path)
            except OSError:
                pass


# ---------------------------------------------------------------------------
# prover facade

class Prover:
    """Cache-fronted validity checker dispatching to configured backends.

    Safe for concurrent callers; the cache uses a single lock and backends are
    reentrant.  Verdicts are deterministic for a fixed configuration, so the
    cache is an observably transparent optimization.
    """

    def __init__(self, vocab: Vocabulary, scope: Scope | None = None,
                 backends=("enum",), cache: QueryCache | None = None,
                 bank_cap: int = 200_000):
        self.vocab = vocab
        self.scope = scope or Scope()
        self.cache = cache if cache is not None else QueryCache()
        self.stats = CheckerStats()
        self._chains: dict = {}
        self._lock = threading.RLock()
        self.backends = []
        for b in backends:
            if b == "enum":
                self.backends.append(EnumBackend(vocab, self.scope, bank_cap))
            elif b.startswith("smtlib:"):
                self.backends.append(SmtlibBackend(b.split(":", 1)[1], vocab, self.scope))
            else:
                raise ValueError(f"unknown backend {b!r}")
        self.enum_backend = next((b for b in self.backends
                                  if isinstance(b, EnumBackend)), None)

    # -- context chains --

    def register_context(self, chain_id: str, context) -> int:
        """Record the next context on a monotone chain; returns its position.
        Consecutive identical contexts share a position."""
        nf = _nf_text(context)
        with self._lock:
            chain = self._chains.setdefault(chain_id, [])
            if chain and chain[-1] == nf:
                return len(chain) - 1
            chain.append(nf)
            return len(chain) - 1

    def prewarm(self, assumptions, goal_forms, scope=None):
        if self.enum_backend is not None:
            self.enum_backend.prewarm(assumptions, goal_forms, scope)

    # -- main entry --

    def check(self, query: Query) -> Verdict:
        self.stats.queries += 1
        scope = query.scope or self.scope
        scope_key = (scope.n_objects, scope.data_max)
        if query.assumptions:
            context_nf = _nf_text(query.assumptions[0])
            rest = implies(conj(list(query.assumptions[1:])), query.goal)
        else:
            context_nf = ""
            rest = query.goal
        key = (_nf_text(rest), scope_key)
        verdict, how = self.cache.lookup(key, context_nf, query.chain)
        if verdict is not None:
            if how == "exact":
                self.stats.cache_hits_exact += 1
            else:
                self.stats.cache_hits_chain += 1
            self._count(verdict)
            return verdict
        verdict = Verdict("unknown", reason="no backend produced a verdict")
        t0 = time.perf_counter()
        for backend in self.backends:
            self.stats.backend_calls += 1
            v = backend.check(Query(query.assumptions, query.goal, scope, query.chain))
            if not v.is_unknown:
                verdict = v
                break
            verdict = v
        self.stats.backend_seconds += time.perf_counter() - t0
        self.cache.insert(key, context_nf, query.chain, verdict)
        self._count(verdict)
        return verdict

    def _count(self, v: Verdict):
        if v.is_valid:
            self.stats.valid += 1
        elif v.is_not_valid:
            self.stats.not_valid += 1
        else:
            self.stats.unknown += 1

    # -- convenience spec operations --

    def valid(self, assumptions, goal, chain=None, scope=None) -> Verdict:
        return self.check(Query(tuple(assumptions), goal, scope, chain))

    def satisfiable(self, formulas, scope=None):
        """Existential closure satisfiability via validity of the negation.
        Returns (True/False/None, witness-state-or-None)."""
        from .formula import Not as _Not
        v = self.check(Query((), _Not(conj(list(formulas))), scope))
        if v.is_not_valid:
            return True, v.witness
        if v.is_valid:
            return False, None
        return None, None


def bounded_valid(formula, scope: Scope, vocab: Vocabulary | None = None) -> Verdict:
    """Validity of a closed formula at finite scope; NotValid carries the
    first falsifying state in canonical enumeration order."""
    vocab = vocab or infer_vocabulary([formula])
    backend = EnumBackend(vocab, scope)
    try:
        return backend.check(Query((), formula, scope))
    except _SearchOverflow as e:  # pragma: no cover - guarded inside check
        return Verdict("unknown", reason=f"state-space ceiling exceeded ({e})")
