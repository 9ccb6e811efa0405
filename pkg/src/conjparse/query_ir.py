"""Conjunctive queries represented as directed multigraphs.

A query is a set of typed edges between entity slots (M0, M1, ...) and
existential variables (x0, x1, ...). The edge set is order-free, and variable
names carry no meaning: two queries are equal iff one can be turned into the
other by renaming variables (entities stay fixed). Canonicalization makes that
equality a string comparison.

Text grammar (whitespace-separated tokens):

    ("SELECT" var | "ASK") "WHERE" "{" clause ("." clause)* "}"
    clause   = term relation term
    term     = "x" digits | "M" digits
    relation = [a-z_]+
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable

from .errors import CapacityError, ParseError
from .vocab import Vocabulary

ENTITY = "entity"
VARIABLE = "variable"

SELECT = "select"
ASK = "ask"

MAX_VARIABLES = 8

_TERM_RE = re.compile(r"^(x|M)(\d+)$")
_REL_RE = re.compile(r"^[a-z_]+$")


@dataclass(frozen=True, order=True)
class NodeRef:
    kind: str  # ENTITY or VARIABLE
    index: int

    def token(self) -> str:
        return (f"M{self.index}" if self.kind == ENTITY else f"x{self.index}")


def entity(index: int) -> NodeRef:
    return NodeRef(ENTITY, index)


def variable(index: int) -> NodeRef:
    return NodeRef(VARIABLE, index)


@dataclass(frozen=True, order=True)
class Edge:
    subject: NodeRef
    relation: int  # index into the relation vocabulary
    object: NodeRef


@dataclass(frozen=True)
class ConjunctiveQuery:
    edges: frozenset[Edge]
    kind: str = SELECT

    def variables(self) -> set[int]:
        return {n.index for e in self.edges for n in (e.subject, e.object)
                if n.kind == VARIABLE}

    def entities(self) -> set[int]:
        return {n.index for e in self.edges for n in (e.subject, e.object)
                if n.kind == ENTITY}


def make_query(edges: Iterable[Edge], kind: str = SELECT,
               allow_self_loops: bool = False) -> ConjunctiveQuery:
    edge_set = frozenset(edges)
    if not allow_self_loops:
        for e in edge_set:
            if e.subject == e.object:
                raise ParseError(f"self-loop edge on {e.subject.token()!r}")
    if kind not in (SELECT, ASK):
        raise ParseError(f"unknown query kind {kind!r}")
    return ConjunctiveQuery(edge_set, kind)


def _parse_term(tok: str) -> NodeRef:
    m = _TERM_RE.match(tok)
    if not m:
        raise ParseError(f"expected term ('x<int>' or 'M<int>'), got {tok!r}")
    kind = VARIABLE if m.group(1) == "x" else ENTITY
    return NodeRef(kind, int(m.group(2)))


def parse_query(text: str, relations: Vocabulary,
                allow_self_loops: bool = False) -> ConjunctiveQuery:
    """Parse query text into a ConjunctiveQuery.

    Variables are renumbered by first appearance and duplicate clauses collapse
    (edge-set semantics). Unknown relation tokens and malformed clauses raise
    ParseError naming the offending span.
    """
    toks = text.split()
    pos = 0

    def take(expected: str | None = None) -> str:
        nonlocal pos
        if pos >= len(toks):
            raise ParseError(f"unexpected end of query after {' '.join(toks[max(0, pos - 3):pos])!r}")
        t = toks[pos]
        pos += 1
        if expected is not None and t != expected:
            raise ParseError(f"expected {expected!r}, got {t!r}")
        return t

    head = take()
    head_var: NodeRef | None = None
    if head == "SELECT":
        kind = SELECT
        head_var = _parse_term(take())
        if head_var.kind != VARIABLE:
            raise ParseError(f"SELECT head must be a variable, got {head_var.token()!r}")
    elif head == "ASK":
        kind = ASK
    else:
        raise ParseError(f"expected 'SELECT' or 'ASK', got {head!r}")
    take("WHERE")
    take("{")

    var_ids: dict[int, int] = {}  # original var index -> renumbered index

    def remap(n: NodeRef) -> NodeRef:
        if n.kind != VARIABLE:
            return n
        if n.index not in var_ids:
            var_ids[n.index] = len(var_ids)
        return NodeRef(VARIABLE, var_ids[n.index])

    edges: list[Edge] = []
    while True:
        subj = _parse_term(take())
        rel_tok = take()
        if not _REL_RE.match(rel_tok):
            raise ParseError(f"expected relation token, got {rel_tok!r}")
        if rel_tok not in relations:
            raise ParseError(f"unknown relation {rel_tok!r}")
        obj = _parse_term(take())
        edges.append(Edge(remap(subj), relations.id(rel_tok), remap(obj)))
        sep = take()
        if sep == "}":
            break
        if sep != ".":
            raise ParseError(f"expected '.' or '}}' after clause, got {sep!r}")
    if pos != len(toks):
        raise ParseError(f"trailing tokens after '}}': {' '.join(toks[pos:])!r}")

    # A SELECT head must occur in the body whenever the body mentions any
    # variable at all (variable-free bodies are degenerate but well-formed).
    if head_var is not None and var_ids and head_var.index not in var_ids:
        raise ParseError(f"dangling variable {head_var.token()!r} not bound in any clause")
    return make_query(edges, kind, allow_self_loops=allow_self_loops)


def _clause(e: Edge, relations: Vocabulary) -> str:
    return f"{e.subject.token()} {relations.token(e.relation)} {e.object.token()}"


def _rename_edges(q: ConjunctiveQuery, mapping: dict[int, int]) -> list[Edge]:
    def rn(n: NodeRef) -> NodeRef:
        return NodeRef(VARIABLE, mapping[n.index]) if n.kind == VARIABLE else n
    return [Edge(rn(e.subject), e.relation, rn(e.object)) for e in q.edges]


def canonical_form(q: ConjunctiveQuery, relations: Vocabulary,
                   max_vars: int = MAX_VARIABLES) -> str:
    """Canonical clause body: the minimal sorted clause serialization over all
    variable renumberings. Exact by brute force; capped at max_vars variables."""
    vs = sorted(q.variables())
    if len(vs) > max_vars:
        raise CapacityError(f"query has {len(vs)} variables, canonicalization cap is {max_vars}")
    if not vs:
        return " . ".join(sorted(_clause(e, relations) for e in q.edges))
    best: str | None = None
    for perm in itertools.permutations(range(len(vs))):
        mapping = {v: perm[i] for i, v in enumerate(vs)}
        body = " . ".join(sorted(_clause(e, relations) for e in _rename_edges(q, mapping)))
        if best is None or body < best:
            best = body
    return best


def serialize(q: ConjunctiveQuery, relations: Vocabulary) -> str:
    """Serialize with clauses in canonical sorted order and variables renamed
    canonically. SELECT queries emit 'x0' as the head (canonical queries always
    number their variables from 0; a variable-free SELECT keeps the token)."""
    body = canonical_form(q, relations)
    head = "SELECT x0" if q.kind == SELECT else "ASK"
    return f"{head} WHERE {{ {body} }}"


def iso_equal(a: ConjunctiveQuery, b: ConjunctiveQuery, relations: Vocabulary) -> bool:
    """True iff the two queries are isomorphic (entities fixed, variables
    renamable) and share the same kind."""
    if a.kind != b.kind:
        return False
    if len(a.edges) != len(b.edges):
        return False
    return canonical_form(a, relations) == canonical_form(b, relations)
