import itertools

import pytest

from conjparse.errors import CapacityError, ParseError
from conjparse.query_ir import (ASK, SELECT, ConjunctiveQuery, Edge,
                                canonical_form, entity, iso_equal, make_query,
                                parse_query, serialize, variable)


def q(edges, kind=SELECT):
    return make_query(edges, kind)


def test_parse_select_two_clauses(relations):
    parsed = parse_query("SELECT x0 WHERE { x0 direct M0 . x0 produce M0 }", relations)
    assert parsed.kind == SELECT
    assert parsed.edges == frozenset({
        Edge(variable(0), relations.id("direct"), entity(0)),
        Edge(variable(0), relations.id("produce"), entity(0)),
    })


def test_parse_ask(relations):
    parsed = parse_query("ASK WHERE { M0 marry M1 }", relations)
    assert parsed.kind == ASK
    assert parsed.edges == frozenset({Edge(entity(0), relations.id("marry"), entity(1))})


def test_parse_duplicate_clauses_collapse(relations):
    parsed = parse_query("SELECT x0 WHERE { x0 direct M0 . x0 direct M0 }", relations)
    assert len(parsed.edges) == 1


def test_parse_renumbers_by_first_appearance(relations):
    parsed = parse_query("SELECT x5 WHERE { x5 direct M0 . x5 produce x2 }", relations)
    assert parsed.variables() == {0, 1}


@pytest.mark.parametrize("text,fragment", [
    ("SELECT x0 WHERE { x0 directedby M0 }", "unknown relation"),
    ("SELECT x0 WHERE { x0 direct }", "term"),
    ("SELECT x0 WHERE { x0 Direct M0 }", "relation"),
    ("FETCH x0 WHERE { x0 direct M0 }", "SELECT"),
    ("SELECT x0 WHERE { x1 direct M0 }", "dangling"),
    ("SELECT M0 WHERE { x0 direct M0 }", "head"),
    ("SELECT x0 WHERE { x0 direct M0 } junk", "trailing"),
])
def test_parse_errors_name_the_span(relations, text, fragment):
    with pytest.raises(ParseError) as err:
        parse_query(text, relations)
    assert fragment.lower() in str(err.value).lower()


def test_self_loop_rejected_by_default(relations):
    with pytest.raises(ParseError):
        parse_query("ASK WHERE { M0 marry M0 }", relations)
    parsed = parse_query("ASK WHERE { M0 marry M0 }", relations, allow_self_loops=True)
    assert len(parsed.edges) == 1


def test_canonical_permutation_invariance(relations):
    a = q([Edge(variable(0), relations.id("produce"), entity(0)),
           Edge(variable(0), relations.id("direct"), entity(0))])
    b = q([Edge(variable(0), relations.id("direct"), entity(0)),
           Edge(variable(0), relations.id("produce"), entity(0))])
    assert canonical_form(a, relations) == canonical_form(b, relations)


def test_canonical_renames_lone_variable(relations):
    a = q([Edge(variable(1), relations.id("direct"), entity(0))])
    assert canonical_form(a, relations) == "x0 direct M0"


def test_canonical_swaps_variables(relations):
    a = q([Edge(variable(0), relations.id("direct"), entity(0)),
           Edge(variable(1), relations.id("produce"), entity(0))])
    b = q([Edge(variable(0), relations.id("produce"), entity(0)),
           Edge(variable(1), relations.id("direct"), entity(0))])
    assert canonical_form(a, relations) == canonical_form(b, relations)


def test_iso_equal_on_predicate_swap(relations):
    # the "who directed and produced it" graph compared with its swapped form
    a = q([Edge(variable(0), relations.id("direct"), entity(0)),
           Edge(variable(0), relations.id("produce"), entity(0))])
    b = q([Edge(variable(0), relations.id("produce"), entity(0)),
           Edge(variable(0), relations.id("direct"), entity(0))])
    assert iso_equal(a, b, relations)


def test_iso_unequal_entities_and_kind(relations):
    a = q([Edge(variable(0), relations.id("direct"), entity(0))])
    b = q([Edge(variable(0), relations.id("direct"), entity(1))])
    assert not iso_equal(a, b, relations)
    c = ConjunctiveQuery(a.edges, ASK)
    assert not iso_equal(a, c, relations)


def test_capacity_error_on_too_many_variables(relations):
    edges = [Edge(variable(i), relations.id("direct"), entity(0)) for i in range(9)]
    with pytest.raises(CapacityError):
        canonical_form(q(edges), relations)


def _random_query(rng, relations, n_vars=3, n_ents=2, n_edges=4):
    nodes = [variable(i) for i in range(n_vars)] + [entity(i) for i in range(n_ents)]
    edges = set()
    while len(edges) < n_edges:
        s, o = rng.choice(len(nodes), 2, replace=False)
        r = int(rng.integers(len(relations)))
        edges.add(Edge(nodes[s], r, nodes[o]))
    return q(sorted(edges))


def _oracle_canonical(query, relations):
    """Independently coded exhaustive minimization over variable renumberings."""
    vs = sorted(query.variables())
    candidates = []
    for perm in itertools.permutations(range(len(vs))):
        lookup = dict(zip(vs, perm))

        def name(n):
            return f"x{lookup[n.index]}" if n.kind == "variable" else f"M{n.index}"
        clauses = sorted(f"{name(e.subject)} {relations.token(e.relation)} {name(e.object)}"
                         for e in query.edges)
        candidates.append(" . ".join(clauses))
    return min(candidates) if candidates else canonical_form(query, relations)


def test_canonical_matches_independent_bruteforce(relations, rng):
    for _ in range(200):
        query = _random_query(rng, relations)
        assert canonical_form(query, relations) == _oracle_canonical(query, relations)


def test_roundtrip_parse_serialize(relations, rng):
    for _ in range(100):
        query = _random_query(rng, relations)
        text = serialize(query, relations)
        again = parse_query(text, relations)
        assert iso_equal(query, again, relations)
        # canonicalization is idempotent
        assert canonical_form(again, relations) == canonical_form(query, relations)


def test_serialize_emits_sorted_clauses(relations):
    query = q([Edge(variable(0), relations.id("produce"), entity(1)),
               Edge(variable(0), relations.id("direct"), entity(0))])
    text = serialize(query, relations)
    body = text.split("{ ")[1].split(" }")[0]
    clauses = body.split(" . ")
    assert clauses == sorted(clauses)
