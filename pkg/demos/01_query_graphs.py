"""Conjunctive queries as directed graphs: parsing, canonical forms, equality.

Run:  python3 demos/01_query_graphs.py
"""

from conjparse.query_ir import canonical_form, iso_equal, parse_query, serialize
from conjparse.vocab import Vocabulary

relations = Vocabulary(["direct", "produce", "star"])

# A query is a set of edges; clause order carries no meaning.
a = parse_query("SELECT x0 WHERE { x0 direct M0 . x0 produce M0 }", relations)
b = parse_query("SELECT x0 WHERE { x0 produce M0 . x0 direct M0 }", relations)
print("clause order ignored:", iso_equal(a, b, relations))

# Variable names carry no meaning either: x7 is the same graph as x0.
c = parse_query("SELECT x7 WHERE { x7 star M1 }", relations)
print("canonical form of      'x7 star M1':", canonical_form(c, relations))

# Duplicate clauses collapse (set semantics).
d = parse_query("SELECT x0 WHERE { x0 direct M0 . x0 direct M0 }", relations)
print("duplicate clauses collapse to:", len(d.edges), "edge")

# Serialization is canonical: sorted clauses, variables renumbered.
messy = parse_query("SELECT x0 WHERE { x2 produce M1 . x2 direct M0 . x0 star M1 }",
                    relations)
print("canonical serialization:", serialize(messy, relations))

# Two-variable graphs that differ only by a variable swap are equal.
e = parse_query("SELECT x0 WHERE { x0 direct M0 . x1 produce M0 }", relations)
f = parse_query("SELECT x0 WHERE { x0 produce M0 . x1 direct M0 }", relations)
print("variable swap is an isomorphism:", iso_equal(e, f, relations))

# Kind matters: an ASK with the same edges is a different query.
g = parse_query("ASK WHERE { M0 direct M1 }", relations)
h = parse_query("SELECT x0 WHERE { M0 direct M1 }", relations)
print("ASK vs SELECT differ:", not iso_equal(g, h, relations))
