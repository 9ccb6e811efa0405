
from conjparse.text_pipeline import (anonymize, deanonymize, degroup,
                                     merge_groups, tokenize)

POS = {"directed": "VERB", "produced": "VERB", "edited": "VERB", "and": "CONJ"}
ENTS = {"inception": "inception", "goldfinger": "goldfinger",
        "christopher nolan": "c_nolan"}


def test_tokenize_splits_punctuation_and_lowercases():
    assert tokenize("Who directed Inception?") == ["who", "directed", "inception", "?"]


def test_tokenize_keeps_slot_tokens():
    assert tokenize("who directed M0 and M10 ?") == ["who", "directed", "M0", "and", "M10", "?"]


def test_anonymize_single_mention():
    a = anonymize("Who directed Inception ?", ENTS)
    assert list(a.tokens) == ["who", "directed", "M0", "?"]
    assert a.entity_slots == {0: "inception"}
    assert a.mention_positions == {0: (2,)}


def test_anonymize_repeated_mention_reuses_slot():
    a = anonymize("Did Inception star Inception ?", ENTS)
    assert list(a.tokens) == ["did", "M0", "star", "M0", "?"]
    assert a.mention_positions == {0: (1, 3)}


def test_anonymize_slot_order_is_first_mention():
    a = anonymize("Who directed and produced Goldfinger and Inception ?", ENTS)
    assert a.entity_slots == {0: "goldfinger", 1: "inception"}


def test_anonymize_longest_match():
    a = anonymize("did christopher nolan produce goldfinger ?", ENTS)
    assert list(a.tokens) == ["did", "M0", "produce", "M1", "?"]
    assert a.entity_slots[0] == "christopher nolan"


def test_anonymize_no_entities_is_fine():
    a = anonymize("who sleeps ?", ENTS)
    assert a.entity_slots == {}


def test_deanonymize_restores_tokens():
    text = "Who directed and produced Goldfinger and Inception ?"
    a = anonymize(text, ENTS)
    assert deanonymize(a) == tokenize(text)


def test_merge_groups_verbs_and_entities():
    a = anonymize("who directed and produced M0 and M1", {})
    e = merge_groups(a, POS)
    assert [g.members for g in e.groups] == [("who",), ("directed", "produced"), ("M0", "M1")]
    assert e.slot_to_group == {0: 2, 1: 2}


def test_merge_groups_no_conjunction_no_merge():
    a = anonymize("who directed M0", {})
    e = merge_groups(a, POS)
    assert [g.members for g in e.groups] == [("who",), ("directed",), ("M0",)]


def test_merge_groups_nary_run():
    a = anonymize("M0 and M1 and M2", {})
    e = merge_groups(a, POS)
    assert [g.members for g in e.groups] == [("M0", "M1", "M2")]


def test_merge_never_merges_across_tags():
    # "produced" VERB vs "M0" ENT: the run breaks at the tag change
    a = anonymize("who directed and M0", {})
    e = merge_groups(a, POS)
    assert [g.members for g in e.groups] == [("who",), ("directed",), ("and",), ("M0",)]


def test_layout_positions():
    a = anonymize("who directed and produced M0 and M1", {})
    e = merge_groups(a, POS, n_vars=4)
    k = len(e.groups)
    assert k == 3
    assert e.sep_pos == 3
    assert [e.var_pos(i) for i in range(4)] == [4, 5, 6, 7]
    assert e.nil_pos == 8
    assert e.length == 9


def test_degroup_restores_and_tokens():
    a = anonymize("who directed and produced M0 and M1 ?", {})
    e = merge_groups(a, POS)
    d = degroup(e)
    flat = [m for g in d.groups for m in g.members]
    assert flat == list(a.tokens)
    assert all(len(g.members) == 1 for g in d.groups)
    # the fully anonymized question degroups to 8 singleton groups
    assert len(d.groups) == 8


def test_degroup_idempotent():
    a = anonymize("who directed M0 ?", {})
    e = degroup(merge_groups(a, POS))
    assert degroup(e) == e


def test_degroup_token_multiset_matches_source(rng):
    words = ["who", "did", "directed", "produced", "edited", "M0", "M1", "?", "and"]
    for _ in range(50):
        toks = [words[i] for i in rng.integers(len(words), size=rng.integers(1, 12))]
        a = anonymize(" ".join(toks), {})
        d = degroup(merge_groups(a, POS))
        flat = sorted(m for g in d.groups for m in g.members)
        assert flat == sorted(a.tokens)


def test_multi_member_groups_are_tag_homogeneous(rng):
    words = ["who", "directed", "produced", "edited", "M0", "M1", "and", "?"]
    for _ in range(200):
        toks = [words[i] for i in rng.integers(len(words), size=rng.integers(1, 14))]
        e = merge_groups(anonymize(" ".join(toks), {}), POS)
        for g in e.groups:
            if len(g.members) > 1:
                assert len({POS.get(m, "ENT" if m.startswith("M") else "OTHER")
                            for m in g.members}) == 1
