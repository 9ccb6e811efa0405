"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`. The training-based criteria
use fixed seeds and deterministic configs, so results are reproducible
bit-for-bit on the same platform (and to float tolerance anywhere else).
"""

import math
import time

import numpy as np
import pytest

from conjparse import dataset as ds
from conjparse.encoder import NIL_TOKEN, encode
from conjparse.evaluator import evaluate, run_ablation
from conjparse.graph_decoder import score_grounded
from conjparse.model import ModelConfig, init_model
from conjparse.query_ir import Edge, entity, iso_equal, make_query, variable
from conjparse.text_pipeline import Group, anonymize, merge_groups
from conjparse.trainer import (TrainConfig, batch_loss, build_vocabs,
                               compile_corpus, exact_match, toy_gradcheck,
                               train)
from conjparse.vocab import Vocabulary

GRAMMAR = ds.DEFAULT_GRAMMAR
POS = GRAMMAR.pos_lexicon()
ENTS = GRAMMAR.entity_lexicon()

N_TRIALS = 1000


@pytest.fixture(scope="module")
def corpus2000():
    return ds.generate(GRAMMAR, 2000, seed=0)


def _report(name, ok, detail=""):
    print(f"\n[{name}] {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name}: {detail}"


# -- criterion 1: gradient fidelity --------------------------------------- #

def test_criterion_1_gradient_fidelity():
    t0 = time.time()
    worst = {}
    for mode in ("plain", "syntax_aware", "grounded"):
        report = toy_gradcheck(mode, d=8, tolerance=1e-4)
        worst[mode] = report.max_rel_err
        assert report.passed, f"{mode}:\n{report.summary()}"
    elapsed = time.time() - t0
    _report("criterion 1: gradient fidelity", elapsed < 60,
            f"(all modes at tol 1e-4; worst rel err "
            f"{max(worst.values()):.2e}; {elapsed:.1f}s < 60s)")


# -- criterion 2: permutation invariance ----------------------------------- #

def _shuffle_clauses(query_text, rng):
    head, body = query_text.split(" WHERE { ")
    clauses = body[:-2].split(" . ")
    order = rng.permutation(len(clauses))
    return f"{head} WHERE {{ {' . '.join(clauses[i] for i in order)} }}"


def test_criterion_2a_edge_permutation_loss_bitwise(corpus2000):
    examples = [ex for ex in corpus2000 if len(ex.derivation) > 2][:N_TRIALS]
    words, relations = build_vocabs(corpus2000, ENTS)
    model = init_model(ModelConfig(mode="grounded", d=16, n_vars=2, precision=64),
                       words, relations, seed=0, pos_lexicon=POS, entity_lexicon=ENTS)
    rng = np.random.default_rng(42)
    failures = 0
    for ex in examples:
        shuffled = ds.Example(ex.question, _shuffle_clauses(ex.query, rng))
        a = batch_loss(model, compile_corpus([ex], model))
        b = batch_loss(model, compile_corpus([shuffled], model))
        failures += float(a.data) != float(b.data)
    _report("criterion 2a: edge-permutation loss bitwise-identical",
            failures == 0, f"({len(examples)} trials, {failures} failures)")


def _permute_one_group(inp, rng):
    multi = [i for i, g in enumerate(inp.groups) if len(g.members) > 1]
    if not multi:
        return None
    gi = int(rng.choice(multi))
    members = list(inp.groups[gi].members)
    while True:
        perm = rng.permutation(len(members))
        if len(members) > 1 and any(perm != np.arange(len(members))):
            break
    groups = list(inp.groups)
    groups[gi] = Group(tuple(members[i] for i in perm),
                       inp.groups[gi].positions, inp.groups[gi].tag)
    return type(inp)(tuple(groups), inp.n_vars, inp.slot_to_group)


def test_criterion_2b_group_member_reorder_bitwise(corpus2000):
    conj = [ex for ex in corpus2000 if " and " in ex.question][:N_TRIALS]
    words, relations = build_vocabs(corpus2000, ENTS)
    model = init_model(ModelConfig(mode="grounded", d=16, n_vars=2, precision=64),
                       words, relations, seed=1, pos_lexicon=POS, entity_lexicon=ENTS)
    rng = np.random.default_rng(43)
    tried = failures = 0
    for ex in conj:
        comp = compile_corpus([ex], model)[0]
        flipped_inp = _permute_one_group(comp.input, rng)
        if flipped_inp is None:
            continue
        tried += 1
        enc_a = encode(comp.input, model.encoder, model.word_vocab)
        enc_b = encode(flipped_inp, model.encoder, model.word_vocab)
        same_h = np.array_equal(enc_a.h.data, enc_b.h.data)
        same_nodes = np.array_equal(enc_a.nodes.data, enc_b.nodes.data)
        sa = score_grounded(enc_a, comp.input, model.decoder, model.encoder,
                            model.word_vocab)
        sb = score_grounded(enc_b, flipped_inp, model.decoder, model.encoder,
                            model.word_vocab)
        same_scores = np.array_equal(sa.probs, sb.probs)
        la = batch_loss(model, [comp])
        lb = batch_loss(model, [type(comp)(comp.question, flipped_inp, comp.gold,
                                           comp.targets, comp.kind_target)])
        same_loss = float(la.data) == float(lb.data)
        failures += not (same_h and same_nodes and same_scores and same_loss)
    _report("criterion 2b: group-member reorder bitwise-identical",
            failures == 0 and tried >= 900,
            f"({tried} trials with a multi-member group, {failures} failures)")


def test_criterion_2c_iso_equal_variable_renaming(corpus2000):
    relations = Vocabulary(["r_a", "r_b"])
    rng = np.random.default_rng(44)
    failures = 0
    for _ in range(N_TRIALS):
        n_vars = int(rng.integers(1, 5))
        nodes = ([variable(i) for i in range(n_vars)]
                 + [entity(i) for i in range(int(rng.integers(1, 3)))])
        edges = set()
        for _ in range(int(rng.integers(1, 5))):
            s, o = rng.choice(len(nodes), 2, replace=False)
            edges.add(Edge(nodes[s], int(rng.integers(2)), nodes[o]))
        q = make_query(edges)
        perm = rng.permutation(8)[:8]  # injective renaming into 0..7

        def rn(ref):
            return variable(int(perm[ref.index])) if ref.kind == "variable" else ref
        renamed = make_query(Edge(rn(e.subject), e.relation, rn(e.object))
                             for e in q.edges)
        failures += not iso_equal(q, renamed, relations)
    _report("criterion 2c: iso_equal invariant under variable renaming",
            failures == 0, f"({N_TRIALS} trials, {failures} failures)")


# -- criterion 3: oracle equivalence ---------------------------------------- #

def _straight_line_oracle(h, values, nodes, Q, K, W, nil_pos, group_count, d,
                          targets):
    """Loop-based evaluation of grounded scoring and the joint likelihood."""
    n = nodes.shape[0]
    probs = {}
    loss = 0.0
    pair_idx = 0
    for s in range(n):
        for o in range(n):
            if s == o:
                continue
            pair = np.concatenate([nodes[s], nodes[o]])
            q = Q @ pair
            a = np.array([q @ (K @ h[p])
                          for p in list(range(group_count)) + [nil_pos]])
            scaled = a / math.sqrt(d)
            e = np.exp(scaled - scaled.max())
            alpha = e / e.sum()
            z = sum(alpha[i] * values[i] for i in range(group_count + 1))
            feats = np.concatenate([pair, z])
            for r in range(W.shape[0]):
                p = 1.0 / (1.0 + math.exp(-float(W[r] @ feats)))
                probs[(s, o, r)] = p
                t = targets[pair_idx, r]
                loss -= t * math.log(p) + (1 - t) * math.log(1 - p)
            pair_idx += 1
    return probs, loss


def test_criterion_3_oracle_equivalence():
    rng = np.random.default_rng(5)
    questions = ["who directed M0", "who directed and produced M0",
                 "did M0 star M1"]
    pos = {"directed": "VERB", "produced": "VERB"}
    words, relations = build_vocabs(
        [ds.Example(q, "SELECT x0 WHERE { x0 direct M0 }") for q in questions]
        + [ds.Example("who produced M0", "SELECT x0 WHERE { x0 produce M0 }")],
        {})
    assert len(relations) == 2
    worst = 0.0
    for trial in range(100):
        cfg = ModelConfig(mode="grounded", d=4, n_vars=1, precision=64,
                          kind_head=False)
        model = init_model(cfg, words, relations, seed=trial, pos_lexicon=pos)
        question = questions[trial % len(questions)]
        anon = anonymize(question, {})
        inp = merge_groups(anon, pos, n_vars=1)
        enc = encode(inp, model.encoder, model.word_vocab)
        assert len(enc.node_order) <= 3
        scores = score_grounded(enc, inp, model.decoder, model.encoder,
                                model.word_vocab)
        gold_text = ("ASK WHERE { M0 direct M1 }" if question.startswith("did")
                     else "SELECT x0 WHERE { x0 direct M0 }")
        example = ds.Example(question, gold_text)
        comp = compile_corpus([example], model)[0]
        loss = float(batch_loss(model, [comp], include_kind=False).data)

        emb = model.encoder.word_emb.data
        values = [sum(emb[model.word_vocab.id(t)] for t in g.members)
                  for g in inp.groups]
        values.append(emb[model.word_vocab.id(NIL_TOKEN)])
        oracle_probs, oracle_loss = _straight_line_oracle(
            enc.h.data, values, enc.nodes.data, model.decoder.Q.data,
            model.decoder.K.data, model.decoder.w_r.data, inp.nil_pos,
            len(inp.groups), 4, comp.targets)
        for (s, o, r), p in oracle_probs.items():
            worst = max(worst, abs(p - scores.probs[s, o, r]))
        worst = max(worst, abs(loss - oracle_loss))
    _report("criterion 3: oracle equivalence", worst < 1e-6,
            f"(100 instances, max abs deviation {worst:.2e} < 1e-6)")


# -- criterion 4: capacity --------------------------------------------------- #

def test_criterion_4_capacity_overfit():
    examples = ds.generate(GRAMMAR, 200, seed=0)
    t0 = time.time()
    cfg = TrainConfig(mode="grounded", d=64, n_vars=2, epochs=200, em_every=5,
                      seed=0, lr=2e-2, batch_size=32, patience=10_000,
                      stop_at_train_em=1.0)
    result = train(cfg, examples, POS, ENTS)
    elapsed = time.time() - t0
    em = exact_match(result.model, compile_corpus(examples, result.model))
    _report("criterion 4: capacity", em == 1.0 and elapsed < 300,
            f"(train EM {em:.3f} at epoch {result.stopped_epoch}; "
            f"{elapsed:.0f}s < 300s)")


# -- criterion 5: i.i.d. sanity ---------------------------------------------- #

def test_criterion_5_iid_sanity(corpus2000):
    split = ds.random_split(corpus2000, test_frac=0.2, seed=0)
    train_ex = [corpus2000[i] for i in split.train]
    test_ex = [corpus2000[i] for i in split.test]
    results = {}
    for mode in ("plain", "syntax_aware", "grounded"):
        cfg = TrainConfig(mode=mode, d=64, n_vars=2, epochs=60, em_every=10,
                          seed=0, lr=2e-2, batch_size=32, patience=10_000,
                          stop_at_train_em=1.0)
        result = train(cfg, train_ex, POS, ENTS)
        results[mode] = evaluate(result.model, test_ex).exact_match
    ok = all(v >= 0.95 for v in results.values())
    _report("criterion 5: i.i.d. sanity", ok,
            "(" + ", ".join(f"{m}={v:.4f}" for m, v in results.items())
            + " all >= 0.95)")


# -- criterion 6: compositional ordering ------------------------------------- #

def test_criterion_6_compositional_ordering(corpus2000):
    """All three modes trained under one fixed budget on an MCD split.

    The run uses d=16: the small state forces the encoder to compress
    multi-unit binding information, which is the desk-scale regime where
    grouping and grounding visibly pay off (at d=64 every mode solves these
    corpora, which is what criterion 5 checks on the random split). The
    grounded-vs-syntax gap is the thin one (a few points on seed means); the
    grounded-vs-plain margin is wide.
    """
    split = ds.mcd_split(corpus2000, target_atom_div=0.02, seed=0,
                         swap_budget=50_000)
    assert split.compound_divergence >= 0.5
    assert split.atom_divergence <= 0.02
    base = TrainConfig(mode="grounded", d=16, n_vars=2, epochs=80, em_every=0,
                       seed=0, lr=2e-2, batch_size=32, patience=10_000)
    result = run_ablation(base, corpus2000, split, seeds=(0, 1, 2),
                          pos_lexicon=POS, entity_lexicon=ENTS)
    m = result.means
    ok = (result.strict_ordering_holds
          and result.grounded_minus_plain >= 0.10)
    _report("criterion 6: compositional ordering", ok,
            f"(means over 3 seeds: grounded={m['grounded']:.4f} > "
            f"syntax_aware={m['syntax_aware']:.4f} > plain={m['plain']:.4f}; "
            f"grounded-plain={result.grounded_minus_plain:+.4f} >= 0.10; "
            f"split comp={split.compound_divergence:.3f} "
            f"atom={split.atom_divergence:.4f})")


# -- criterion 7: parameter budget ------------------------------------------- #

def test_criterion_7_parameter_budget():
    from conjparse.encoder import RESERVED
    words = Vocabulary(RESERVED + tuple(f"w{i}" for i in range(100 - len(RESERVED))))
    relations = Vocabulary(tuple(f"rel_{i:02d}" for i in range(60)))
    model = init_model(ModelConfig(mode="grounded", d=128), words, relations, seed=0)
    n = model.param_count()
    _report("criterion 7: parameter budget", 100_000 <= n <= 1_000_000,
            f"(default config, CFQ-scale vocab: {n} parameters in [0.1M, 1M])")


# -- criterion 8: splitter contrast ------------------------------------------ #

def test_criterion_8_splitter_contrast(corpus2000):
    t0 = time.time()
    mcd = ds.mcd_split(corpus2000, target_atom_div=0.02, seed=0,
                       swap_budget=50_000)
    elapsed = time.time() - t0
    rnd = ds.random_split(corpus2000, test_frac=0.2, seed=0)
    ok = (mcd.compound_divergence >= 0.5 and mcd.atom_divergence <= 0.02
          and rnd.compound_divergence < 0.1 and rnd.atom_divergence <= 0.02
          and elapsed < 30)
    _report("criterion 8: splitter contrast", ok,
            f"(mcd comp={mcd.compound_divergence:.3f} atom={mcd.atom_divergence:.4f} "
            f"in {elapsed:.1f}s; random comp={rnd.compound_divergence:.3f} "
            f"atom={rnd.atom_divergence:.4f})")
