import json

import pytest

from conjparse import dataset as ds
from conjparse.errors import ConfigError
from conjparse.evaluator import (check_compatible, evaluate, predict_question,
                                 write_failures, write_predictions)
from conjparse.model import ModelConfig, init_model, load_model, save_model
from conjparse.trainer import TrainConfig, build_vocabs, train

GRAMMAR = ds.DEFAULT_GRAMMAR
POS = GRAMMAR.pos_lexicon()
ENTS = GRAMMAR.entity_lexicon()


@pytest.fixture(scope="module")
def trained():
    examples = ds.generate(GRAMMAR, 60, seed=11)
    cfg = TrainConfig(mode="grounded", d=32, n_vars=2, epochs=150, em_every=10,
                      seed=0, lr=3e-2, batch_size=16, patience=10_000,
                      stop_at_train_em=1.0)
    result = train(cfg, examples, POS, ENTS)
    return examples, result.model


def test_perfect_predictions_give_perfect_metrics(trained):
    examples, model = trained
    report = evaluate(model, examples, split="train")
    assert report.exact_match == 1.0
    assert report.edge_precision == 1.0
    assert report.edge_recall == 1.0
    assert report.kind_accuracy == 1.0
    assert report.failures == []


def test_exact_match_invariant_to_gold_variable_names(trained):
    examples, model = trained
    renamed = [ds.Example(ex.question,
                          ex.query.replace("x0", "x7"), ex.derivation)
               for ex in examples]
    report = evaluate(model, renamed, split="train")
    assert report.exact_match == 1.0


def test_exact_match_invariant_to_gold_edge_order(trained):
    examples, model = trained
    flipped = []
    for ex in examples:
        head, body = ex.query.split(" WHERE { ")
        clauses = body[:-2].split(" . ")
        flipped.append(ds.Example(ex.question,
                                  f"{head} WHERE {{ {' . '.join(reversed(clauses))} }}",
                                  ex.derivation))
    report = evaluate(model, flipped, split="train")
    assert report.exact_match == 1.0


def test_empty_predictions_report_flagged_zero_precision():
    examples = ds.generate(GRAMMAR, 10, seed=12)
    words, relations = build_vocabs(examples, ENTS)
    model = init_model(ModelConfig(mode="plain", d=16, n_vars=2), words,
                       relations, seed=0, pos_lexicon=POS, entity_lexicon=ENTS)
    # zero relation weights pin every probability at exactly 0.5, which the
    # strict > threshold never passes: every prediction is the empty graph
    model.decoder.w_r.data[:] = 0.0
    report = evaluate(model, examples)
    assert report.precision_undefined
    assert report.edge_precision == 0.0
    assert report.edge_recall == 0.0
    assert report.exact_match == 0.0


def test_trained_ask_question_classified_confidently(trained):
    examples, model = trained
    from conjparse.graph_decoder import classify_kind
    from conjparse.trainer import compile_corpus
    from conjparse.encoder import encode
    from conjparse import autodiff as ad
    asks = [ex for ex in examples if ex.query.startswith("ASK")]
    assert asks
    comp = compile_corpus(asks[:5], model)
    with ad.no_grad():
        for c in comp:
            enc = encode(c.input, model.encoder, model.word_vocab)
            kind, p_ask = classify_kind(enc, model.decoder)
            assert kind == "ask"
            assert p_ask > 0.9


def test_failure_list_capped_and_dumpable(tmp_path):
    examples = ds.generate(GRAMMAR, 30, seed=13)
    words, relations = build_vocabs(examples, ENTS)
    model = init_model(ModelConfig(mode="plain", d=16, n_vars=2), words,
                       relations, seed=0, pos_lexicon=POS, entity_lexicon=ENTS)
    report = evaluate(model, examples, max_failures=5)
    assert len(report.failures) <= 5
    path = tmp_path / "failures.jsonl"
    write_failures(str(path), report)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert all({"question", "gold", "predicted"} <= set(r) for r in rows)


def test_predictions_dump(trained, tmp_path):
    examples, model = trained
    path = tmp_path / "preds.jsonl"
    write_predictions(str(path), model, examples[:5], include_probs=True,
                      include_attention=True)
    rows = [json.loads(l) for l in path.read_text().splitlines()]
    assert len(rows) == 5
    assert all("question" in r and "gold" in r and "predicted" in r for r in rows)
    assert "edge_probs" in rows[0] and "attention" in rows[0]


def test_predict_question_on_trained_model(trained):
    examples, model = trained
    ex = examples[0]
    query, scores = predict_question(model, ex.question)
    from conjparse.query_ir import iso_equal, parse_query
    assert iso_equal(parse_query(query, model.relations),
                     parse_query(ex.query, model.relations), model.relations)


def test_predict_question_accepts_placeholders(trained):
    _, model = trained
    query, _ = predict_question(model, "who directed and produced M0 and M1 ?")
    assert query.startswith("SELECT x0 WHERE {")


def test_check_compatible_refuses_drifted_lexicon(trained):
    _, model = trained
    check_compatible(model, POS, ENTS)
    drifted = dict(POS)
    drifted["directed"] = "OTHER"
    with pytest.raises(ConfigError):
        check_compatible(model, drifted, ENTS)


def test_checkpoint_eval_roundtrip(trained, tmp_path):
    examples, model = trained
    path = str(tmp_path / "model.ckpt")
    save_model(path, model)
    loaded, manifest, _ = load_model(path)
    assert manifest["config_hash"] == model.config_hash()
    report = evaluate(loaded, examples, split="train")
    # float32 checkpoint round-trip of a float64 model may flip borderline
    # probabilities, but a well-trained model is nowhere near the threshold
    assert report.exact_match == 1.0
