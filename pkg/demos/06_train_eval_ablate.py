"""End-to-end: train on a compositional split, evaluate, inspect attention.

Uses a small corpus and dimension so it finishes in about a minute.
Run:  python3 demos/06_train_eval_ablate.py
"""

from conjparse import dataset as ds
from conjparse.evaluator import evaluate, predict_question
from conjparse.trainer import TrainConfig, train

grammar = ds.DEFAULT_GRAMMAR
examples = ds.generate(grammar, 400, seed=0)
split = ds.mcd_split(examples, seed=0, swap_budget=20_000)
print(f"MCD split: compound divergence {split.compound_divergence:.3f}, "
      f"atom divergence {split.atom_divergence:.4f}")
train_ex = [examples[i] for i in split.train]
test_ex = [examples[i] for i in split.test]

cfg = TrainConfig(mode="grounded", d=32, n_vars=2, epochs=60, em_every=20,
                  seed=0, lr=2e-2, batch_size=32, patience=10_000,
                  stop_at_train_em=1.0)
result = train(cfg, train_ex, grammar.pos_lexicon(), grammar.entity_lexicon(),
               log=print)

report = evaluate(result.model, test_ex)
print("\ntest report:")
print(report.table())

question = "who directed and produced goldfinger and inception ?"
query, scores = predict_question(result.model, question)
print(f"\n{question}\n  -> {query}")

# where does the edge (x0 -> M0) look? mass should sit on the verb group
x0 = next(i for i, n in enumerate(scores.node_order) if n.token() == "x0")
m0 = next(i for i, n in enumerate(scores.node_order) if n.token() == "M0")
print("attention of pair (x0, M0) over groups + NIL:")
labels = ["who", "directed produced", "M0 M1", "?", "NIL"]
for lab, a in zip(labels, scores.alpha[x0, m0]):
    print(f"  {lab:<20} {a:.3f}")
