"""Synthetic corpus generation and compound-divergence splits.

Run:  python3 demos/05_generate_and_split.py
"""

from collections import Counter

from conjparse import dataset as ds

grammar = ds.DEFAULT_GRAMMAR
examples = ds.generate(grammar, 2000, seed=0)
print("corpus of", len(examples), "examples; a few samples:")
for ex in examples[:4]:
    print("  Q:", ex.question)
    print("     ", ex.query)
    print("     derivation:", ex.derivation)

atoms = Counter()
compounds = Counter()
for ex in examples:
    atoms.update(ds.atom_counts(ex))
    compounds.update(ds.compound_counts(ex))
print(f"\n{len(atoms)} atom types, {len(compounds)} compound types")

print("\ndivergence basics:")
print("  identical distributions ->", ds.divergence({"a": 2, "b": 2}, {"a": 1, "b": 1}))
print("  disjoint supports       ->", ds.divergence({"a": 1}, {"b": 1}))
print("  [1/2,1/2] vs [1,0]      ->", round(ds.divergence({"a": 1, "b": 1}, {"a": 5}), 5))

rnd = ds.random_split(examples, seed=0)
print(f"\nrandom 80/20 split:  atom={rnd.atom_divergence:.4f}  "
      f"compound={rnd.compound_divergence:.4f}")

mcd = ds.mcd_split(examples, seed=0)
print(f"greedy MCD split:    atom={mcd.atom_divergence:.4f}  "
      f"compound={mcd.compound_divergence:.4f}")
print("train/test sizes:", len(mcd.train), len(mcd.test))
