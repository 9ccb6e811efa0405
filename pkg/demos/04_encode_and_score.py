"""Encoding a question and scoring candidate edges, ungrounded and grounded.

Run:  python3 demos/04_encode_and_score.py
"""

import numpy as np

from conjparse.encoder import build_word_vocab, encode, init_encoder_params
from conjparse.graph_decoder import (decode, init_decoder_params,
                                     score_grounded, score_plain)
from conjparse.text_pipeline import anonymize, merge_groups
from conjparse.vocab import Vocabulary

pos_lexicon = {"directed": "VERB", "produced": "VERB"}
question = "who directed and produced M0 and M1 ?"

anon = anonymize(question, {})
inp = merge_groups(anon, pos_lexicon, n_vars=2)
vocab = build_word_vocab([anon.tokens])
relations = Vocabulary(["direct", "produce"])

rng = np.random.default_rng(0)
d = 16
enc_params = init_encoder_params(rng, len(vocab), d=d)
enc = encode(inp, enc_params, vocab)
print("positions:", enc.h.shape, " candidate nodes:",
      [n.token() for n in enc.node_order])

plain = init_decoder_params(rng, "plain", len(relations), d)
scores = score_plain(enc, plain)
print("\nplain edge probabilities (untrained, ~0.5):")
print(np.round(scores.probs[:, :, 0], 3))

grounded = init_decoder_params(rng, "grounded", len(relations), d)
gs = score_grounded(enc, inp, grounded, enc_params, vocab)
i, j = 2, 0  # pair (x0, M0)
print("\nattention of pair (x0, M0) over groups + NIL:")
labels = [" ".join(g.members) for g in inp.groups] + ["NIL"]
for lab, a in zip(labels, gs.alpha[i, j]):
    print(f"  {lab:<22} {a:.3f}")
print("rows sum to 1:", bool(abs(gs.alpha[i, j].sum() - 1.0) < 1e-6))

# Thresholding scores gives back a query graph (garbage until trained).
print("\ndecoded (untrained):",
      len(decode(gs, relations).edges), "edges above threshold")
