"""Edge scoring over node pairs, with optional attention over question groups.

Every ordered node pair (s, o) with s != o is scored against every relation:

    plain:     P(s -r-> o) = sigmoid(w_r . [h_s, h_o])
    grounded:  P(s -r-> o) = sigmoid(w_r . [h_s, h_o, z_so])

where z_so is an attention-weighted average over the question's groups plus
the NIL sentinel. Attention queries are a linear transform of the pair
embedding, keys a linear transform of each group's contextual vector, and the
softmax uses temperature sqrt(d). Values are non-contextual sums of member
word embeddings (the NIL value is the NIL token's embedding), so attending to
a group exposes exactly which words it contains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import ContextualEncoding, EncoderParams, NIL_TOKEN
from .errors import ConfigError, ContractViolation
from .query_ir import (ASK, SELECT, ConjunctiveQuery, Edge, NodeRef,
                       make_query, variable)
from .text_pipeline import EncoderInput
from .vocab import Vocabulary

MODE_PLAIN = "plain"
MODE_SYNTAX = "syntax_aware"
MODE_GROUNDED = "grounded"
MODES = (MODE_PLAIN, MODE_SYNTAX, MODE_GROUNDED)


@dataclass
class DecoderParams:
    mode: str
    w_r: Tensor             # (R, 2d) plain/syntax_aware, (R, 3d) grounded
    Q: Tensor | None        # (d, 2d), grounded only
    K: Tensor | None        # (d, d), grounded only
    kind_w: Tensor | None   # (d, 1), present iff the kind head is enabled
    kind_b: Tensor | None   # (1, 1)

    def named(self, prefix="decoder") -> dict[str, Tensor]:
        out = {f"{prefix}.w_r": self.w_r}
        if self.Q is not None:
            out[f"{prefix}.Q"] = self.Q
            out[f"{prefix}.K"] = self.K
        if self.kind_w is not None:
            out[f"{prefix}.kind_w"] = self.kind_w
            out[f"{prefix}.kind_b"] = self.kind_b
        return out


def init_decoder_params(rng: np.random.Generator, mode: str, n_relations: int,
                        d: int, kind_head: bool = True,
                        dtype=np.float32) -> DecoderParams:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
    blocks = 3 if mode == MODE_GROUNDED else 2
    w_r = ad.uniform_init(rng, (n_relations, blocks * d), d, dtype)
    Q = K = None
    if mode == MODE_GROUNDED:
        Q = ad.uniform_init(rng, (d, 2 * d), d, dtype)
        K = ad.uniform_init(rng, (d, d), d, dtype)
    kind_w = kind_b = None
    if kind_head:
        kind_w = ad.uniform_init(rng, (d, 1), d, dtype)
        kind_b = ad.zeros_init((1, 1), dtype)
    return DecoderParams(mode=mode, w_r=w_r, Q=Q, K=K, kind_w=kind_w, kind_b=kind_b)


@dataclass
class EdgeScores:
    probs: np.ndarray               # (N, N, R), self-pairs masked to 0
    pair_mask: np.ndarray           # (N, N) bool, True where scored
    node_order: tuple[NodeRef, ...]
    alpha: np.ndarray | None = None  # (N, N, k+1) attention, grounded mode


def ordered_pairs(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Subject/object row indices for all ordered pairs with s != o."""
    subj, obj = [], []
    for i in range(n):
        for j in range(n):
            if i != j:
                subj.append(i)
                obj.append(j)
    return np.asarray(subj, dtype=np.intp), np.asarray(obj, dtype=np.intp)


def pair_features(enc: ContextualEncoding) -> tuple[Tensor, np.ndarray, np.ndarray]:
    n = len(enc.node_order)
    if n < 2:
        raise ContractViolation(f"need at least 2 candidate nodes, got {n}")
    subj, obj = ordered_pairs(n)
    feats = ad.concat([ad.take_rows(enc.nodes, subj), ad.take_rows(enc.nodes, obj)], axis=1)
    return feats, subj, obj


def edge_logits_plain(enc: ContextualEncoding, params: DecoderParams) -> Tensor:
    feats, _, _ = pair_features(enc)
    if params.w_r.shape[1] != 2 * enc.d:
        raise ContractViolation(
            f"relation weights {params.w_r.shape} incompatible with pair features "
            f"of width {2 * enc.d}")
    return ad.matmul(feats, ad.transpose(params.w_r))


def attention_values(inp: EncoderInput, enc_params: EncoderParams,
                     vocab: Vocabulary, enc: ContextualEncoding,
                     contextual: bool = False) -> Tensor:
    """(k+1, d) value matrix: one row per group plus the NIL sentinel."""
    if contextual:
        rows = list(range(len(inp.groups))) + [inp.nil_pos]
        return ad.take_rows(enc.h, rows)
    bags = [sorted(vocab.id(t) for t in g.members) for g in inp.groups]
    bags.append([vocab.id(NIL_TOKEN)])
    return ad.embedding_sum(enc_params.word_emb, bags)


def grounded_parts(enc: ContextualEncoding, inp: EncoderInput,
                   params: DecoderParams, enc_params: EncoderParams,
                   vocab: Vocabulary,
                   contextual_values: bool = False) -> tuple[Tensor, Tensor]:
    """Edge logits (P, R) and attention weights (P, k+1) for grounded scoring."""
    if params.Q is None or params.K is None:
        raise ContractViolation("grounded scoring requires Q and K transforms")
    d = enc.d
    feats, _, _ = pair_features(enc)                      # (P, 2d)
    q = ad.matmul(feats, ad.transpose(params.Q))          # (P, d)
    key_rows = list(range(len(inp.groups))) + [inp.nil_pos]
    keys = ad.matmul(ad.take_rows(enc.h, key_rows), ad.transpose(params.K))  # (k+1, d)
    scores = ad.matmul(q, ad.transpose(keys))             # (P, k+1)
    alpha = ad.softmax_rows(scores, temperature=math.sqrt(d))
    values = attention_values(inp, enc_params, vocab, enc, contextual_values)
    z = ad.matmul(alpha, values)                          # (P, d)
    full = ad.concat([feats, z], axis=1)                  # (P, 3d)
    if params.w_r.shape[1] != 3 * d:
        raise ContractViolation(
            f"relation weights {params.w_r.shape} incompatible with grounded features "
            f"of width {3 * d}")
    return ad.matmul(full, ad.transpose(params.w_r)), alpha


def _as_scores(logits: Tensor, enc: ContextualEncoding,
               alpha: Tensor | None = None) -> EdgeScores:
    n = len(enc.node_order)
    subj, obj = ordered_pairs(n)
    p = _sigmoid_np(logits.data)
    probs = np.zeros((n, n, p.shape[1]), dtype=p.dtype)
    probs[subj, obj] = p
    mask = np.zeros((n, n), dtype=bool)
    mask[subj, obj] = True
    a = None
    if alpha is not None:
        a = np.zeros((n, n, alpha.data.shape[1]), dtype=alpha.data.dtype)
        a[subj, obj] = alpha.data
    return EdgeScores(probs=probs, pair_mask=mask, node_order=enc.node_order, alpha=a)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def score_plain(enc: ContextualEncoding, params: DecoderParams) -> EdgeScores:
    """Edge probabilities from pair embeddings alone."""
    return _as_scores(edge_logits_plain(enc, params), enc)


def score_grounded(enc: ContextualEncoding, inp: EncoderInput,
                   params: DecoderParams, enc_params: EncoderParams,
                   vocab: Vocabulary, contextual_values: bool = False) -> EdgeScores:
    """Edge probabilities with the grounding attention over groups + NIL."""
    logits, alpha = grounded_parts(enc, inp, params, enc_params, vocab,
                                   contextual_values)
    return _as_scores(logits, enc, alpha)


def classify_kind(enc: ContextualEncoding, params: DecoderParams) -> tuple[str, float]:
    """Logistic query-kind classifier on the NIL-position contextual vector.
    Ties break toward SELECT; a disabled head always answers SELECT."""
    if params.kind_w is None:
        return SELECT, 0.0
    nil_row = ad.take_rows(enc.h, [enc.input.nil_pos])
    logit = ad.add(ad.matmul(nil_row, params.kind_w), params.kind_b)
    p_ask = float(_sigmoid_np(logit.data)[0, 0])
    return (ASK if p_ask > 0.5 else SELECT), p_ask


def kind_logit(enc: ContextualEncoding, params: DecoderParams) -> Tensor:
    nil_row = ad.take_rows(enc.h, [enc.input.nil_pos])
    return ad.add(ad.matmul(nil_row, params.kind_w), params.kind_b)


def decode(scores: EdgeScores, relations: Vocabulary, threshold: float = 0.5,
           kind: str = SELECT, allow_self_loops: bool = False) -> ConjunctiveQuery:
    """Threshold edge probabilities into a query graph.

    Variables with no incident edge are dropped and the survivors renumbered
    contiguously. An empty edge set is a legal output.
    """
    if not (0.0 < threshold < 1.0):
        raise ContractViolation(f"threshold must be in (0, 1), got {threshold}")
    n = len(scores.node_order)
    edges: list[tuple[NodeRef, int, NodeRef]] = []
    for i in range(n):
        for j in range(n):
            if not scores.pair_mask[i, j]:
                continue
            for r in range(scores.probs.shape[2]):
                if scores.probs[i, j, r] > threshold:
                    edges.append((scores.node_order[i], r, scores.node_order[j]))

    used_vars = sorted({ref.index for e in edges for ref in (e[0], e[2])
                        if ref.kind == "variable"})
    renum = {v: i for i, v in enumerate(used_vars)}

    def rn(ref: NodeRef) -> NodeRef:
        return variable(renum[ref.index]) if ref.kind == "variable" else ref

    return make_query((Edge(rn(s), r, rn(o)) for s, r, o in edges), kind,
                      allow_self_loops=allow_self_loops)


def gold_targets(query: ConjunctiveQuery, node_order: tuple[NodeRef, ...],
                 n_relations: int) -> np.ndarray:
    """(P, R) 0/1 matrix over ordered pairs x relations for the gold edges."""
    index = {ref: i for i, ref in enumerate(node_order)}
    n = len(node_order)
    subj, obj = ordered_pairs(n)
    pair_row = {(int(s), int(o)): k for k, (s, o) in enumerate(zip(subj, obj))}
    t = np.zeros((len(subj), n_relations))
    for e in query.edges:
        if e.subject not in index or e.object not in index:
            raise ContractViolation(
                f"gold edge endpoint {e.subject.token()}/{e.object.token()} "
                f"not among candidate nodes")
        t[pair_row[(index[e.subject], index[e.object])], e.relation] = 1.0
    return t
