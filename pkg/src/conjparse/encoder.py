"""Sequence encoder: additive group embeddings + a bidirectional LSTM.

Group embeddings are plain sums of member word embeddings, which makes the
representation of "A and B" identical to "B and A" by construction. The
bidirectional recurrent pass (hidden size d/2 per direction, concatenated and
projected back to d) yields one contextual vector per position; node
embeddings for entities are sums of the contextual vectors of all groups
mentioning them, and each variable token contributes its own position vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CapacityError, ConfigError
from .query_ir import NodeRef, entity, variable
from .text_pipeline import EncoderInput, slot_group_indices
from .vocab import UNK_TOKEN, Vocabulary

SEP_TOKEN = "[SEP]"
NIL_TOKEN = "[NIL]"
MAX_VARS = 8
RESERVED = (SEP_TOKEN, NIL_TOKEN, UNK_TOKEN) + tuple(f"[x{i}]" for i in range(MAX_VARS))

DEFAULT_MAX_POSITIONS = 64


def build_word_vocab(token_lists, unk: bool = False) -> Vocabulary:
    """Word vocabulary over anonymized question tokens, with the separator,
    sentinel, unknown, and variable tokens reserved up front."""
    return Vocabulary.from_corpus(
        (t for toks in token_lists for t in toks), reserved=RESERVED, unk=unk)


@dataclass
class LstmWeights:
    Wx: Tensor  # (d_in, 4*dh), gate order i, f, g, o
    Wh: Tensor  # (dh, 4*dh)
    b: Tensor   # (4*dh,)


@dataclass
class EncoderParams:
    word_emb: Tensor  # (V, d); includes reserved special tokens
    fwd: LstmWeights
    bwd: LstmWeights
    proj_W: Tensor    # (d, d)
    proj_b: Tensor    # (d,)
    d: int

    def named(self, prefix="encoder") -> dict[str, Tensor]:
        out = {f"{prefix}.word_emb": self.word_emb,
               f"{prefix}.proj_W": self.proj_W, f"{prefix}.proj_b": self.proj_b}
        for tag, w in (("fwd", self.fwd), ("bwd", self.bwd)):
            out[f"{prefix}.{tag}.Wx"] = w.Wx
            out[f"{prefix}.{tag}.Wh"] = w.Wh
            out[f"{prefix}.{tag}.b"] = w.b
        return out


def init_encoder_params(rng: np.random.Generator, vocab_size: int, d: int,
                        dtype=np.float32) -> EncoderParams:
    if d % 2 != 0:
        raise ConfigError(f"encoder dimension d must be even, got {d}")
    dh = d // 2

    def lstm(r):
        return LstmWeights(
            Wx=ad.uniform_init(r, (d, 4 * dh), d, dtype),
            Wh=ad.uniform_init(r, (dh, 4 * dh), d, dtype),
            b=ad.zeros_init((4 * dh,), dtype),
        )
    return EncoderParams(
        word_emb=ad.uniform_init(rng, (vocab_size, d), d, dtype),
        fwd=lstm(rng),
        bwd=lstm(rng),
        proj_W=ad.uniform_init(rng, (d, d), d, dtype),
        proj_b=ad.zeros_init((d,), dtype),
        d=d,
    )


@dataclass
class ContextualEncoding:
    h: Tensor                       # (L, d) contextual vectors, layout order
    nodes: Tensor                   # (N, d) node embeddings
    node_order: tuple[NodeRef, ...] # row order of `nodes`
    input: EncoderInput
    d: int

    def node_row(self, ref: NodeRef) -> int:
        return self.node_order.index(ref)


def position_bags(inp: EncoderInput, vocab: Vocabulary) -> list[list[int]]:
    """Word-id bag per sequence position. Bags are sorted so the embedding sum
    runs in a canonical order: member permutations give bit-identical sums."""
    bags = [sorted(vocab.id(t) for t in g.members) for g in inp.groups]
    bags.append([vocab.id(SEP_TOKEN)])
    for i in range(inp.n_vars):
        bags.append([vocab.id(f"[x{i}]")])
    bags.append([vocab.id(NIL_TOKEN)])
    return bags


def embed_group(group, params: EncoderParams, vocab: Vocabulary) -> Tensor:
    """Additive group embedding: elementwise sum of member word embeddings."""
    bag = sorted(vocab.id(t) for t in group.members)
    return ad.reshape(ad.embedding_sum(params.word_emb, [bag]), (params.d,))


def node_layout(inp: EncoderInput) -> tuple[tuple[NodeRef, ...], np.ndarray]:
    """Node order (entities by slot id, then all variable tokens) and the
    (N, L) selection matrix that sums contextual rows into node embeddings."""
    slots = sorted(inp.slot_to_group)
    order = tuple(entity(s) for s in slots) + tuple(variable(i) for i in range(inp.n_vars))
    L = inp.length
    S = np.zeros((len(order), L))
    for r, s in enumerate(slots):
        for gi in slot_group_indices(inp, s):
            S[r, gi] = 1.0
    for i in range(inp.n_vars):
        S[len(slots) + i, inp.var_pos(i)] = 1.0
    return order, S


def _lstm_pass(xs: list[Tensor], w: LstmWeights, dh: int, dtype) -> list[Tensor]:
    B = xs[0].shape[0]
    h = ad.constant(np.zeros((B, dh), dtype=dtype))
    c = ad.constant(np.zeros((B, dh), dtype=dtype))
    out = []
    for x in xs:
        pre = ad.add_bias(ad.add(ad.matmul(x, w.Wx), ad.matmul(h, w.Wh)), w.b)
        i = ad.sigmoid(ad.slice_cols(pre, 0, dh))
        f = ad.sigmoid(ad.slice_cols(pre, dh, 2 * dh))
        g = ad.tanh(ad.slice_cols(pre, 2 * dh, 3 * dh))
        o = ad.sigmoid(ad.slice_cols(pre, 3 * dh, 4 * dh))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        out.append(h)
    return out


def _run_bilstm(xs: list[Tensor], params: EncoderParams, dtype) -> list[Tensor]:
    """Projected per-position vectors for a batch of same-length sequences.
    xs is one (B, d) tensor per position."""
    dh = params.d // 2
    fwd = _lstm_pass(xs, params.fwd, dh, dtype)
    bwd = list(reversed(_lstm_pass(list(reversed(xs)), params.bwd, dh, dtype)))
    out = []
    for f, b in zip(fwd, bwd):
        both = ad.concat([f, b], axis=1)
        out.append(ad.add_bias(ad.matmul(both, params.proj_W), params.proj_b))
    return out


def encode_batch(inputs: list[EncoderInput], params: EncoderParams,
                 vocab: Vocabulary,
                 max_positions: int = DEFAULT_MAX_POSITIONS) -> list[ContextualEncoding]:
    """Encode a batch, bucketing same-length inputs through one recurrent pass."""
    dtype = params.word_emb.data.dtype
    results: list[ContextualEncoding | None] = [None] * len(inputs)
    buckets: dict[int, list[int]] = {}
    for i, inp in enumerate(inputs):
        if inp.length > max_positions:
            raise CapacityError(f"sequence of {inp.length} positions exceeds cap {max_positions}")
        buckets.setdefault(inp.length, []).append(i)

    for L in sorted(buckets):
        idxs = buckets[L]
        all_bags = [position_bags(inputs[i], vocab) for i in idxs]
        xs = [ad.embedding_sum(params.word_emb, [all_bags[b][t] for b in range(len(idxs))])
              for t in range(L)]
        hs = _run_bilstm(xs, params, dtype)
        h_cat = ad.concat(hs, axis=1) if len(hs) > 1 else hs[0]  # (B, L*d)
        for b, i in enumerate(idxs):
            inp = inputs[i]
            H = ad.reshape(ad.take_rows(h_cat, [b]), (L, params.d))
            order, S = node_layout(inp)
            nodes = ad.matmul(ad.constant(S.astype(dtype)), H)
            results[i] = ContextualEncoding(h=H, nodes=nodes, node_order=order,
                                            input=inp, d=params.d)
    return results  # type: ignore[return-value]


def encode(inp: EncoderInput, params: EncoderParams, vocab: Vocabulary,
           max_positions: int = DEFAULT_MAX_POSITIONS) -> ContextualEncoding:
    """Encode a single input; see encode_batch."""
    return encode_batch([inp], params, vocab, max_positions)[0]
