"""Training loop: joint log-likelihood over full edge grids, Adam updates.

The loss for one example enumerates every ordered candidate-node pair times
every relation as an independent Bernoulli: gold edges contribute -log P and
everything else -log(1 - P). No negative sampling; the grid is small (at most
entities + n_vars nodes). Gradients are summed (not averaged) within a batch.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import build_word_vocab, encode_batch, node_layout
from .errors import ConfigError, DataError, NumericError
from .graph_decoder import (MODE_GROUNDED, MODE_PLAIN, edge_logits_plain,
                            gold_targets, grounded_parts, kind_logit,
                            classify_kind, decode, score_grounded, score_plain)
from .model import Model, ModelConfig, init_model, load_model, save_model
from .query_ir import ASK, ConjunctiveQuery, iso_equal, parse_query
from .text_pipeline import EncoderInput, anonymize, degroup, merge_groups
from .vocab import Vocabulary


@dataclass
class TrainConfig(ModelConfig):
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    patience: int = 20
    min_delta: float = 1e-4        # relative loss improvement that resets patience
    warmup_epochs: int = 0         # linear lr warmup, off by default
    em_every: int = 5              # epochs between exact-match evaluations
    dev_tuning: bool = False
    val_fraction: float = 0.1      # used only when dev_tuning carves a val set
    stop_at_train_em: float | None = None

    def model_config(self) -> ModelConfig:
        names = ModelConfig.__dataclass_fields__
        return ModelConfig(**{k: v for k, v in asdict(self).items() if k in names})


@dataclass
class CompiledExample:
    question: str
    input: EncoderInput
    gold: ConjunctiveQuery
    targets: np.ndarray      # (P, R)
    kind_target: float       # 1.0 for ASK


def compile_example(question: str, query_text: str, model: Model,
                    label: str = "?") -> CompiledExample:
    cfg = model.config
    anon = anonymize(question, model.entity_lexicon)
    inp = merge_groups(anon, model.pos_lexicon, n_vars=cfg.n_vars)
    if cfg.mode == MODE_PLAIN:
        inp = degroup(inp)
    gold = parse_query(query_text, model.relations,
                       allow_self_loops=cfg.allow_self_loops)
    n_gold_vars = len(gold.variables())
    if n_gold_vars > cfg.n_vars:
        raise DataError(f"example {label}: gold query uses {n_gold_vars} variables, "
                        f"budget is {cfg.n_vars}")
    order, _ = node_layout(inp)
    targets = gold_targets(gold, order, len(model.relations))
    return CompiledExample(question=question, input=inp, gold=gold,
                           targets=targets,
                           kind_target=1.0 if gold.kind == ASK else 0.0)


def compile_corpus(examples, model: Model) -> list[CompiledExample]:
    return [compile_example(ex.question, ex.query, model, label=str(i))
            for i, ex in enumerate(examples)]


def example_logits(model: Model, comp: CompiledExample, enc) -> Tensor:
    if model.config.mode == MODE_GROUNDED:
        logits, _ = grounded_parts(enc, comp.input, model.decoder, model.encoder,
                                   model.word_vocab,
                                   model.config.contextual_values)
        return logits
    return edge_logits_plain(enc, model.decoder)


def batch_loss(model: Model, batch: list[CompiledExample],
               include_kind: bool = True) -> Tensor:
    """Summed negative joint log-likelihood of a batch (plus the kind-head
    cross-entropy when the head is enabled)."""
    encs = encode_batch([c.input for c in batch], model.encoder,
                        model.word_vocab, model.config.max_positions)
    per_example = []
    for comp, enc in zip(batch, encs):
        loss = ad.bce_with_logits(example_logits(model, comp, enc), comp.targets)
        if include_kind and model.decoder.kind_w is not None:
            loss = ad.add(loss, ad.bce_with_logits(
                kind_logit(enc, model.decoder), np.full((1, 1), comp.kind_target)))
        per_example.append(loss)
    return ad.add_n(per_example) if len(per_example) > 1 else per_example[0]


def predict_batch(model: Model, batch: list[CompiledExample]):
    """Decoded queries (and raw scores) for a batch, without building a tape."""
    out = []
    with ad.no_grad():
        encs = encode_batch([c.input for c in batch], model.encoder,
                            model.word_vocab, model.config.max_positions)
        for comp, enc in zip(batch, encs):
            if model.config.mode == MODE_GROUNDED:
                scores = score_grounded(enc, comp.input, model.decoder,
                                        model.encoder, model.word_vocab,
                                        model.config.contextual_values)
            else:
                scores = score_plain(enc, model.decoder)
            kind, _ = classify_kind(enc, model.decoder)
            pred = decode(scores, model.relations,
                          threshold=model.config.threshold, kind=kind,
                          allow_self_loops=model.config.allow_self_loops)
            out.append((pred, scores))
    return out


def exact_match(model: Model, compiled: list[CompiledExample],
                batch_size: int = 64) -> float:
    if not compiled:
        return 0.0
    hits = 0
    for i in range(0, len(compiled), batch_size):
        batch = compiled[i:i + batch_size]
        for comp, (pred, _) in zip(batch, predict_batch(model, batch)):
            if iso_equal(pred, comp.gold, model.relations):
                hits += 1
    return hits / len(compiled)


class Adam:
    """Adam with bias correction; beta=(0.9, 0.999), eps=1e-8, no weight decay."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr_scale: float = 1.0) -> None:
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad
            self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * (g * g)
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            p.data -= (self.lr * lr_scale) * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for name, p in self.params.items():
            self.m[name] = np.ascontiguousarray(arrays[f"adam.m.{name}"],
                                                dtype=p.data.dtype)
            self.v[name] = np.ascontiguousarray(arrays[f"adam.v.{name}"],
                                                dtype=p.data.dtype)


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)
    best_metric: float = float("inf")
    stopped_epoch: int = 0
    param_count: int = 0


def _param_norms(model: Model) -> str:
    return ", ".join(f"{k}={float(np.linalg.norm(p.data)):.3g}"
                     for k, p in sorted(model.params().items()))


def build_vocabs(examples, entity_lexicon, unk: bool = False):
    """Word vocabulary over anonymized question tokens and relation vocabulary
    over query relation tokens, both from the given (training) examples."""
    anon_tokens = [anonymize(ex.question, entity_lexicon).tokens for ex in examples]
    words = build_word_vocab(anon_tokens, unk=unk)
    rel_tokens = set()
    for ex in examples:
        rel_tokens.update(relation_tokens(ex.query))
    relations = Vocabulary(sorted(rel_tokens))
    return words, relations


def relation_tokens(query_text: str) -> list[str]:
    """Relation tokens of a query string, without needing a vocabulary."""
    toks = query_text.split()
    try:
        lo = toks.index("{") + 1
        hi = toks.index("}")
    except ValueError:
        raise DataError(f"query without braces: {query_text!r}") from None
    body = toks[lo:hi]
    rels = []
    for k in range(1, len(body), 4):  # term rel term ('.' term rel term)*
        rels.append(body[k])
    return rels


def train(cfg: TrainConfig, train_examples, pos_lexicon, entity_lexicon,
          val_examples=None, out_dir: str | None = None, log=None,
          resume_from: str | None = None) -> TrainResult:
    """Train a model from scratch (or resume) on the given examples.

    Without dev tuning the trainer must not receive any held-out signal:
    passing val_examples then is a configuration error, and early stopping
    watches the training loss plateau instead.
    """
    say = log or (lambda *a, **k: None)
    if val_examples is not None and not cfg.dev_tuning:
        raise ConfigError("validation examples supplied but dev_tuning is off; "
                          "refusing test-side signal")
    train_examples = list(train_examples)
    vocab_examples = train_examples
    if cfg.dev_tuning and val_examples is None:
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 102)))
        order = rng.permutation(len(train_examples))
        n_val = max(1, int(len(train_examples) * cfg.val_fraction))
        val_examples = [train_examples[i] for i in order[:n_val]]
        train_examples = [train_examples[i] for i in order[n_val:]]
        # the carved validation set is still training-side data: keep its
        # tokens in the closed vocabulary
        vocab_examples = train_examples + val_examples

    if resume_from:
        model, manifest, extra = load_model(resume_from)
        state = manifest["train_state"]
        start_epoch = state["epoch"]
        best = state["best_metric"]
    else:
        words, relations = build_vocabs(vocab_examples, entity_lexicon, unk=cfg.unk_words)
        model = init_model(cfg.model_config(), words, relations, cfg.seed,
                           pos_lexicon=pos_lexicon, entity_lexicon=entity_lexicon)
        start_epoch, best, extra, state = 0, float("inf"), {}, None

    compiled = compile_corpus(train_examples, model)
    compiled_val = compile_corpus(val_examples, model) if val_examples else None

    params = model.params()
    adam = Adam(params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 101)))
    if state is not None:
        adam.load_state_arrays(extra, state["t"])
        shuffle_rng.bit_generator.state = state["rng_state"]

    n_params = model.param_count()
    say(f"training mode={cfg.mode} d={cfg.d} examples={len(compiled)} "
        f"parameters={n_params}")

    warmup_steps = cfg.warmup_epochs * max(1, len(compiled) // cfg.batch_size)
    result = TrainResult(model=model, best_metric=best, param_count=n_params)
    best_params = {k: p.data.copy() for k, p in params.items()}
    patience_left = cfg.patience
    history = result.history

    for epoch in range(start_epoch, cfg.epochs):
        t0 = time.time()
        order = shuffle_rng.permutation(len(compiled))
        total = 0.0
        for b0 in range(0, len(order), cfg.batch_size):
            batch = [compiled[i] for i in order[b0:b0 + cfg.batch_size]]
            ad.zero_grads(params)
            loss = batch_loss(model, batch)
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b0 // cfg.batch_size}: "
                    f"lr={cfg.lr}, norms: {_param_norms(model)}")
            ad.backward(loss)
            scale = min(1.0, (adam.t + 1) / warmup_steps) if warmup_steps else 1.0
            adam.step(lr_scale=scale)
            total += lv
        mean_loss = total / len(compiled)

        run_em = (cfg.em_every > 0 and (epoch % cfg.em_every == cfg.em_every - 1
                                        or epoch == cfg.epochs - 1))
        train_em = exact_match(model, compiled) if run_em else None
        row = {"epoch": epoch, "split": "train", "loss": mean_loss,
               "exact_match": train_em, "edge_precision": None, "edge_recall": None}
        history.append(row)
        msg = f"epoch {epoch:4d} loss {mean_loss:.5f}"
        if train_em is not None:
            msg += f" train_em {train_em:.3f}"

        if compiled_val is not None and run_em:
            val_em = exact_match(model, compiled_val)
            history.append({"epoch": epoch, "split": "val", "loss": None,
                            "exact_match": val_em, "edge_precision": None,
                            "edge_recall": None})
            msg += f" val_em {val_em:.3f}"
            metric = -val_em  # lower is better
        else:
            metric = mean_loss if not cfg.dev_tuning else None
        say(msg + f" ({time.time() - t0:.1f}s)")

        if metric is not None:
            margin = (abs(result.best_metric) * cfg.min_delta
                      if np.isfinite(result.best_metric) else 0.0)
            improved = metric < result.best_metric - margin
            if improved:
                result.best_metric = metric
                best_params = {k: p.data.copy() for k, p in params.items()}
                patience_left = cfg.patience
            else:
                patience_left -= 1
        result.stopped_epoch = epoch

        if out_dir:
            _save_train_state(os.path.join(out_dir, "last.ckpt"), model, adam,
                              epoch + 1, result.best_metric, shuffle_rng)
        if cfg.stop_at_train_em is not None and train_em is not None \
                and train_em >= cfg.stop_at_train_em:
            say(f"reached train exact match {train_em:.3f}, stopping")
            break
        if patience_left <= 0:
            say(f"no improvement for {cfg.patience} epochs, stopping")
            break

    for k, p in params.items():
        p.data = best_params[k]

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_model(os.path.join(out_dir, "best.ckpt"), model,
                   extra_manifest={"train_config": asdict(cfg)})
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), history)
    return result


def _save_train_state(path: str, model: Model, adam: Adam, epoch: int,
                      best_metric: float, shuffle_rng) -> None:
    state = {"epoch": epoch, "t": adam.t, "best_metric": best_metric,
             "rng_state": shuffle_rng.bit_generator.state}
    save_model(path, model, extra_manifest={"train_state": state},
               extra_arrays=adam.state_arrays())


def toy_gradcheck(mode: str, d: int = 8, seed: int = 0, epsilon: float = 1e-5,
                  tolerance: float = 1e-4) -> ad.GradCheckReport:
    """Gradient check of the full model loss on a fixed tiny instance:
    two relations, a three-group question, 64-bit parameters."""
    from .dataset import Example
    examples = [
        Example("who directed and produced M0", "SELECT x0 WHERE { x0 direct M0 . x0 produce M0 }"),
        Example("who produced M0", "SELECT x0 WHERE { x0 produce M0 }"),
    ]
    pos_lexicon = {"directed": "VERB", "produced": "VERB"}
    cfg = ModelConfig(mode=mode, d=d, n_vars=2, precision=64)
    words, relations = build_vocabs(examples, {})
    model = init_model(cfg, words, relations, seed, pos_lexicon=pos_lexicon)
    compiled = compile_corpus(examples, model)

    def loss_fn():
        return batch_loss(model, compiled)

    return ad.grad_check(loss_fn, model.params(), epsilon=epsilon,
                         tolerance=tolerance)


def write_metrics_csv(path: str, history: list[dict]) -> None:
    cols = ["epoch", "split", "loss", "exact_match", "edge_precision", "edge_recall"]
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for row in history:
            w.writerow({c: ("" if row.get(c) is None else row.get(c)) for c in cols})
