"""Evaluation: exact match under graph isomorphism, edge metrics, ablations.

Exact match treats variable names as meaningless: a prediction counts iff its
canonical graph equals the gold canonical graph and the query kind agrees.
Edge precision/recall compare canonical clause sets and are micro-averaged
over examples; an evaluation with no predicted edges at all reports precision
0 with an explicit flag rather than dropping the number.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field

from .errors import ConfigError
from .graph_decoder import MODES
from .model import Model
from .query_ir import canonical_form, iso_equal
from .trainer import (CompiledExample, TrainConfig, compile_corpus,
                      predict_batch, train)


@dataclass
class EvalReport:
    split: str
    n_examples: int
    exact_match: float
    edge_precision: float
    edge_recall: float
    edge_f1: float
    kind_accuracy: float
    precision_undefined: bool = False
    failures: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def table(self) -> str:
        rows = [("split", self.split),
                ("examples", str(self.n_examples)),
                ("exact_match", f"{self.exact_match:.4f}"),
                ("edge_precision", f"{self.edge_precision:.4f}"
                 + (" (no predicted edges)" if self.precision_undefined else "")),
                ("edge_recall", f"{self.edge_recall:.4f}"),
                ("edge_f1", f"{self.edge_f1:.4f}"),
                ("kind_accuracy", f"{self.kind_accuracy:.4f}")]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def check_compatible(model: Model, pos_lexicon: dict, entity_lexicon: dict) -> None:
    """Refuse evaluation inputs whose lexicons differ from the checkpoint's
    (silent vocabulary drift produces garbage metrics, not errors)."""
    if dict(model.pos_lexicon) != dict(pos_lexicon) \
            or dict(model.entity_lexicon) != dict(entity_lexicon):
        raise ConfigError("config-hash mismatch: evaluation lexicons differ from "
                          "the ones stored in the checkpoint")


def _canonical_clauses(query, relations) -> set[str]:
    body = canonical_form(query, relations)
    return set(body.split(" . ")) if body else set()


def evaluate(model: Model, examples, split: str = "test",
             max_failures: int = 50, batch_size: int = 64) -> EvalReport:
    compiled = compile_corpus(examples, model)
    return evaluate_compiled(model, compiled, split=split,
                             max_failures=max_failures, batch_size=batch_size)


def evaluate_compiled(model: Model, compiled: list[CompiledExample],
                      split: str = "test", max_failures: int = 50,
                      batch_size: int = 64) -> EvalReport:
    hits = kind_hits = 0
    tp = n_pred = n_gold = 0
    failures: list[dict] = []
    for i in range(0, len(compiled), batch_size):
        batch = compiled[i:i + batch_size]
        for comp, (pred, _) in zip(batch, predict_batch(model, batch)):
            ok = iso_equal(pred, comp.gold, model.relations)
            hits += ok
            kind_hits += pred.kind == comp.gold.kind
            pc = _canonical_clauses(pred, model.relations)
            gc = _canonical_clauses(comp.gold, model.relations)
            tp += len(pc & gc)
            n_pred += len(pc)
            n_gold += len(gc)
            if not ok and len(failures) < max_failures:
                from .query_ir import serialize
                failures.append({"question": comp.question,
                                 "gold": serialize(comp.gold, model.relations),
                                 "predicted": serialize(pred, model.relations)})
    n = len(compiled)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gold if n_gold else 0.0
    f1 = (2 * precision * recall / (precision + recall)
          if precision + recall > 0 else 0.0)
    return EvalReport(split=split, n_examples=n,
                      exact_match=hits / n if n else 0.0,
                      edge_precision=precision, edge_recall=recall, edge_f1=f1,
                      kind_accuracy=kind_hits / n if n else 0.0,
                      precision_undefined=n_pred == 0, failures=failures)


def write_failures(path: str, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in report.failures:
            f.write(json.dumps(row) + "\n")


def write_predictions(path: str, model: Model, examples,
                      include_probs: bool = False,
                      include_attention: bool = False,
                      batch_size: int = 64) -> None:
    """Per-example JSONL dump: question, gold and predicted query strings,
    optionally edge probabilities and attention maps."""
    from .query_ir import serialize
    compiled = compile_corpus(examples, model)
    with open(path, "w", encoding="utf-8") as f:
        for i in range(0, len(compiled), batch_size):
            batch = compiled[i:i + batch_size]
            for comp, (pred, scores) in zip(batch, predict_batch(model, batch)):
                row = {"question": comp.question,
                       "gold": serialize(comp.gold, model.relations),
                       "predicted": serialize(pred, model.relations)}
                if include_probs:
                    row["edge_probs"] = scores.probs.round(5).tolist()
                    row["nodes"] = [ref.token() for ref in scores.node_order]
                if include_attention and scores.alpha is not None:
                    row["attention"] = scores.alpha.round(5).tolist()
                f.write(json.dumps(row) + "\n")


def predict_question(model: Model, question: str):
    """Parse one raw question with a trained model; returns (query_string,
    EdgeScores). The question may mention entities by surface form (resolved
    through the checkpoint's entity lexicon) or by M0-style placeholders."""
    from .graph_decoder import (MODE_GROUNDED, classify_kind, decode,
                                score_grounded, score_plain)
    from .query_ir import serialize
    from .text_pipeline import anonymize, degroup, merge_groups
    from . import autodiff as ad
    from .encoder import encode

    anon = anonymize(question, model.entity_lexicon)
    inp = merge_groups(anon, model.pos_lexicon, n_vars=model.config.n_vars)
    if model.config.mode == "plain":
        inp = degroup(inp)
    with ad.no_grad():
        enc = encode(inp, model.encoder, model.word_vocab,
                     model.config.max_positions)
        if model.config.mode == MODE_GROUNDED:
            scores = score_grounded(enc, inp, model.decoder, model.encoder,
                                    model.word_vocab,
                                    model.config.contextual_values)
        else:
            scores = score_plain(enc, model.decoder)
        kind, _ = classify_kind(enc, model.decoder)
        pred = decode(scores, model.relations, threshold=model.config.threshold,
                      kind=kind, allow_self_loops=model.config.allow_self_loops)
    return serialize(pred, model.relations), scores


# ---------------------------------------------------------------------------
# ablation runner
# ---------------------------------------------------------------------------

@dataclass
class AblationResult:
    per_mode: dict[str, list[float]]            # mode -> test EM per seed
    means: dict[str, float]
    stds: dict[str, float]
    ordering_holds: bool                        # grounded >= syntax_aware >= plain
    strict_ordering_holds: bool                 # strict > on the means
    grounded_minus_plain: float

    def table(self) -> str:
        lines = [f"{'mode':<14} {'mean EM':>8} {'std':>8}  seeds"]
        for mode in ("grounded", "syntax_aware", "plain"):
            if mode not in self.per_mode:
                continue
            vals = " ".join(f"{v:.3f}" for v in self.per_mode[mode])
            lines.append(f"{mode:<14} {self.means[mode]:>8.4f} "
                         f"{self.stds[mode]:>8.4f}  [{vals}]")
        lines.append(f"ordering grounded >= syntax_aware >= plain: {self.ordering_holds}")
        lines.append(f"grounded - plain = {self.grounded_minus_plain:+.4f}")
        return "\n".join(lines)

    def to_json(self) -> str:
        return json.dumps({
            "per_mode": self.per_mode, "means": self.means, "stds": self.stds,
            "ordering_holds": self.ordering_holds,
            "strict_ordering_holds": self.strict_ordering_holds,
            "grounded_minus_plain": self.grounded_minus_plain}, indent=2)


def run_ablation(base: TrainConfig, examples, split, seeds,
                 pos_lexicon, entity_lexicon, modes=MODES, log=None) -> AblationResult:
    """Train every mode under the same budget for each seed and compare test
    exact match on the given split."""
    say = log or (lambda *a, **k: None)
    train_ex = [examples[i] for i in split.train]
    test_ex = [examples[i] for i in split.test]
    per_mode: dict[str, list[float]] = {m: [] for m in modes}
    for seed in seeds:
        for mode in modes:
            cfg = TrainConfig(**{**_cfg_dict(base), "mode": mode, "seed": seed})
            say(f"[ablate] mode={mode} seed={seed}")
            result = train(cfg, train_ex, pos_lexicon, entity_lexicon, log=log)
            report = evaluate(result.model, test_ex, split="test")
            say(f"[ablate] mode={mode} seed={seed} test_em={report.exact_match:.4f}")
            per_mode[mode].append(report.exact_match)
    means = {m: statistics.fmean(v) for m, v in per_mode.items()}
    stds = {m: (statistics.pstdev(v) if len(v) > 1 else 0.0)
            for m, v in per_mode.items()}
    ordering = means.get("grounded", 0) >= means.get("syntax_aware", 0) >= means.get("plain", 0)
    strict = means.get("grounded", 0) > means.get("syntax_aware", 0) > means.get("plain", 0)
    return AblationResult(per_mode=per_mode, means=means, stds=stds,
                          ordering_holds=ordering, strict_ordering_holds=strict,
                          grounded_minus_plain=means.get("grounded", 0.0) - means.get("plain", 0.0))


def _cfg_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
