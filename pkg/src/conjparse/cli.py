"""Command-line entry point.

Subcommands: gen-data, split, train, eval, predict, gradcheck, ablate.
Exit codes: 0 ok, 1 usage error, 2 data error, 3 numeric failure.
Config precedence: CLI flag > --config file > built-in default; every run
writes its resolved configuration next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict, fields

from . import dataset as ds
from .errors import (CapacityError, ConfigError, ConjparseError, DataError,
                     NumericError, ParseError, VocabError)
from .evaluator import (check_compatible, evaluate, predict_question,
                        run_ablation, write_failures, write_predictions)
from .graph_decoder import MODES
from .model import load_model
from .text_pipeline import read_lexicon, write_lexicon
from .trainer import TrainConfig, toy_gradcheck, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--d", type=int, default=None, help="latent dimension")
    p.add_argument("--n-vars", type=int, default=None, dest="n_vars")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--em-every", type=int, default=None, dest="em_every")
    p.add_argument("--precision", type=int, choices=(32, 64), default=None)
    p.add_argument("--warmup-epochs", type=int, default=None, dest="warmup_epochs")
    p.add_argument("--dev-tuning", action="store_true", default=None,
                   dest="dev_tuning",
                   help="carve a validation set out of train and stop on its "
                        "exact match (off by default: no held-out signal)")
    p.add_argument("--no-kind-head", action="store_false", default=None,
                   dest="kind_head")
    p.add_argument("--contextual-values", action="store_true", default=None,
                   dest="contextual_values",
                   help="attention values use contextual group vectors instead "
                        "of word-embedding sums")
    p.add_argument("--unk-words", action="store_true", default=None,
                   dest="unk_words",
                   help="map out-of-vocabulary question tokens to [UNK]")
    p.add_argument("--config", default=None,
                   help="JSON file with config fields (CLI flags win)")


def _resolve_train_config(args) -> TrainConfig:
    file_cfg = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            file_cfg = json.load(f)
        unknown = set(file_cfg) - {f.name for f in fields(TrainConfig)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    values = {}
    for f in fields(TrainConfig):
        cli_val = getattr(args, f.name, None)
        if cli_val is not None:
            values[f.name] = cli_val
        elif f.name in file_cfg:
            values[f.name] = file_cfg[f.name]
    return TrainConfig(**values)


def _load_corpus(args):
    if args.format == "cfq":
        examples, skipped = ds.load_cfq(args.data,
                                        question_field=args.question_field,
                                        query_field=args.query_field,
                                        strict=args.strict)
        if skipped:
            total = sum(skipped.values())
            print(f"skipped {total} out-of-fragment examples: "
                  + ", ".join(f"{k}={v}" for k, v in sorted(skipped.items())),
                  file=sys.stderr)
        return examples
    return ds.load_examples(args.data)


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="corpus JSONL")
    p.add_argument("--format", choices=("jsonl", "cfq"), default="jsonl")
    p.add_argument("--question-field", default="question", dest="question_field")
    p.add_argument("--query-field", default="query", dest="query_field")
    p.add_argument("--strict", action="store_true",
                   help="hard-fail on out-of-fragment queries (cfq format)")
    p.add_argument("--pos-lexicon", default=None, dest="pos_lexicon",
                   help="token<TAB>tag file; default: pos_lexicon.tsv next to --data")
    p.add_argument("--entity-lexicon", default=None, dest="entity_lexicon",
                   help="surface<TAB>id file; default: entity_lexicon.tsv next to --data")


def _load_lexicons(args):
    base = os.path.dirname(os.path.abspath(args.data))
    pos_path = args.pos_lexicon or os.path.join(base, "pos_lexicon.tsv")
    ent_path = args.entity_lexicon or os.path.join(base, "entity_lexicon.tsv")
    pos = read_lexicon(pos_path) if os.path.exists(pos_path) else {}
    ent = read_lexicon(ent_path) if os.path.exists(ent_path) else {}
    return pos, ent


def _split_examples(examples, split_path):
    spec = ds.SplitSpec.load(split_path)
    bad = [i for i in spec.train + spec.test if i >= len(examples)]
    if bad:
        raise DataError(f"split references example index {bad[0]} but corpus has "
                        f"{len(examples)} examples")
    return spec, [examples[i] for i in spec.train], [examples[i] for i in spec.test]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    grammar = ds.DEFAULT_GRAMMAR
    if args.grammar:
        with open(args.grammar, encoding="utf-8") as f:
            grammar = ds.grammar_from_json(json.load(f))
    examples = ds.generate(grammar, args.n, args.seed)
    os.makedirs(args.out, exist_ok=True)
    ds.save_examples(os.path.join(args.out, "corpus.jsonl"), examples)
    write_lexicon(os.path.join(args.out, "pos_lexicon.tsv"), grammar.pos_lexicon())
    write_lexicon(os.path.join(args.out, "entity_lexicon.tsv"), grammar.entity_lexicon())
    _write_json(os.path.join(args.out, "gen_config.json"),
                {"n": args.n, "seed": args.seed,
                 "grammar": args.grammar or "default",
                 "templates": grammar.template_ids()})
    print(f"wrote {len(examples)} examples to {args.out}/corpus.jsonl")
    return EXIT_OK


def cmd_split(args) -> int:
    examples = ds.load_examples(args.data)
    if args.method == "mcd":
        spec = ds.mcd_split(examples, target_atom_div=args.atom_max,
                            seed=args.seed, swap_budget=args.swap_budget,
                            test_frac=args.test_frac)
    else:
        spec = ds.random_split(examples, test_frac=args.test_frac, seed=args.seed)
    spec.save(args.out)
    _write_json(args.out + ".config.json",
                {"method": args.method, "seed": args.seed,
                 "test_frac": args.test_frac, "atom_max": args.atom_max,
                 "swap_budget": args.swap_budget, "data": args.data})
    print(f"{args.method} split: train={len(spec.train)} test={len(spec.test)} "
          f"atom_div={spec.atom_divergence:.4f} compound_div={spec.compound_divergence:.4f}")
    if spec.warning:
        print(f"warning: {spec.warning}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _resolve_train_config(args)
    examples = _load_corpus(args)
    pos_lex, ent_lex = _load_lexicons(args)
    if args.split:
        _, train_ex, _ = _split_examples(examples, args.split)
    else:
        train_ex = examples
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config.json"), asdict(cfg))
    result = train(cfg, train_ex, pos_lex, ent_lex, out_dir=args.out,
                   log=print, resume_from=args.resume)
    print(f"finished at epoch {result.stopped_epoch}; "
          f"checkpoint: {os.path.join(args.out, 'best.ckpt')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, manifest, _ = load_model(args.ckpt)
    examples = _load_corpus(args)
    pos_lex, ent_lex = _load_lexicons(args)
    check_compatible(model, pos_lex, ent_lex)
    if args.split:
        _, train_ex, test_ex = _split_examples(examples, args.split)
        chosen = test_ex if args.which == "test" else train_ex
    else:
        chosen = examples
    report = evaluate(model, chosen, split=args.which)
    print(report.table())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(report.to_json() + "\n")
    if args.failures:
        write_failures(args.failures, report)
    if args.dump:
        write_predictions(args.dump, model, chosen,
                          include_probs=args.probs,
                          include_attention=args.attention)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, _, _ = load_model(args.ckpt)
    query, scores = predict_question(model, args.question)
    print(query)
    if args.probs:
        print(json.dumps({"nodes": [r.token() for r in scores.node_order],
                          "edge_probs": scores.probs.round(5).tolist()}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    modes = MODES if args.mode == "all" else (args.mode,)
    ok = True
    for mode in modes:
        report = toy_gradcheck(mode, d=args.d, seed=args.seed,
                               epsilon=args.eps, tolerance=args.tol)
        print(f"mode={mode}: {report.summary()}")
        ok = ok and report.passed
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    cfg = _resolve_train_config(args)
    examples = _load_corpus(args)
    pos_lex, ent_lex = _load_lexicons(args)
    spec, _, _ = _split_examples(examples, args.split)
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "ablate_config.json"),
                {**asdict(cfg), "seeds": seeds, "split": args.split})
    result = run_ablation(cfg, examples, spec, seeds, pos_lex, ent_lex,
                          log=print if args.verbose else None)
    print(result.table())
    with open(os.path.join(args.out, "ablation.json"), "w", encoding="utf-8") as f:
        f.write(result.to_json() + "\n")
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="conjparse",
                description="Question-to-conjunctive-query parsing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus + lexicons")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--grammar", default=None, help="grammar JSON (default built-in)")
    g.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("split", help="compute an MCD or random split")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="split JSON path")
    s.add_argument("--method", choices=("mcd", "random"), default="mcd")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-frac", type=float, default=0.2, dest="test_frac")
    s.add_argument("--atom-max", type=float, default=0.02, dest="atom_max")
    s.add_argument("--swap-budget", type=int, default=50_000, dest="swap_budget")
    s.set_defaults(fn=cmd_split)

    t = sub.add_parser("train", help="train a model")
    _add_corpus_flags(t)
    t.add_argument("--split", default=None, help="split JSON (train side used)")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--resume", default=None, help="resume from last.ckpt")
    _add_train_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    _add_corpus_flags(e)
    e.add_argument("--split", default=None)
    e.add_argument("--which", choices=("train", "test"), default="test")
    e.add_argument("--out", default=None, help="report JSON path")
    e.add_argument("--failures", default=None, help="failure JSONL path")
    e.add_argument("--dump", default=None, help="prediction JSONL path")
    e.add_argument("--probs", action="store_true")
    e.add_argument("--attention", action="store_true")
    e.set_defaults(fn=cmd_eval)

    pr = sub.add_parser("predict", help="parse one question with a checkpoint")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--question", required=True)
    pr.add_argument("--probs", action="store_true")
    pr.set_defaults(fn=cmd_predict)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--d", type=int, default=8)
    gc.add_argument("--mode", choices=MODES + ("all",), default="all")
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(fn=cmd_gradcheck)

    a = sub.add_parser("ablate", help="train and compare all modes")
    _add_corpus_flags(a)
    a.add_argument("--split", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--verbose", action="store_true")
    _add_train_flags(a)
    a.set_defaults(fn=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, ParseError, ConfigError, VocabError, CapacityError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ConjparseError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
