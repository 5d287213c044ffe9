"""Command-line pipeline: prepare, synth, train, eval, retrieve, sweep.

Exit codes: 0 on success, 1 on domain errors (bad data, mismatched
checkpoints, divergence), 2 on usage errors.

Training options resolve in three layers: built-in defaults, then a
``key = value`` config file (--config), then explicit command-line flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import statistics
import sys
from pathlib import Path

from . import data
from .checkpoint import load_checkpoint, model_from_checkpoint, save_checkpoint
from .evaluation import (ModelRetriever, evaluate_checkpoint, evaluate_split,
                         format_report, most_popular_baseline, write_report)
from .losses import VARIANTS, TrainConfig, ablation_variant
from .training import format_training_log, train

_SWEEP_PARAMS = {"tau": ("tau", float),
                 "layers": ("n_layers", int),
                 "interests": ("n_interests", int)}


def _parse_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key] = value
    return values


def _coerce(field: dataclasses.Field, raw: str):
    if field.name == "max_samples_per_user":
        return None if raw.lower() == "none" else int(raw)
    if field.type == "int":
        return int(raw)
    if field.type == "float":
        return float(raw)
    return raw


def resolve_train_config(args: argparse.Namespace) -> TrainConfig:
    """defaults < config file < explicit flags; unknown file keys rejected."""
    config = TrainConfig()
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    if getattr(args, "config", None):
        file_values = _parse_config_file(args.config)
        unknown = set(file_values) - set(fields)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        config = dataclasses.replace(config, **{
            k: _coerce(fields[k], v) for k, v in file_values.items()})
    overrides = {name: getattr(args, name) for name in fields
                 if getattr(args, name, None) is not None}
    config = dataclasses.replace(config, **overrides)
    return ablation_variant(config, config.variant)


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--dim", type=int, help="embedding dimension (default 128)")
    parser.add_argument("--max-len", type=int, dest="max_len",
                        help="prefix length (default 20)")
    parser.add_argument("--layers", type=int, dest="n_layers",
                        help="residual encoder depth (default 2)")
    parser.add_argument("--interests", type=int, dest="n_interests",
                        help="interest prototype count (default 4)")
    parser.add_argument("--tau", type=float, help="fusion temperature (default 0.1)")
    parser.add_argument("--alpha-reg", type=float, dest="alpha_reg",
                        help="prototype penalty weight (default 0.1)")
    parser.add_argument("--beta-cl", type=float, dest="beta_cl",
                        help="contrastive loss weight (default 0.4)")
    parser.add_argument("--negatives", type=int, dest="n_negatives",
                        help="sampled-softmax negatives (default 10)")
    parser.add_argument("--batch-size", type=int, dest="batch_size")
    parser.add_argument("--learning-rate", type=float, dest="learning_rate")
    parser.add_argument("--patience", type=int, dest="patience_epochs",
                        help="early-stop patience in epochs (default 20)")
    parser.add_argument("--max-epochs", type=int, dest="max_epochs")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--variant", choices=VARIANTS)
    parser.add_argument("--max-samples-per-user", type=int,
                        dest="max_samples_per_user",
                        help="cap per-user sample expansion, most recent kept")


def _print_corpus_stats(corpus: data.Corpus) -> None:
    n_inter = corpus.interaction_count
    print(f"users\t{corpus.catalog.user_count}")
    print(f"items\t{corpus.catalog.item_count}")
    print(f"interactions\t{n_inter}")
    print(f"avg_length\t{n_inter / corpus.catalog.user_count:.3f}")


def cmd_prepare(args: argparse.Namespace) -> int:
    interactions = data.load_interactions(args.input)
    catalog, sequences = data.build_corpus(interactions, args.min_feedback)
    split = data.split_users(catalog, args.seed)
    corpus = data.Corpus(catalog, sequences, split)
    data.save_corpus(corpus, args.output)
    _print_corpus_stats(corpus)
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    config = data.SynthConfig(n_users=args.users, n_items=args.items,
                              n_clusters=args.clusters, min_len=args.min_len,
                              max_len=args.max_len, seed=args.seed)
    catalog, sequences = data.generate_synthetic(config)
    split = data.split_users(catalog, args.seed)
    corpus = data.Corpus(catalog, sequences, split)
    data.save_corpus(corpus, args.output)
    _print_corpus_stats(corpus)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    corpus = data.load_corpus(args.corpus)
    config = resolve_train_config(args)
    result = train(corpus, config)
    save_checkpoint(args.output, result.best)
    save_checkpoint(str(args.output) + ".final", result.final)
    log_text = format_training_log(result.log)
    if args.log:
        Path(args.log).write_text(log_text, encoding="utf-8")
    print(log_text, end="")
    print(f"best_epoch\t{result.best_epoch}")
    print(f"best_valid_recall@50\t{result.best_valid_recall:.6f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    corpus = data.load_corpus(args.corpus)
    if args.most_popular:
        retriever = most_popular_baseline(corpus)
        report = evaluate_split(retriever, corpus, args.split, args.topn, args.mode)
    else:
        report = evaluate_checkpoint(args.checkpoint, corpus, args.split,
                                     args.topn, args.mode)
    if args.report:
        write_report(report, args.report)
    print(format_report(report), end="")
    return 0


def cmd_retrieve(args: argparse.Namespace) -> int:
    corpus = data.load_corpus(args.corpus)
    report_hash = data.catalog_fingerprint(corpus.catalog)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.catalog_hash != report_hash:
        raise ValueError("checkpoint catalog hash does not match this corpus")
    model = model_from_checkpoint(ckpt)
    retriever = ModelRetriever(model, ckpt.config.variant)

    history = []
    for raw_id in args.items.split(","):
        raw_id = raw_id.strip()
        if raw_id not in corpus.catalog.item_index:
            raise ValueError(f"unknown item id {raw_id!r}")
        history.append(corpus.catalog.item_index[raw_id])
    ranked = retriever(history, set(history), args.topn)
    scores = retriever.score_catalog(history)
    if len(ranked) < args.topn:
        print(f"note: only {len(ranked)} candidates available", file=sys.stderr)
    for rank, item in enumerate(ranked, 1):
        print(f"{rank}\t{corpus.catalog.item_ids[item]}\t{scores[item]:.6f}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    corpus = data.load_corpus(args.corpus)
    base = resolve_train_config(args)
    field, cast = _SWEEP_PARAMS[args.param]
    values = [cast(v) for v in args.values.split(",")]
    seeds = [int(s) for s in args.seeds.split(",")]
    lines = ["param\tvalue\tseeds\tvalid_recall@50"]
    for value in values:
        recalls = []
        for seed in seeds:
            config = dataclasses.replace(base, seed=seed, **{field: value})
            recalls.append(train(corpus, config).best_valid_recall)
        lines.append(f"{args.param}\t{value}\t{len(seeds)}"
                     f"\t{statistics.mean(recalls):.6f}")
    table = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(table, encoding="utf-8")
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seqmatch",
        description="Sequential matching-stage recommender toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter a raw interaction log into a corpus dir")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--min-feedback", type=int, default=3, dest="min_feedback")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("synth", help="generate a cluster-structured synthetic corpus")
    p.add_argument("--output", required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=200)
    p.add_argument("--clusters", type=int, default=4)
    p.add_argument("--min-len", type=int, default=10, dest="min_len")
    p.add_argument("--max-len", type=int, default=30, dest="max_len")
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a prepared corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True, help="best-checkpoint path; the "
                   "final epoch is written alongside with a .final suffix")
    p.add_argument("--log", help="write the per-epoch training log here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or the popularity baseline")
    p.add_argument("--corpus", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint")
    group.add_argument("--most-popular", action="store_true")
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--mode", choices=("standard", "novelty"), default="standard")
    p.add_argument("--topn", type=int, default=50)
    p.add_argument("--report", help="write the report table here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="rank items for an ad-hoc item history")
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--items", required=True,
                   help="comma-separated raw item ids, oldest first")
    p.add_argument("--topn", type=int, default=50)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("sweep", help="train across one hyperparameter's values")
    p.add_argument("--corpus", required=True)
    p.add_argument("--param", choices=sorted(_SWEEP_PARAMS), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--report", help="write the sweep table here")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
