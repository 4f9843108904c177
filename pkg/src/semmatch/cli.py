"""Command-line entry point wiring the full pipeline."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import evaluation, index as index_mod, sharding, synth, training
from .config import RunConfig, load_run_config
from .model import load_model, save_model
from .tokenizer import build_vocabulary, load_vocabulary, save_vocabulary


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _log_config(cfg: RunConfig) -> None:
    for line in cfg.resolved_lines():
        _log(f"config: {line}")


def _load_cfg(path: str) -> RunConfig:
    cfg = load_run_config(path)
    _log_config(cfg)
    return cfg


def _cmd_gen_synthetic(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    paths = synth.gen_synthetic(cfg.synth, args.out)
    for name, path in paths.items():
        _log(f"wrote {name}: {path}")
    return 0


def _corpus_from_logs(records: list[synth.LogRecord]):
    for rec in records:
        yield ("query", rec.query)
        yield ("product", rec.product_text)


def _cmd_build_vocab(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    with open(args.input) as f:
        records, stats = synth.parse_log(f)
    _log(f"parsed {stats.parsed} log rows ({stats.malformed} malformed)")
    vocab = build_vocabulary(_corpus_from_logs(records), cfg.tokenizer)
    if vocab.derived_query_max is not None:
        _log(f"derived query_max_tokens = {vocab.derived_query_max}")
    if vocab.derived_product_max is not None:
        _log(f"derived product_max_tokens = {vocab.derived_product_max}")
    with open(args.out, "w") as f:
        save_vocabulary(vocab, f)
    _log(f"vocabulary: V={vocab.v} B={vocab.oov_bins}")
    return 0


def _cmd_preprocess(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    with open(args.vocab) as f:
        vocab = load_vocabulary(f)
    with open(args.input) as f:
        records, stats = synth.parse_log(f)
    _log(f"parsed {stats.parsed} log rows ({stats.malformed} malformed)")
    counts = training.preprocess_logs(records, vocab, cfg.tokenizer, args.out)
    _log(f"records: {counts}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    with open(args.vocab) as f:
        vocab = load_vocabulary(f)
    _, _, records = training.read_records(args.records)
    rng = np.random.default_rng(cfg.seed)
    model = training.init_model(vocab.v, vocab.oov_bins, cfg.model, rng)
    history = training.train(records, model, cfg.loss, cfg.train)
    for epoch, loss in enumerate(history.epoch_loss):
        _log(f"epoch {epoch}: mean loss {loss:.6f}")
    with open(args.out, "wb") as f:
        save_model(model, f)
    _log(f"checkpoint written: {args.out}")
    return 0


def _cmd_embed_products(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    with open(args.vocab) as f:
        vocab = load_vocabulary(f)
    with open(args.model, "rb") as f:
        model = load_model(f)
    with open(args.catalog) as f:
        catalog = synth.read_catalog(f)
    idx = index_mod.build_index(catalog, model, vocab, cfg.tokenizer)
    with open(args.out, "wb") as f:
        index_mod.save_index(idx, f)
    _log(f"indexed {len(idx.ids)} products")
    return 0


def _cmd_query(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config)
    with open(args.vocab) as f:
        vocab = load_vocabulary(f)
    with open(args.model, "rb") as f:
        model = load_model(f)
    with open(args.index, "rb") as f:
        idx = index_mod.load_index(f)
    result = index_mod.top_k(
        args.text, idx, model, vocab, cfg.tokenizer, args.k, args.threshold
    )
    for pid, score in result.items:
        print(f"{pid}\t{score:.6f}")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    import os

    cfg = _load_cfg(args.config)
    with open(args.vocab) as f:
        vocab = load_vocabulary(f)
    with open(args.model, "rb") as f:
        model = load_model(f)
    with open(os.path.join(args.data, "catalog.tsv")) as f:
        catalog = synth.read_catalog(f)
    logs_path = os.path.join(args.data, "eval_logs.tsv")
    if not os.path.exists(logs_path):
        logs_path = os.path.join(args.data, "logs.tsv")
    with open(logs_path) as f:
        records, _ = synth.parse_log(f)
    queries = evaluation.load_eval_queries(records)
    k = args.k if args.k is not None else cfg.eval_k

    reports = []
    if args.task in ("matching", "both"):
        idx = index_mod.build_index(catalog, model, vocab, cfg.tokenizer)
        reports.append(
            evaluation.run_matching_eval(queries, idx, model, vocab, cfg.tokenizer, k=k)
        )
    if args.task in ("ranking", "both"):
        texts = dict(catalog)
        reports.append(
            evaluation.run_ranking_eval(queries, texts, model, vocab, cfg.tokenizer)
        )
    print(evaluation.format_report(reports))
    if args.out:
        evaluation.write_metrics_file(args.out, reports)
        _log(f"metrics written: {args.out}")
    return 0


def _cmd_shard_check(args: argparse.Namespace) -> int:
    from .model import ModelConfig, NormState, EmbeddingModel, forward_batch

    rng = np.random.default_rng(args.seed)
    v = 200
    cfg = ModelConfig(embedding_dim=args.dim, shared_embeddings=True, normalization="none")
    matrix = training.xavier_init(v + 1, args.dim, rng)
    model = EmbeddingModel(
        cfg, matrix, matrix, NormState.fresh(args.dim), NormState.fresh(args.dim), v, 0
    )
    q_ids = rng.integers(1, v + 1, size=(args.pairs, 8))
    p_ids = rng.integers(1, v + 1, size=(args.pairs, 12))
    direct, _ = forward_batch(q_ids, p_ids, model, "infer")
    plan = sharding.ShardPlan(n=args.n, k=args.dim)
    sharded, ledger = sharding.simulate(plan, q_ids, p_ids, model)
    dev = float(np.max(np.abs(sharded - direct)))
    print(f"max |sharded - direct| = {dev:.3e}")
    print(
        f"pairs = {ledger.pairs}, input broadcasts = {ledger.input_broadcasts}, "
        f"scalars returned = {ledger.scalars_returned} "
        f"({ledger.scalars_per_pair():.1f} per pair, contract 3n = {3 * args.n})"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semmatch",
        description="Siamese bag-of-ngrams semantic product search pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("build-vocab", help="build the token vocabulary from logs")
    p.add_argument("--input", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_build_vocab)

    p = sub.add_parser("preprocess", help="encode logs into a binary record file")
    p.add_argument("--input", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train the embedding model")
    p.add_argument("--records", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("embed-products", help="precompute the product index")
    p.add_argument("--catalog", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_embed_products)

    p = sub.add_parser("query", help="retrieve top-k products for a query")
    p.add_argument("--text", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--threshold", type=float, default=0.55)
    p.set_defaults(func=_cmd_query)

    p = sub.add_parser("evaluate", help="run matching/ranking evaluation")
    p.add_argument("--task", choices=["matching", "ranking", "both"], required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("shard-check", help="verify the sharded cosine decomposition")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--pairs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_shard_check)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
