"""Command-line pipelines: build-corpus, train-cf, train, evaluate, export.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import checkpoint as ckpt
from . import corpus as cp
from . import trainer as tr
from .collab import CfEmbeddings, CfTrainConfig, train_cf
from .config import ConfigError, load_config
from .evaluate import evaluate_model
from .fusion import export_projected
from .lm import LmConfig
from .numerics import ContractError, NumericError


class UsageError(ValueError):
    pass


def _split_spec(cfg: dict, seed_override: int | None) -> cp.SplitSpec:
    c = cfg["corpus"]
    return cp.SplitSpec(
        mode=c["split"],
        k_core=c["k_core"],
        k_core_iterative=c["k_core_iterative"],
        few_shot_n=c["few_shot_n"],
        cold_user_fraction=c["cold_user_fraction"],
        seed=c["seed"] if seed_override is None else seed_override,
    )


def cmd_build_corpus(cfg: dict, args) -> int:
    parsed = cp.parse_interactions(args.input, cfg["corpus"]["format"])
    corpus = cp.build_corpus(parsed, _split_spec(cfg, args.seed), history_limit=cfg["corpus"]["history_limit"])
    cp.save_corpus(corpus, args.out)
    stats = cp.corpus_stats(corpus, n_neg=cfg["corpus"]["n_neg"], seed=corpus.spec.seed)
    print(f"duplicates dropped: {parsed.duplicates_dropped}; users below 3 interactions dropped: {corpus.split.dropped_users}")
    print("#Interactions  #Train  #Valid  #Test  #User  #Item  Avg-U  Avg-I")
    print(
        f"{stats['interactions']:>13}  {stats['train']:>6}  {stats['valid']:>6}  {stats['test']:>5}"
        f"  {stats['users']:>5}  {stats['items']:>5}  {stats['avg_u']:>5.2f}  {stats['avg_i']:>5.2f}"
    )
    return 0


def _require(path: str, produced_by: str) -> None:
    if not os.path.exists(path):
        raise cp.CorpusError(f"missing artifact {path!r}; run `{produced_by}` first")


def cmd_train_cf(cfg: dict, args) -> int:
    _require(os.path.join(args.corpus, "interactions.tsv"), "fuserec build-corpus")
    corpus = cp.load_corpus(args.corpus)
    c = cfg["cf"]
    cf_cfg = CfTrainConfig(
        backend=c["backend"],
        objective=c["objective"],
        d_cf=c["d_cf"],
        lr=c["lr"],
        epochs=c["epochs"],
        negatives_per_positive=c["negatives_per_positive"],
        batch_size=c["batch_size"],
        history_limit=cfg["corpus"]["history_limit"],
        seed=c["seed"] if args.seed is None else args.seed,
    )
    embs, losses = train_cf(corpus.split.train, corpus.user_index, corpus.item_index, cf_cfg)
    ckpt.save_tensors(args.out, {"cf.user_table": embs.user_table, "cf.item_table": embs.item_table})
    print(f"cf epochs: {len(losses)}; final loss {losses[-1]:.6f}; tables {embs.user_table.shape} / {embs.item_table.shape}")
    return 0


def _load_cf(path: str) -> CfEmbeddings:
    _require(path, "fuserec train-cf")
    tensors = ckpt.load_tensors(path)
    return CfEmbeddings(tensors["cf.user_table"], tensors["cf.item_table"])


def _train_config(cfg: dict, seed_override: int | None) -> tr.TrainConfig:
    t = cfg["train"]
    return tr.TrainConfig(
        lr=t["lr"],
        weight_decay=t["weight_decay"],
        epochs=t["epochs"],
        batch_size=t["batch"],
        variant=t["variant"],
        lambda_orth=t["lambda_orth"],
        tau=t["tau"],
        seed=t["seed"] if seed_override is None else seed_override,
        tasks=tuple(t["tasks"]) if t["tasks"] else (),
        n_neg=cfg["corpus"]["n_neg"],
        grad_clip=t["grad_clip"],
        pretrain_steps=t["pretrain_steps"],
        pretrain_lr=t["pretrain_lr"],
        token_table_trainable=t["token_table_trainable"],
        literal_beta=t["literal_beta"],
    )


def _lm_config(cfg: dict, vocab_size: int) -> LmConfig:
    l = cfg["lm"]
    return LmConfig(
        n_layers=l["L"],
        n_heads=l["n_heads"],
        d_model=l["d_llm"],
        d_ff=l["d_ff"],
        vocab_size=vocab_size,
        max_len=l["max_len"],
        rank=l["r"],
    )


def cmd_train(cfg: dict, args) -> int:
    corpus = cp.load_corpus(args.corpus)
    cf = _load_cf(args.cf)
    train_cfg = _train_config(cfg, args.seed)
    lm_cfg = _lm_config(cfg, len(corpus.vocab))
    result = tr.train(corpus, cf, lm_cfg, train_cfg, fusion_hidden=cfg["fusion"]["h"])
    tr.to_checkpoint(result, train_cfg, args.out)
    log_path = args.log if args.log else args.out + ".log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        for rec in result.log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"steps: {result.steps}; validation loss per epoch: {[round(v, 4) for v in result.valid_losses]}")
    return 0


def cmd_evaluate(cfg: dict, args) -> int:
    corpus = cp.load_corpus(args.corpus)
    cf = _load_cf(args.cf)
    _require(args.model, "fuserec train")
    model = tr.from_checkpoint(args.model)
    seed = cfg["train"]["seed"] if args.seed is None else args.seed
    report = evaluate_model(model, corpus, cf, n_neg=cfg["corpus"]["n_neg"], seed=seed)
    report["variant"] = model.variant
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    for task, metrics in report["tasks"].items():
        line = ", ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in metrics.items())
        print(f"{task}: {line}")
    return 0


def cmd_export_embeddings(cfg: dict, args) -> int:
    corpus = cp.load_corpus(args.corpus)
    cf = _load_cf(args.cf)
    _require(args.model, "fuserec train")
    model = tr.from_checkpoint(args.model)
    if model.variant == "NCK":
        raise cp.CorpusError("variant NCK has no fusion mapping to export")
    export_projected(model.fusion, cf, args.out)
    print(f"wrote projected vectors for {cf.user_table.shape[0]} users and {cf.item_table.shape[0]} items")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fuserec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override the stage seed")
        p.add_argument("--set", dest="assignments", action="append", default=[], metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("build-corpus", help="ingest, filter, split, tokenize")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_corpus)

    p = sub.add_parser("train-cf", help="train the collaborative backend")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_cf)

    p = sub.add_parser("train", help="fine-tune the model")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--cf", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score the test split")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--cf", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-embeddings", help="CSV of projected user/item vectors")
    common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--cf", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args.config, args.assignments)
        return args.func(cfg, args)
    except (ConfigError, UsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (cp.CorpusError, ckpt.CheckpointError, ContractError, FileNotFoundError, IndexError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
