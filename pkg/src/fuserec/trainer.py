"""Training loop: curriculum dual-prompt loss, variant dispatch, optimizer.

Every batch holds examples of a single task. Each example is rendered twice:
a text-only prompt and a collaborative prompt whose placeholder rows carry
the projected user/item vectors. The two answer-token cross-entropies are
blended by a decaying weight so text competence is established before the
collaborative path dominates, and the query-adapter orthogonality penalty is
added on top. Variants rewire the fusion mode, the adapter bank layout, and
the loss form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from . import fusion as fz
from . import lm as lmmod
from . import numerics as nm
from .collab import CfEmbeddings
from .corpus import (
    Corpus,
    PlaceholderPositions,
    TaskExample,
    build_examples,
    locate_placeholders,
    render_prompt,
)
from .lm import LmConfig, MultiLoraBank
from .numerics import ContractError, NumericError, Tensor
from .optim import AdamW
from .prng import SplitMix64

VARIANTS = ("CKF", "NCK", "NPM", "TLM", "NML", "NEN", "S")


@dataclass
class BetaSchedule:
    """Smoothly decaying weight for the text-only loss term.

    beta(i) = 1 / (1 + exp(((i/z) - 1) / tau)): starts near 1, ends at 0.5
    exactly. The literal_parse flag instead divides only the exponential by
    tau, which starts low; kept for comparison.
    """

    total_steps: int
    tau: float = 0.125
    literal_parse: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ContractError("tau must be positive")
        if self.total_steps < 1:
            raise ContractError("total_steps must be >= 1")


def beta(i: int, sched: BetaSchedule) -> float:
    if not 0 <= i <= sched.total_steps:
        raise ContractError(f"step {i} outside [0, {sched.total_steps}]")
    frac = i / sched.total_steps
    if sched.literal_parse:
        return 1.0 / (1.0 + math.exp(frac - 1.0) / sched.tau)
    return 1.0 / (1.0 + math.exp((frac - 1.0) / sched.tau))


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    epochs: int = 3
    batch_size: int = 8
    variant: str = "CKF"
    lambda_orth: float = 1.0
    tau: float = 0.125
    seed: int = 0
    tasks: tuple[str, ...] = ()
    n_neg: int = 10
    grad_clip: float | None = None
    pretrain_steps: int = 0
    pretrain_lr: float = 1e-3
    token_table_trainable: bool = False
    literal_beta: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}")
        if self.variant == "S" and len(self.tasks) != 1:
            raise ContractError("variant S trains exactly one task per run")


def fusion_mode_for(variant: str) -> str:
    return {"NCK": "none", "NPM": "generic-shared", "TLM": "generic-two"}.get(variant, "personalized")


def bank_mode_for(variant: str) -> str:
    return "single-shared" if variant == "NML" else "multi-lora"


def loss_form_for(variant: str) -> str:
    return {"NCK": "text-only", "NEN": "collab-only"}.get(variant, "curriculum")


class RecModel:
    """Backbone parameters, adapter bank and fusion module for one run."""

    def __init__(self, lm_cfg: LmConfig, variant: str, tasks: tuple[str, ...], d_cf: int, fusion_hidden: int, seed: int, pretrain: bool = False):
        self.lm_cfg = lm_cfg
        self.variant = variant
        self.tasks = tuple(tasks)
        self.d_cf = d_cf
        self.fusion_hidden = fusion_hidden
        rng = np.random.default_rng(seed)
        self.params = lmmod.init_backbone(lm_cfg, rng, trainable=pretrain)
        self.bank = MultiLoraBank(lm_cfg, self.tasks, bank_mode_for(variant), rng)
        mode = fusion_mode_for(variant)
        if mode == "personalized":
            self.fusion = fz.PersonalizedFusion(d_cf, lm_cfg.d_model, fusion_hidden, rng)
        elif mode == "none":
            self.fusion = fz.NoFusion()
        else:
            self.fusion = fz.GenericFusion(d_cf, lm_cfg.d_model, rng, shared=(mode == "generic-shared"))

    def named_parameters(self) -> dict[str, Tensor]:
        out = dict(self.params)
        out.update(self.bank.named_parameters())
        out.update(self.fusion.named_parameters())
        return out

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.named_parameters().items() if t.requires_grad}

    def uses_collab_prompt(self) -> bool:
        return self.variant != "NCK"


# ---------------------------------------------------------------------------
# example preparation
# ---------------------------------------------------------------------------


@dataclass
class Encoded:
    seq: list[int]
    targets: list[int]
    mask: list[bool]
    positions: PlaceholderPositions | None = None


def encode_for_loss(example: TaskExample, corpus: Corpus, inject_collab: bool) -> Encoded:
    """Prompt plus answer tokens with the loss mask over answer positions."""
    rendered = render_prompt(example, corpus.catalog, inject_collab)
    vocab = corpus.vocab
    prompt_ids = vocab.encode(rendered.text)
    answer_ids = vocab.encode(rendered.answer_text, bos=False)
    positions = locate_placeholders(prompt_ids, vocab, expected=inject_collab)
    seq = prompt_ids + answer_ids
    targets = seq[1:] + [vocab.eos]
    n_p, n_a = len(prompt_ids), len(answer_ids)
    mask = [n_p - 1 <= t < n_p + n_a - 1 for t in range(len(seq))]
    return Encoded(seq, targets, mask, positions)


@dataclass
class Prepared:
    example: TaskExample
    plain: Encoded
    collab: Encoded | None
    e_u: np.ndarray
    e_v: np.ndarray
    hist: np.ndarray


def prepare_example(example: TaskExample, corpus: Corpus, cf: CfEmbeddings, with_collab: bool) -> Prepared:
    u = corpus.user_index[example.user_id]
    v = corpus.item_index[example.candidate]
    e_u = cf.lookup_user(u)
    e_v = cf.lookup_item(v)
    hist_rows = [corpus.item_index[h] for h in example.history]
    hist = cf.item_table[hist_rows] if hist_rows else np.zeros((0, cf.d_cf))
    plain = encode_for_loss(example, corpus, inject_collab=False)
    collab = encode_for_loss(example, corpus, inject_collab=True) if with_collab else None
    return Prepared(example, plain, collab, e_u, e_v, hist)


def _example_loss(prep: Prepared, enc: Encoded, model: RecModel, inject_collab: bool) -> Tensor:
    table = model.params["lm.token_table"]
    if inject_collab:
        ep_u = model.fusion.map_user(prep.e_u, prep.hist)
        ep_v = model.fusion.map_item(prep.e_v, prep.hist)
        embs = fz.inject(enc.seq, enc.positions, table, ep_u, ep_v)
    else:
        embs = nm.gather_rows(table, enc.seq)
    logits = lmmod.forward(embs, prep.example.task, model.params, model.bank, model.lm_cfg)
    return nm.cross_entropy(logits, enc.targets, enc.mask)


def batch_loss(
    batch: list[Prepared],
    model: RecModel,
    step: int,
    sched: BetaSchedule,
    lambda_orth: float,
    beta_value: float | None = None,
) -> tuple[Tensor, dict]:
    """Weighted dual-prompt loss for one task-homogeneous batch.

    Returns the scalar loss tensor plus a component log with the beta weight
    and the per-term values.
    """
    if not batch:
        raise ContractError("empty batch")
    task = batch[0].example.task
    if any(p.example.task != task for p in batch):
        raise ContractError("batch mixes tasks")
    form = loss_form_for(model.variant)
    inv = 1.0 / len(batch)
    loss_t1 = loss_t2 = None
    if form != "collab-only":
        loss_t1 = nm.scale(nm.add_n([_example_loss(p, p.plain, model, False) for p in batch]), inv)
    if form != "text-only":
        loss_t2 = nm.scale(nm.add_n([_example_loss(p, p.collab, model, True) for p in batch]), inv)
    orth = lmmod.orth_loss(model.bank)
    if form == "text-only":
        total = loss_t1
        b = 1.0
    elif form == "collab-only":
        total = loss_t2
        b = 0.0
    else:
        b = beta(step, sched) if beta_value is None else beta_value
        total = nm.add(nm.scale(loss_t1, b), nm.scale(loss_t2, 1.0 - b))
    if lambda_orth != 0.0:
        total = nm.add(total, nm.scale(orth, lambda_orth))
    parts = {
        "task": task,
        "beta": b,
        "loss_t1": loss_t1.item() if loss_t1 is not None else None,
        "loss_t2": loss_t2.item() if loss_t2 is not None else None,
        "loss_orth": orth.item(),
        "total": total.item(),
    }
    if not np.isfinite(parts["total"]):
        raise NumericError(f"non-finite training loss at step {step}")
    return total, parts


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: RecModel
    log: list[dict] = field(default_factory=list)
    valid_losses: list[float] = field(default_factory=list)
    steps: int = 0
    prng_state: int = 0


def _pretrain_backbone(model: RecModel, pool: list[Prepared], cfg: TrainConfig) -> None:
    """Brief next-token pass standing in for large-scale pretraining.

    Sequences cover both prompt renderings: the text-only form and the
    collaborative form with its placeholder markers embedded as ordinary
    vocab tokens (no injection), so neither wording is foreign to the frozen
    backbone later. All positions are supervised; the backbone is frozen
    afterwards.
    """
    backbone = {n: t for n, t in model.params.items() if t.requires_grad}
    if not backbone:
        return
    sequences: list[tuple[str, list[int], list[int]]] = []
    for p in pool:
        sequences.append((p.example.task, p.plain.seq, p.plain.targets))
        if p.collab is not None:
            sequences.append((p.example.task, p.collab.seq, p.collab.targets))
    opt = AdamW(backbone, lr=cfg.pretrain_lr, weight_decay=0.0, grad_clip=cfg.grad_clip)
    rng = SplitMix64(cfg.seed).fork(11)
    silent_bank = MultiLoraBank(model.lm_cfg, model.tasks, "none", np.random.default_rng(0))
    for _ in range(cfg.pretrain_steps):
        batch = [sequences[rng.randbelow(len(sequences))] for _ in range(cfg.batch_size)]
        with nm.Tape() as tape:
            losses = []
            for task, seq, targets in batch:
                embs = nm.gather_rows(model.params["lm.token_table"], seq)
                logits = lmmod.forward(embs, task, model.params, silent_bank, model.lm_cfg)
                losses.append(nm.cross_entropy(logits, targets, [True] * len(seq)))
            loss = nm.scale(nm.add_n(losses), 1.0 / len(losses))
            grads = nm.backward(loss, tape)
        opt.step({n: nm.grad_of(grads, t) for n, t in backbone.items()})
    lmmod.freeze_backbone(model.params, keep_token_table=cfg.token_table_trainable)


def train(
    corpus: Corpus,
    cf: CfEmbeddings,
    lm_cfg: LmConfig,
    cfg: TrainConfig,
    fusion_hidden: int = 8,
) -> TrainResult:
    """Run the full fine-tuning loop and return the trained model plus logs.

    Deterministic for a fixed config and seed: the same bytes come out of
    to_checkpoint for two identical runs.
    """
    tasks = tuple(cfg.tasks) if cfg.tasks else corpus.tasks
    for t in tasks:
        if t == "Explain" and not corpus.has_comments:
            raise ContractError("Explain task requested but the corpus has no comments")
    model = RecModel(
        lm_cfg,
        cfg.variant,
        tasks,
        cf.d_cf,
        fusion_hidden,
        cfg.seed,
        pretrain=cfg.pretrain_steps > 0 or cfg.token_table_trainable,
    )
    if cfg.pretrain_steps == 0:
        lmmod.freeze_backbone(model.params, keep_token_table=cfg.token_table_trainable)

    with_collab = model.uses_collab_prompt()
    pools: dict[str, list[Prepared]] = {}
    for task in tasks:
        examples = build_examples(corpus, task, "train", n_neg=cfg.n_neg, seed=cfg.seed)
        pools[task] = [prepare_example(ex, corpus, cf, with_collab) for ex in examples]
    valid_pools: dict[str, list[Prepared]] = {}
    for task in tasks:
        examples = build_examples(corpus, task, "valid", n_neg=cfg.n_neg, seed=cfg.seed)
        valid_pools[task] = [prepare_example(ex, corpus, cf, with_collab) for ex in examples]

    if cfg.pretrain_steps > 0:
        _pretrain_backbone(model, [p for task in tasks for p in pools[task]], cfg)

    def batches_of(n: int) -> int:
        return (n + cfg.batch_size - 1) // cfg.batch_size

    steps_per_epoch = sum(batches_of(len(pools[t])) for t in tasks)
    total_steps = max(cfg.epochs * steps_per_epoch, 1)
    sched = BetaSchedule(total_steps=total_steps, tau=cfg.tau, literal_parse=cfg.literal_beta)

    trainable = model.trainable()
    decay_names = {n for n in trainable if n.startswith(("lora.", "fusion."))}
    opt = AdamW(
        trainable,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        decay_names=decay_names,
        grad_clip=cfg.grad_clip,
    )

    stream = SplitMix64(cfg.seed).fork(13)
    result = TrainResult(model=model)
    step = 0
    for _epoch in range(cfg.epochs):
        queues: dict[str, list[list[int]]] = {}
        for task in tasks:
            idx = list(range(len(pools[task])))
            stream.shuffle(idx)
            queues[task] = [idx[i : i + cfg.batch_size] for i in range(0, len(idx), cfg.batch_size)]
        depth = max((len(q) for q in queues.values()), default=0)
        for b in range(depth):
            for task in tasks:
                if b >= len(queues[task]):
                    continue
                batch = [pools[task][j] for j in queues[task][b]]
                with nm.Tape() as tape:
                    loss, parts = batch_loss(batch, model, step, sched, cfg.lambda_orth)
                    grads = nm.backward(loss, tape)
                opt.step({n: nm.grad_of(grads, t) for n, t in trainable.items()})
                parts["step"] = step
                result.log.append(parts)
                step += 1
        result.valid_losses.append(_validation_loss(model, valid_pools))
    result.steps = step
    result.prng_state = stream.state
    return result


def _validation_loss(model: RecModel, valid_pools: dict[str, list[Prepared]]) -> float:
    """Mean main-prompt loss over the validation pool (text prompt for the
    no-collaboration variant, collaborative prompt otherwise)."""
    total, count = 0.0, 0
    collab = model.uses_collab_prompt()
    for task in model.tasks:
        for p in valid_pools.get(task, []):
            enc = p.collab if collab else p.plain
            total += _example_loss(p, enc, model, collab).item()
            count += 1
    return total / count if count else float("nan")


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def to_checkpoint(result: TrainResult, cfg: TrainConfig, path: str) -> None:
    model = result.model
    tensors = {name: t.data for name, t in model.named_parameters().items()}
    ckpt.save_tensors(path, tensors)
    meta = {
        "lm": {
            "n_layers": model.lm_cfg.n_layers,
            "n_heads": model.lm_cfg.n_heads,
            "d_model": model.lm_cfg.d_model,
            "d_ff": model.lm_cfg.d_ff,
            "vocab_size": model.lm_cfg.vocab_size,
            "max_len": model.lm_cfg.max_len,
            "rank": model.lm_cfg.rank,
        },
        "variant": model.variant,
        "tasks": list(model.tasks),
        "d_cf": model.d_cf,
        "fusion_hidden": model.fusion_hidden,
        "seed": cfg.seed,
        "steps": result.steps,
        "prng_state": str(result.prng_state),
        "valid_losses": result.valid_losses,
    }
    ckpt.save_meta(path + ".json", meta)


def from_checkpoint(path: str) -> RecModel:
    meta = ckpt.load_meta(path + ".json")
    lm_cfg = LmConfig(**meta["lm"])
    model = RecModel(
        lm_cfg, meta["variant"], tuple(meta["tasks"]), meta["d_cf"], meta["fusion_hidden"], seed=0
    )
    lmmod.freeze_backbone(model.params)
    tensors = ckpt.load_tensors(path)
    named = model.named_parameters()
    missing = sorted(set(named) - set(tensors))
    extra = sorted(set(tensors) - set(named))
    if missing or extra:
        raise ckpt.CheckpointError(f"checkpoint mismatch: missing {missing[:3]}, extra {extra[:3]}")
    for name, t in named.items():
        if tensors[name].shape != t.data.shape:
            raise ckpt.CheckpointError(f"tensor {name!r} has shape {tensors[name].shape}, expected {t.data.shape}")
        t.data = tensors[name]
    return model
