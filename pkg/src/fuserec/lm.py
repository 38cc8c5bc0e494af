"""Micro decoder-only transformer with shared/task-specific low-rank adapters.

The frozen backbone is a standard pre-norm decoder (causal multi-head
attention, GELU feed-forward, tied output projection). Adapters add a
trainable rank-limited delta x @ A @ B on top of the frozen projections:
query projections get one adapter per task, key/value/output share one
adapter across tasks. An orthogonality penalty pushes different tasks' query
A matrices toward disjoint column spaces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import ContractError, ShapeError, Tensor

TASKS = ("RP", "CTR", "TopK", "Explain")
PROJS = ("q", "k", "v", "o")
BANK_MODES = ("multi-lora", "per-task-full", "single-shared", "none")


@dataclass
class LmConfig:
    n_layers: int = 2
    n_heads: int = 2
    d_model: int = 32
    d_ff: int = 0  # 0 means 4 * d_model
    vocab_size: int = 0
    max_len: int = 128
    rank: int = 16

    def __post_init__(self):
        if self.d_ff == 0:
            self.d_ff = 4 * self.d_model
        if self.d_model % self.n_heads != 0:
            raise ShapeError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.rank < 1:
            raise ShapeError("adapter rank must be >= 1")


class LoraAdapter:
    """Trainable low-rank delta for one frozen projection: x W + (x A) B.

    B starts at zero so the delta starts as identity; A is a small Gaussian.
    """

    def __init__(self, d: int, rank: int, rng: np.random.Generator):
        self.A = Tensor(rng.normal(0.0, 0.02, size=(d, rank)), requires_grad=True)
        self.B = Tensor(np.zeros((rank, d)), requires_grad=True)


def lora_apply(x: Tensor, w: Tensor, adapter: LoraAdapter | None) -> Tensor:
    """x through a frozen projection plus the adapter delta when present."""
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"lora_apply dimension mismatch: {x.shape} x {w.shape}")
    base = nm.matmul(x, w)
    if adapter is None:
        return base
    return nm.add(base, nm.matmul(nm.matmul(x, adapter.A), adapter.B))


class MultiLoraBank:
    """Adapter storage with per-mode layout.

    multi-lora: per layer, one query adapter per task plus one shared adapter
    each for key/value/output. per-task-full: one adapter per task for every
    projection. single-shared: one adapter per projection used by all tasks.
    none: no adapters.
    """

    def __init__(self, cfg: LmConfig, tasks: tuple[str, ...], mode: str, rng: np.random.Generator):
        if mode not in BANK_MODES:
            raise ContractError(f"unknown bank mode {mode!r}")
        for t in tasks:
            if t not in TASKS:
                raise ContractError(f"unknown task {t!r}")
        self.mode = mode
        self.tasks = tuple(tasks)
        self.n_layers = cfg.n_layers
        self._adapters: dict[tuple[int, str, str | None], LoraAdapter] = {}
        d, r = cfg.d_model, cfg.rank
        for layer in range(cfg.n_layers):
            if mode == "none":
                continue
            if mode == "multi-lora":
                for task in self.tasks:
                    self._adapters[(layer, "q", task)] = LoraAdapter(d, r, rng)
                for proj in ("k", "v", "o"):
                    self._adapters[(layer, proj, None)] = LoraAdapter(d, r, rng)
            elif mode == "per-task-full":
                for task in self.tasks:
                    for proj in PROJS:
                        self._adapters[(layer, proj, task)] = LoraAdapter(d, r, rng)
            else:  # single-shared
                for proj in PROJS:
                    self._adapters[(layer, proj, None)] = LoraAdapter(d, r, rng)

    def adapter(self, layer: int, proj: str, task: str) -> LoraAdapter | None:
        if self.mode == "none":
            return None
        if task not in self.tasks:
            raise ContractError(f"task {task!r} not served by this bank")
        if self.mode == "multi-lora":
            key = (layer, proj, task if proj == "q" else None)
        elif self.mode == "per-task-full":
            key = (layer, proj, task)
        else:
            key = (layer, proj, None)
        return self._adapters[key]

    def task_query_adapters(self, layer: int) -> list[tuple[str, LoraAdapter]]:
        """Per-task query adapters of one layer, in task order; empty when the
        mode has no task-specific queries."""
        if self.mode in ("none", "single-shared"):
            return []
        return [(t, self._adapters[(layer, "q", t)]) for t in self.tasks]

    def adapter_count(self) -> int:
        return len(self._adapters)

    def parameter_count(self) -> int:
        return sum(a.A.data.size + a.B.data.size for a in self._adapters.values())

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for (layer, proj, task), ad in sorted(
            self._adapters.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or "")
        ):
            scope = "shared" if task is None else f"task{self.tasks.index(task)}"
            out[f"lora.{scope}.layer{layer}.{proj}.A"] = ad.A
            out[f"lora.{scope}.layer{layer}.{proj}.B"] = ad.B
        return out


def orth_loss(bank: MultiLoraBank) -> Tensor:
    """Sum over layers and ordered task pairs of the squared off-diagonal
    entries of the cross-Gram between the pairs' query A matrices.

    Differentiates into the A matrices only; returns an exact scalar zero when
    fewer than two task-specific query adapters exist.
    """
    terms: list[Tensor] = []
    mask_cache: dict[int, Tensor] = {}
    for layer in range(bank.n_layers):
        ads = bank.task_query_adapters(layer)
        if len(ads) < 2:
            continue
        for t1, a1 in ads:
            for t2, a2 in ads:
                if t1 == t2:
                    continue
                gram = nm.matmul(nm.transpose(a1.A), a2.A)
                r = gram.shape[0]
                if r not in mask_cache:
                    mask_cache[r] = Tensor(1.0 - np.eye(r))
                off = nm.mul(gram, mask_cache[r])
                terms.append(nm.tsum(nm.mul(off, off)))
    if not terms:
        return Tensor(0.0)
    return nm.add_n(terms)


# ---------------------------------------------------------------------------
# backbone
# ---------------------------------------------------------------------------


def init_backbone(cfg: LmConfig, rng: np.random.Generator, trainable: bool = False) -> dict[str, Tensor]:
    """Backbone parameters under their persistent names. `trainable` marks
    them for a pretraining pass; freeze_backbone flips them frozen after."""
    if cfg.vocab_size < 1:
        raise ShapeError("vocab_size must be set before building the backbone")
    d, dff = cfg.d_model, cfg.d_ff
    resid_std = 0.02 / np.sqrt(2.0 * cfg.n_layers)
    params: dict[str, Tensor] = {
        "lm.token_table": Tensor(rng.normal(0.0, 0.02, size=(cfg.vocab_size, d)), requires_grad=trainable),
        "lm.pos_table": Tensor(rng.normal(0.0, 0.02, size=(cfg.max_len, d)), requires_grad=trainable),
        "lm.final_norm.gain": Tensor(np.ones(d), requires_grad=trainable),
        "lm.final_norm.bias": Tensor(np.zeros(d), requires_grad=trainable),
    }
    for i in range(cfg.n_layers):
        p = f"lm.layer{i}"
        params[f"{p}.norm.attn.gain"] = Tensor(np.ones(d), requires_grad=trainable)
        params[f"{p}.norm.attn.bias"] = Tensor(np.zeros(d), requires_grad=trainable)
        params[f"{p}.norm.ffn.gain"] = Tensor(np.ones(d), requires_grad=trainable)
        params[f"{p}.norm.ffn.bias"] = Tensor(np.zeros(d), requires_grad=trainable)
        params[f"{p}.q"] = Tensor(rng.normal(0.0, 0.02, size=(d, d)), requires_grad=trainable)
        params[f"{p}.k"] = Tensor(rng.normal(0.0, 0.02, size=(d, d)), requires_grad=trainable)
        params[f"{p}.v"] = Tensor(rng.normal(0.0, 0.02, size=(d, d)), requires_grad=trainable)
        params[f"{p}.o"] = Tensor(rng.normal(0.0, resid_std, size=(d, d)), requires_grad=trainable)
        params[f"{p}.ffn.w1"] = Tensor(rng.normal(0.0, 0.02, size=(d, dff)), requires_grad=trainable)
        params[f"{p}.ffn.b1"] = Tensor(np.zeros(dff), requires_grad=trainable)
        params[f"{p}.ffn.w2"] = Tensor(rng.normal(0.0, resid_std, size=(dff, d)), requires_grad=trainable)
        params[f"{p}.ffn.b2"] = Tensor(np.zeros(d), requires_grad=trainable)
    return params


def freeze_backbone(params: dict[str, Tensor], keep_token_table: bool = False) -> None:
    for name, t in params.items():
        if keep_token_table and name == "lm.token_table":
            continue
        t.requires_grad = False


_MASK_CACHE: dict[int, Tensor] = {}


def causal_mask(t_len: int) -> Tensor:
    if t_len not in _MASK_CACHE:
        m = np.triu(np.full((t_len, t_len), -1e30), k=1)
        _MASK_CACHE[t_len] = Tensor(m)
    return _MASK_CACHE[t_len]


def mha_forward(
    x: Tensor, task: str, layer: int, params: dict[str, Tensor], bank: MultiLoraBank, cfg: LmConfig
) -> Tensor:
    """Causal multi-head attention for one layer; query projections use the
    task's adapter, key/value/output the shared ones (mode permitting)."""
    t_len = x.shape[0]
    if t_len > cfg.max_len:
        raise ContractError(f"sequence of {t_len} exceeds max length {cfg.max_len}")
    p = f"lm.layer{layer}"
    q = lora_apply(x, params[f"{p}.q"], bank.adapter(layer, "q", task))
    k = lora_apply(x, params[f"{p}.k"], bank.adapter(layer, "k", task))
    v = lora_apply(x, params[f"{p}.v"], bank.adapter(layer, "v", task))
    d_head = cfg.d_model // cfg.n_heads
    mask = causal_mask(t_len)
    heads = []
    for h in range(cfg.n_heads):
        lo, hi = h * d_head, (h + 1) * d_head
        qh = nm.slice_cols(q, lo, hi)
        kh = nm.slice_cols(k, lo, hi)
        vh = nm.slice_cols(v, lo, hi)
        scores = nm.add(nm.scale(nm.matmul(qh, nm.transpose(kh)), 1.0 / np.sqrt(d_head)), mask)
        att = nm.softmax(scores, axis=1)
        heads.append(nm.matmul(att, vh))
    merged = heads[0] if cfg.n_heads == 1 else nm.concat_cols(heads)
    return lora_apply(merged, params[f"lm.layer{layer}.o"], bank.adapter(layer, "o", task))


def forward(embs: Tensor, task: str, params: dict[str, Tensor], bank: MultiLoraBank, cfg: LmConfig) -> Tensor:
    """Pre-norm decoder stack over an embedding sequence; returns T x V logits
    through the tied token-table projection."""
    t_len = embs.shape[0]
    pos = nm.gather_rows(params["lm.pos_table"], list(range(t_len)))
    x = nm.add(embs, pos)
    for i in range(cfg.n_layers):
        p = f"lm.layer{i}"
        h = nm.layer_norm(x, params[f"{p}.norm.attn.gain"], params[f"{p}.norm.attn.bias"])
        x = nm.add(x, mha_forward(h, task, i, params, bank, cfg))
        h2 = nm.layer_norm(x, params[f"{p}.norm.ffn.gain"], params[f"{p}.norm.ffn.bias"])
        f = nm.matmul(nm.gelu(nm.add(nm.matmul(h2, params[f"{p}.ffn.w1"]), params[f"{p}.ffn.b1"])), params[f"{p}.ffn.w2"])
        x = nm.add(x, nm.add(f, params[f"{p}.ffn.b2"]))
    x = nm.layer_norm(x, params["lm.final_norm.gain"], params["lm.final_norm.bias"])
    return nm.matmul(x, nm.transpose(params["lm.token_table"]))


def trainable_params(named: dict[str, Tensor]) -> tuple[int, list[str]]:
    """Count of scalar parameters receiving gradients plus their names."""
    names = [name for name, t in sorted(named.items()) if t.requires_grad]
    count = sum(named[n].data.size for n in names)
    return count, names
