"""Collaborative-filtering backends producing the frozen user/item tables.

Two backends: plain matrix factorization (dot-product scorer) and a small
sequential-attention variant that adds an attention-pooled history term to
the score. Both train through the gradient tape against either an implicit
click objective with sampled negatives or a rating regression. The resulting
tables are frozen and also drive nearest-neighbor hard negative lookup.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .corpus import Interaction
from .numerics import Tensor
from .optim import AdamW
from .prng import SplitMix64


@dataclass
class CfTrainConfig:
    backend: str = "MF"  # or "SeqAttn"
    objective: str = "implicit-bce"  # or "rating-mse"
    d_cf: int = 64
    lr: float = 0.01
    epochs: int = 10
    negatives_per_positive: int = 1
    batch_size: int = 256
    history_limit: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.backend not in ("MF", "SeqAttn"):
            raise ValueError(f"unknown CF backend {self.backend!r}")
        if self.objective not in ("implicit-bce", "rating-mse"):
            raise ValueError(f"unknown CF objective {self.objective!r}")
        if self.objective == "implicit-bce" and self.negatives_per_positive < 1:
            raise ValueError("implicit-bce needs negatives_per_positive >= 1")


class CfEmbeddings:
    """Frozen user/item tables; rows never seen in training hold the
    column-wise mean of the seen rows, which serves cold lookups."""

    def __init__(self, user_table: np.ndarray, item_table: np.ndarray):
        if not (np.isfinite(user_table).all() and np.isfinite(item_table).all()):
            raise nm.NumericError("CF tables contain non-finite values")
        self.user_table = user_table
        self.item_table = item_table
        self.user_table.setflags(write=False)
        self.item_table.setflags(write=False)

    @property
    def d_cf(self) -> int:
        return self.user_table.shape[1]

    def lookup_user(self, u: int) -> np.ndarray:
        if not 0 <= u < self.user_table.shape[0]:
            raise IndexError(f"user id {u} outside table of {self.user_table.shape[0]}")
        return self.user_table[u]

    def lookup_item(self, v: int) -> np.ndarray:
        if not 0 <= v < self.item_table.shape[0]:
            raise IndexError(f"item id {v} outside table of {self.item_table.shape[0]}")
        return self.item_table[v]

    def nearest_items(self, v: int, k: int) -> list[int]:
        """k nearest items to v by cosine, descending, ties by ascending id,
        v itself excluded; zero-norm rows rank last."""
        n = self.item_table.shape[0]
        if not 0 <= v < n:
            raise IndexError(f"item id {v} outside table of {n}")
        if k >= n:
            raise ValueError(f"k={k} must be below the item count {n}")
        norms = np.sqrt((self.item_table**2).sum(axis=1))
        query = self.item_table[v]
        qn = norms[v]
        sims = np.full(n, -np.inf)
        ok = norms > 0
        if qn > 0:
            sims[ok] = (self.item_table[ok] @ query) / (norms[ok] * qn)
        sims[v] = -np.inf
        order = np.lexsort((np.arange(n), -sims))
        return [int(i) for i in order if i != v][:k]


def _freeze_tables(user_t: Tensor, item_t: Tensor, seen_users: set[int], seen_items: set[int]) -> CfEmbeddings:
    user = user_t.data.copy()
    item = item_t.data.copy()
    for table, seen in ((user, seen_users), (item, seen_items)):
        idx = sorted(seen)
        if idx and len(idx) < table.shape[0]:
            mean = table[idx].mean(axis=0)
            unseen = np.setdiff1d(np.arange(table.shape[0]), np.asarray(idx, dtype=np.intp))
            table[unseen] = mean
    return CfEmbeddings(user, item)


def _histories(train: list[Interaction]) -> dict[int, list[tuple[int, int]]]:
    """Per user: timestamp-ordered (timestamp, item) pairs for history slices."""
    seqs: dict[int, list[tuple[int, int]]] = {}
    for it in train:
        seqs.setdefault(it.user_id, []).append((it.timestamp, it.item_id))
    for u in seqs:
        seqs[u].sort()
    return seqs


def train_cf(
    train: list[Interaction],
    user_index: dict[int, int],
    item_index: dict[int, int],
    cfg: CfTrainConfig,
) -> tuple[CfEmbeddings, list[float]]:
    """Train the configured backend on the train split.

    Ids are mapped through the dense indexes; returns frozen tables plus the
    per-epoch mean training loss. Deterministic for a fixed seed.
    """
    if not train:
        raise ValueError("empty training set")
    n_users, n_items = len(user_index), len(item_index)
    rng_np = np.random.default_rng(cfg.seed)
    user_t = Tensor(rng_np.normal(0.0, 0.1, size=(n_users, cfg.d_cf)), requires_grad=True)
    item_t = Tensor(rng_np.normal(0.0, 0.1, size=(n_items, cfg.d_cf)), requires_grad=True)
    opt = AdamW({"user": user_t, "item": item_t}, lr=cfg.lr, weight_decay=0.0)
    rng = SplitMix64(cfg.seed)

    events = [(user_index[it.user_id], item_index[it.item_id], it.rating) for it in train]
    user_items: dict[int, set[int]] = {}
    for u, v, _r in events:
        user_items.setdefault(u, set()).add(v)
    seqs = _histories(train)
    hist_of: dict[tuple[int, int], list[int]] = {}
    if cfg.backend == "SeqAttn":
        for it in train:
            u = user_index[it.user_id]
            prior = [item_index[v] for (t, v) in seqs[it.user_id] if t < it.timestamp]
            hist_of[(u, item_index[it.item_id])] = prior[-cfg.history_limit :]

    def score_batch(us: list[int], vs: list[int]) -> Tensor:
        eu = nm.gather_rows(user_t, us)
        ev = nm.gather_rows(item_t, vs)
        base = nm.tsum(nm.mul(eu, ev), axis=1)
        if cfg.backend == "MF":
            return base
        pooled_rows = []
        for u, v in zip(us, vs):
            hist = hist_of.get((u, v), [])
            eu_row = nm.gather_rows(user_t, [u])
            if not hist:
                pooled_rows.append(eu_row)
                continue
            hmat = nm.gather_rows(item_t, hist)
            logits = nm.matmul(eu_row, nm.transpose(hmat))
            alpha = nm.softmax(logits, axis=1)
            pooled_rows.append(nm.matmul(alpha, hmat))
        stacked = nm.concat_cols([nm.transpose(r) for r in pooled_rows])  # d x B
        pooled_mat = nm.transpose(stacked)  # B x d
        return nm.add(base, nm.tsum(nm.mul(pooled_mat, ev), axis=1))

    epoch_losses: list[float] = []
    for _epoch in range(cfg.epochs):
        order = list(range(len(events)))
        rng.shuffle(order)
        total, batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [events[i] for i in order[start : start + cfg.batch_size]]
            us = [u for u, _v, _r in chunk]
            vs = [v for _u, v, _r in chunk]
            if cfg.objective == "implicit-bce":
                labels = [1.0] * len(chunk)
                for u, v, _r in chunk:
                    owned = user_items[u]
                    for _ in range(cfg.negatives_per_positive):
                        neg = rng.randbelow(n_items)
                        guard = 0
                        while neg in owned and guard < 100:
                            neg = rng.randbelow(n_items)
                            guard += 1
                        us.append(u)
                        vs.append(neg)
                        labels.append(0.0)
                y = np.asarray(labels)
            else:
                y = np.asarray([float(r) for _u, _v, r in chunk])
            with nm.Tape() as tape:
                s = score_batch(us, vs)
                if cfg.objective == "implicit-bce":
                    # bce(sigmoid(s), y) == softplus(s) - y * s
                    loss = nm.tmean(nm.sub(nm.softplus(s), nm.mul(Tensor(y), s)))
                else:
                    diff = nm.sub(s, Tensor(y))
                    loss = nm.tmean(nm.mul(diff, diff))
                grads = nm.backward(loss, tape)
            value = loss.item()
            if not np.isfinite(value):
                raise nm.NumericError(f"CF training loss became non-finite at epoch {_epoch}")
            total += value
            batches += 1
            opt.step({"user": nm.grad_of(grads, user_t), "item": nm.grad_of(grads, item_t)})
        epoch_losses.append(total / max(batches, 1))

    seen_users = {u for u, _v, _r in events}
    seen_items = {v for _u, v, _r in events}
    return _freeze_tables(user_t, item_t, seen_users, seen_items), epoch_losses
