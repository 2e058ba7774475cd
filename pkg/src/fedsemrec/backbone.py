"""Shared training machinery: ID tables, bipartite graph propagation,
BPR ranking loss, negative sampling and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, concat, spmm
from .data import InteractionDataset


class TrainingError(Exception):
    pass


@dataclass
class BipartiteGraph:
    num_users: int
    num_items: int
    edges: list  # (user, item) pairs from the train split
    norm_adj: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        seen = set()
        for u, i in self.edges:
            if not (0 <= u < self.num_users and 0 <= i < self.num_items):
                raise TrainingError(f"edge ({u},{i}) out of range")
            if (u, i) in seen:
                raise TrainingError(f"duplicate edge ({u},{i})")
            seen.add((u, i))
        n = self.num_users + self.num_items
        if self.edges:
            rows = np.array([u for u, _ in self.edges])
            cols = np.array([i + self.num_users for _, i in self.edges])
            data = np.ones(len(self.edges))
            adj = sp.coo_matrix((np.concatenate([data, data]),
                                 (np.concatenate([rows, cols]),
                                  np.concatenate([cols, rows]))), shape=(n, n))
            deg = np.asarray(adj.sum(axis=1)).ravel()
            d_inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
            d_mat = sp.diags(d_inv_sqrt)
            self.norm_adj = (d_mat @ adj @ d_mat).tocsr()
        else:
            self.norm_adj = sp.csr_matrix((n, n))

    @classmethod
    def from_dataset(cls, ds: InteractionDataset):
        edges = [(ds.interactions[i].user, ds.interactions[i].item)
                 for i in ds.train_idx]
        return cls(ds.num_users, ds.num_items, edges)


def init_embedding(rows, cols, rng) -> Tensor:
    """Xavier-uniform table."""
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


@dataclass
class IdEmbeddings:
    user_table: Tensor
    item_table: Tensor

    @classmethod
    def create(cls, num_users, num_items, dim, rng):
        return cls(init_embedding(num_users, dim, rng),
                   init_embedding(num_items, dim, rng))


def propagate(graph: BipartiteGraph, emb: IdEmbeddings, layers=2):
    """Symmetric-normalized bipartite propagation; the output averages the
    layer-0..layers representations, so isolated nodes keep their own
    embedding."""
    if layers < 0:
        raise TrainingError("layers must be >= 0")
    x = concat([emb.user_table, emb.item_table], axis=0)
    acc = x
    cur = x
    for _ in range(layers):
        cur = spmm(graph.norm_adj, cur)
        acc = acc + cur
    avg = acc / float(layers + 1)
    deg = np.asarray(graph.norm_adj.sum(axis=1)).ravel()
    if (deg == 0).any() and layers > 0:
        # isolated nodes keep their own embedding instead of a scaled copy
        keep = (deg == 0).astype(float)[:, None]
        avg = avg * (1.0 - keep) + x * keep
    users = avg.gather_rows(np.arange(graph.num_users))
    items = avg.gather_rows(np.arange(graph.num_users,
                                      graph.num_users + graph.num_items))
    return users, items


def bpr_loss(pos_scores: Tensor, neg_scores: Tensor) -> Tensor:
    """Mean of -log sigma(pos - neg), margin clamped to [-40, 40]."""
    if pos_scores.data.size == 0:
        raise TrainingError("bpr_loss: empty score batch")
    if pos_scores.data.shape != neg_scores.data.shape:
        raise TrainingError("bpr_loss: shape mismatch")
    margin = (pos_scores - neg_scores).clip(-40.0, 40.0)
    return -margin.log_sigmoid().mean()


def sample_negatives(ds: InteractionDataset, batch, seed=0):
    """One uniform negative per (user, item) positive, rejection-sampled
    outside the user's train-positive set."""
    positives = ds.user_items("train")
    rng = np.random.default_rng(seed)
    out = []
    for user, _item in batch:
        pos = positives.get(user, set())
        if len(pos) >= ds.num_items:
            raise TrainingError(f"user {user} interacted with every item; "
                                "cannot sample a negative")
        while True:
            cand = int(rng.integers(0, ds.num_items))
            if cand not in pos:
                out.append(cand)
                break
    return out


class Adam:
    """Standard Adam with bias correction, one instance per client."""

    def __init__(self, params: list[Tensor], lr=0.005, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        for k, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.isfinite(g).all():
                raise TrainingError(f"non-finite gradient for parameter #{k} "
                                    f"(shape {p.data.shape})")
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            m_hat = self.m[k] / (1 - self.beta1 ** t)
            v_hat = self.v[k] / (1 - self.beta2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
