"""Stage-2 local fine-tuning: semantic graphs, graph convolution into the ID
space, bidirectional contrastive alignment, multi-view fusion and prediction."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import Tensor, row_norms, spmm
from .backbone import Adam, TrainingError, bpr_loss, propagate, sample_negatives
from .data import EmbeddingMatrix
from .fgsat import ClientState, fgsat_forward, kd_loss, rank_item_vector
from .server import ClusterModel


@dataclass
class Stage2Config:
    alpha: float = 0.2          # contrastive weight
    beta: float = 0.2           # local-adaptation (distillation) weight
    tau: float = 0.5
    top_n: int = 10
    patience: int = 5
    lr_decay: float = 1.0       # per-epoch multiplicative decay
    max_epochs: int = 50
    standard_infonce: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise TrainingError("alpha and beta must be nonnegative")
        if self.tau <= 0:
            raise TrainingError("tau must be positive")


@dataclass
class SemanticGraph:
    source: str                 # "local" or "pretrained"
    top_n: int
    norm_adj: sp.csr_matrix


def build_semantic_graph(reprs, top_n, source="local") -> SemanticGraph:
    """Top-N cosine-similarity graph with symmetric normalization.

    Only positive similarities are kept; ties break toward the lower item id;
    S is symmetrized with max(S, S^T); zero-degree rows fall back to a unit
    self-loop before normalizing.
    """
    if isinstance(reprs, EmbeddingMatrix):
        reprs = reprs.data
    x = np.asarray(reprs, dtype=float)
    n = x.shape[0]
    if n < 2 or top_n < 1:
        raise TrainingError("need at least 2 items and top_n >= 1")

    norms = np.linalg.norm(x, axis=1)
    unit = np.where(norms[:, None] > 0, x / np.maximum(norms, 1e-300)[:, None], 0.0)
    cos = unit @ unit.T
    np.fill_diagonal(cos, -np.inf)

    s = np.zeros((n, n))
    k = min(top_n, n - 1)
    for i in range(n):
        row = cos[i]
        # sort by (-similarity, item id) for the deterministic tie rule
        order = np.lexsort((np.arange(n), -row))[:k]
        keep = order[row[order] > 0]
        s[i, keep] = row[keep]
    s = np.maximum(s, s.T)

    deg = s.sum(axis=1)
    isolated = deg == 0
    if isolated.any():
        s[isolated, isolated] = 1.0
        deg = s.sum(axis=1)
    d_inv_sqrt = 1.0 / np.sqrt(deg)
    s_norm = s * d_inv_sqrt[:, None] * d_inv_sqrt[None, :]
    return SemanticGraph(source, top_n, sp.csr_matrix(s_norm))


def graph_convolve(graph: SemanticGraph, h0) -> Tensor:
    """Single unweighted sparse propagation of the item table."""
    h0 = h0 if isinstance(h0, Tensor) else Tensor(h0)
    if h0.shape[0] != graph.norm_adj.shape[0]:
        raise TrainingError("item table rows do not match the graph")
    return spmm(graph.norm_adj, h0)


def contrastive_loss(h_local: Tensor, h_pre: Tensor, tau,
                     standard_infonce=False) -> Tensor:
    """Bidirectional contrastive alignment between the two views.

    The denominator sums over j != i only (the aligned pair is excluded), so
    the loss can go negative; `standard_infonce` switches to the conventional
    form that includes the positive in the denominator.
    """
    if h_local.shape != h_pre.shape:
        raise TrainingError("contrastive views must have identical shape")
    B = h_local.shape[0]
    if B < 2:
        raise TrainingError("contrastive loss needs at least 2 rows")
    nl = h_local / row_norms(h_local)
    np_ = h_pre / row_norms(h_pre)
    sim = (nl @ np_.T) / tau          # sim[i, j] = sim(local_i, pre_j) / tau
    eye = np.eye(B)

    def one_direction(m):
        diag = (m * Tensor(eye)).sum(axis=1)
        e = m.exp()
        denom_mask = np.ones((B, B)) if standard_infonce else 1.0 - eye
        denom = (e * Tensor(denom_mask)).sum(axis=1)
        return (-diag + denom.log()).sum()

    return one_direction(sim) + one_direction(sim.T)


def fuse_views(x_id: Tensor, t_local: Tensor, h_local: Tensor, h_pre: Tensor) -> Tensor:
    """ID embedding plus the three unit-normalized semantic views; zero
    vectors contribute nothing."""
    return (x_id + t_local / row_norms(t_local)
            + h_local / row_norms(h_local)
            + h_pre / row_norms(h_pre))


def predict(x_u, x_i):
    """Preference score: plain dot product."""
    if isinstance(x_u, Tensor):
        return (x_u * x_i).sum(axis=-1)
    return float(np.dot(np.asarray(x_u), np.asarray(x_i)))


class Stage2Trainer:
    """Holds the per-domain fine-tuning state: a fresh copy of the Stage-1
    encoder and adaptation parameters, the frozen pre-trained graph, and the
    frozen final cluster broadcast for the local-adaptation loss."""

    def __init__(self, client: ClientState, t_pre: EmbeddingMatrix,
                 cluster_model: ClusterModel, cfg: Stage2Config):
        self.client = clone_client(client)
        self.cfg = cfg
        self.cluster_model = cluster_model
        self.t_pre = t_pre
        self.pre_graph = build_semantic_graph(t_pre, cfg.top_n, source="pretrained")
        self.local_graph = None
        self.optimizer = Adam(self.client.params, lr=client.cfg.lr)
        self.client.optimizer = self.optimizer

    def refresh_local_graph(self):
        self.local_graph = build_semantic_graph(self.client.encode_all(),
                                                self.cfg.top_n, source="local")

    def epoch(self, epoch_idx, seed=0):
        """One fine-tuning pass over the train pairs; the local semantic graph
        is rebuilt once at the start of the epoch."""
        self.refresh_local_graph()
        cfg, client = self.cfg, self.client
        totals = {"rec": 0.0, "con": 0.0, "kd": 0.0, "total": 0.0}
        n_batches = 0
        for b, batch in enumerate(client.iter_batches(seed=seed * 100003 + epoch_idx)):
            losses = self.step(batch, neg_seed=seed * 7919 + epoch_idx * 131 + b)
            for key in totals:
                totals[key] += losses[key]
            n_batches += 1
        self.optimizer.lr *= cfg.lr_decay
        return {k: v / max(n_batches, 1) for k, v in totals.items()}

    def step(self, batch, neg_seed=0, take_step=True):
        cfg, client = self.cfg, self.client
        users = [u for u, _ in batch]
        pos_items = [i for _, i in batch]
        neg_items = sample_negatives(client.dataset, batch, seed=neg_seed)
        B = len(batch)
        all_items = pos_items + neg_items

        # local pipeline with the frozen global broadcast
        t_norm, t_prime, t_fused, _ = fgsat_forward(client, all_items,
                                                    self.cluster_model)
        user_reprs, item_reprs = propagate(client.graph, client.id_emb,
                                           client.cfg.layers)
        x_u = user_reprs.gather_rows(users)
        x_items = item_reprs.gather_rows(all_items)

        h_local_full = graph_convolve(self.local_graph, client.id_emb.item_table)
        h_pre_full = graph_convolve(self.pre_graph, client.id_emb.item_table)
        h_local = h_local_full.gather_rows(all_items)
        h_pre = h_pre_full.gather_rows(all_items)

        fused = fuse_views(x_items, t_fused, h_local, h_pre)
        pos_scores = (x_u * fused.gather_rows(np.arange(B))).sum(axis=1)
        neg_scores = (x_u * fused.gather_rows(np.arange(B, 2 * B))).sum(axis=1)
        l_rec = bpr_loss(pos_scores, neg_scores)

        uniq = sorted(set(pos_items))
        if cfg.alpha > 0 and len(uniq) >= 2:
            # the alignment loss sums over anchors; average it so alpha
            # weighs it against the per-pair mean ranking loss
            l_con = contrastive_loss(h_local_full.gather_rows(uniq),
                                     h_pre_full.gather_rows(uniq), cfg.tau,
                                     standard_infonce=cfg.standard_infonce)
            l_con = l_con * (1.0 / (2 * len(uniq)))
        else:
            l_con = Tensor(0.0)
        if cfg.beta > 0 and client.cfg.fgsat_enabled:
            # same per-user averaging for the distillation sum
            l_kd = kd_loss(x_u, t_norm.gather_rows(np.arange(B)),
                           t_fused.gather_rows(np.arange(B)))
            l_kd = l_kd * (1.0 / B)
        else:
            l_kd = Tensor(0.0)

        total = l_rec + cfg.alpha * l_con + cfg.beta * l_kd
        if take_step:
            self.optimizer.zero_grad()
            total.backward()
            self.optimizer.step()
        return {"rec": float(l_rec.data), "con": float(l_con.data),
                "kd": float(l_kd.data), "total": float(total.data)}

    def item_and_user_matrices(self):
        """Final fused item matrix and propagated user matrix for ranking."""
        client = self.client
        if self.local_graph is None:
            self.refresh_local_graph()
        all_items = np.arange(client.dataset.num_items)
        _, _, t_fused, _ = fgsat_forward(client, all_items, self.cluster_model)
        user_reprs, item_reprs = propagate(client.graph, client.id_emb,
                                           client.cfg.layers)
        h_local = graph_convolve(self.local_graph, client.id_emb.item_table)
        h_pre = graph_convolve(self.pre_graph, client.id_emb.item_table)
        fused = fuse_views(item_reprs, t_fused, h_local, h_pre)
        return fused.data.copy(), user_reprs.data.copy()


def clone_client(client: ClientState) -> ClientState:
    """Deep copy of a client's trainable state (fresh local specific encoder
    seeded from the Stage-1 weights)."""
    new = copy.copy(client)
    new.enc_w1 = Tensor(client.enc_w1.data.copy(), requires_grad=True)
    new.enc_b1 = Tensor(client.enc_b1.data.copy(), requires_grad=True)
    new.enc_w2 = Tensor(client.enc_w2.data.copy(), requires_grad=True)
    new.enc_b2 = Tensor(client.enc_b2.data.copy(), requires_grad=True)
    from .backbone import IdEmbeddings
    new.id_emb = IdEmbeddings(
        Tensor(client.id_emb.user_table.data.copy(), requires_grad=True),
        Tensor(client.id_emb.item_table.data.copy(), requires_grad=True))
    new.center_w = Tensor(client.center_w.data.copy(), requires_grad=True)
    new.transfer_w = Tensor(client.transfer_w.data.copy(), requires_grad=True)
    new.att_w = Tensor(client.att_w.data.copy(), requires_grad=True)
    new.att_b = Tensor(client.att_b.data.copy(), requires_grad=True)
    new.params = [new.enc_w1, new.enc_b1, new.enc_w2, new.enc_b2,
                  new.id_emb.user_table, new.id_emb.item_table,
                  new.center_w, new.transfer_w, new.att_w, new.att_b]
    return new
