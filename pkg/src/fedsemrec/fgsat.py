"""Client-side fine-grained semantic adaptation: per-batch secondary centers,
graph-structured transfer, attention fusion, and the Stage-1 objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, concat, row_norms, softmax
from .backbone import (Adam, BipartiteGraph, IdEmbeddings, TrainingError,
                       bpr_loss, init_embedding, propagate, sample_negatives)
from .data import EmbeddingMatrix, InteractionDataset
from .server import ClusterModel


@dataclass
class FgsatConfig:
    d_t: int = 64
    hidden: int = 256
    eta: float = 0.01
    lambda_kd: float = 0.2
    lambda_fa: float = 0.1
    layers: int = 2
    lr: float = 0.005
    batch_size: int = 1024
    fgsat_enabled: bool = True


class ClientState:
    """One domain's trainable state: text encoder, ID tables, adaptation
    parameters and the optimizer."""

    def __init__(self, dataset: InteractionDataset, raw_emb: EmbeddingMatrix,
                 cfg: FgsatConfig, seed=0):
        if raw_emb.rows != dataset.num_items:
            raise TrainingError(
                f"{dataset.domain_name}: embeddings have {raw_emb.rows} rows "
                f"but the dataset has {dataset.num_items} items")
        self.dataset = dataset
        self.raw_emb = raw_emb
        self.cfg = cfg
        self.name = dataset.domain_name
        self.rng = np.random.default_rng(seed)
        self.graph = BipartiteGraph.from_dataset(dataset)

        d, h, in_dim = cfg.d_t, cfg.hidden, raw_emb.cols
        rng = self.rng
        # two-layer perceptron: in_dim -> hidden -> d_t, ReLU after hidden
        self.enc_w1 = init_embedding(in_dim, h, rng)
        self.enc_b1 = Tensor(np.zeros(h), requires_grad=True)
        self.enc_w2 = init_embedding(h, d, rng)
        self.enc_b2 = Tensor(np.zeros(d), requires_grad=True)
        self.id_emb = IdEmbeddings.create(dataset.num_users, dataset.num_items, d, rng)
        self.center_w = init_embedding(d, d, rng)     # secondary-center transform
        self.transfer_w = init_embedding(d, d, rng)   # graph-transfer weight
        self.att_w = init_embedding(d, 1, rng)        # shared attention scorer
        self.att_b = Tensor(np.zeros(1), requires_grad=True)

        self.params = [self.enc_w1, self.enc_b1, self.enc_w2, self.enc_b2,
                       self.id_emb.user_table, self.id_emb.item_table,
                       self.center_w, self.transfer_w, self.att_w, self.att_b]
        self.optimizer = Adam(self.params, lr=cfg.lr)

    def encode(self, rows) -> Tensor:
        """Encoder output for the given item rows of the raw embedding matrix."""
        x = Tensor(self.raw_emb.data[np.asarray(rows, dtype=np.int64)].astype(np.float64))
        hidden = (x @ self.enc_w1 + self.enc_b1).relu()
        return hidden @ self.enc_w2 + self.enc_b2

    def encode_all(self) -> np.ndarray:
        return self.encode(np.arange(self.dataset.num_items)).data.copy()

    def iter_batches(self, seed):
        """Seeded shuffle of the train pairs, yielded in batch_size chunks."""
        rng = np.random.default_rng(seed)
        pairs = [(self.dataset.interactions[i].user, self.dataset.interactions[i].item)
                 for i in self.dataset.train_idx]
        order = rng.permutation(len(pairs))
        for start in range(0, len(pairs), self.cfg.batch_size):
            yield [pairs[j] for j in order[start:start + self.cfg.batch_size]]


def secondary_centers(assignments, T: Tensor, eta, center_w: Tensor):
    """Ridge re-estimate of the batch-present cluster centers.

    The one-hot indicator makes the ridge system diagonal, so each raw center
    row is n_k/(n_k + eta) times the member mean.  Returns the raw centers,
    their nonlinear transform, and the global-cluster -> batch-row map.
    """
    if eta <= 0:
        raise TrainingError("eta must be positive")
    assignments = np.asarray(assignments, dtype=np.int64)
    present = np.unique(assignments)
    local_row = {int(g): r for r, g in enumerate(present)}
    B = assignments.shape[0]
    y = np.zeros((B, present.shape[0]))
    y[np.arange(B), [local_row[int(g)] for g in assignments]] = 1.0
    counts = y.sum(axis=0)
    solve = (y / (counts + eta)).T          # (K_b, B): (Y^T Y + eta I)^-1 Y^T
    c_raw = Tensor(solve) @ T
    c_prime = (c_raw @ center_w).relu()
    return c_raw, c_prime, local_row


def cosine_adjacency(z: np.ndarray):
    """Remapped cosine adjacency: a -> (a+1)/2 off the diagonal, self-loops
    forced to 1, and zero-norm rows dissimilar to everything."""
    norms = np.linalg.norm(z, axis=1)
    nonzero = norms > 0
    unit = np.where(nonzero[:, None], z / np.maximum(norms, 1e-300)[:, None], 0.0)
    cos = unit @ unit.T
    a = (cos + 1.0) / 2.0
    mask = np.outer(nonzero, nonzero).astype(float)
    a = a * mask
    np.fill_diagonal(a, 1.0)
    return a


def graph_transfer(c_prime: Tensor, T: Tensor, transfer_w: Tensor):
    """Propagate over the fully connected [centers; items] similarity graph
    and return the transferred item rows."""
    z = concat([c_prime, T], axis=0)
    n = z.shape[0]
    B = T.shape[0]

    norms = row_norms(z)
    unit = z / norms
    cos = unit @ unit.T
    a = (cos + 1.0) / 2.0
    # zero-norm rows contribute no off-diagonal similarity; diagonal fixed at 1
    nonzero = (np.linalg.norm(z.data, axis=1) > 0).astype(float)
    mask = Tensor(np.outer(nonzero, nonzero) * (1.0 - np.eye(n)))
    a = a * mask + Tensor(np.eye(n))

    deg = a.sum(axis=1, keepdims=True)
    d_inv_sqrt = deg ** -0.5
    lap = a * d_inv_sqrt * d_inv_sqrt.T
    z_out = (lap @ z @ transfer_w).relu()
    t_prime = z_out.gather_rows(np.arange(n - B, n))
    return t_prime, z_out, lap


def attention_fuse(t_prime: Tensor, global_centers: Tensor, sec_centers: Tensor,
                   att_w: Tensor, att_b: Tensor):
    """Softmax-weighted combination of the transferred representation, the
    item's global center and its secondary center (shared linear scorer)."""
    def score(x):
        return x @ att_w + att_b
    scores = concat([score(t_prime), score(global_centers), score(sec_centers)], axis=1)
    q = softmax(scores, axis=1)
    qt = q.T
    q1 = qt.gather_rows([0]).T
    q2 = qt.gather_rows([1]).T
    q3 = qt.gather_rows([2]).T
    fused = q1 * t_prime + q2 * global_centers + q3 * sec_centers
    return fused, q


def kd_loss(user_reprs: Tensor, T: Tensor, T_fused: Tensor,
            teacher_log_p=None) -> Tensor:
    """KL(fused distribution || original distribution), summed over the batch.

    Distributions are softmaxes of each user's scores over the batch's items.
    The original branch is the teacher and is detached; pass teacher_log_p to
    freeze it explicitly (e.g. when finite-differencing shared parameters).
    """
    if teacher_log_p is None:
        teacher_scores = user_reprs.data @ T.data.T
        shifted = teacher_scores - teacher_scores.max(axis=1, keepdims=True)
        log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    else:
        log_p = teacher_log_p

    student = user_reprs @ T_fused.T
    shift = Tensor(student.data.max(axis=1, keepdims=True))
    s = student - shift
    log_q = s - s.exp().sum(axis=1, keepdims=True).log()
    q = log_q.exp()
    return (q * (log_q - Tensor(log_p))).sum()


def fa_loss(t_prime: Tensor, t_fused: Tensor) -> Tensor:
    """Mean squared Euclidean distance between transferred and fused rows."""
    diff = t_prime - t_fused
    return (diff * diff).sum(axis=1).mean()


def fgsat_forward(client: ClientState, item_ids, cluster_model: ClusterModel):
    """Shared pipeline: encode -> broadcast-stat normalize -> secondary
    centers -> graph transfer -> attention fusion.  Returns (T_norm, T', T'')."""
    snap = cluster_model.stats_snapshots[client.name]
    t_enc = client.encode(item_ids)
    t_norm = (t_enc - Tensor(snap.mean)) / Tensor(np.sqrt(snap.var + snap.eps))

    assign = cluster_model.assignments[client.name][np.asarray(item_ids, dtype=np.int64)]
    if not client.cfg.fgsat_enabled:
        # adaptation ablated: the broadcast center stands in for the fused
        # representation, with no secondary re-estimation or transfer
        center_rows = Tensor(cluster_model.centers[assign])
        return t_norm, center_rows, center_rows, None

    c_raw, c_prime, local_row = secondary_centers(assign, t_norm, client.cfg.eta,
                                                  client.center_w)
    t_prime, _, _ = graph_transfer(c_prime, t_norm, client.transfer_w)

    gc_rows = Tensor(cluster_model.centers[assign])
    sec_rows = c_prime.gather_rows([local_row[int(g)] for g in assign])
    t_fused, q = attention_fuse(t_prime, gc_rows, sec_rows, client.att_w, client.att_b)
    return t_norm, t_prime, t_fused, q


def rank_item_vector(item_id_reprs: Tensor, t_fused: Tensor) -> Tensor:
    """ID representation plus the unit-normalized fused semantic vector."""
    return item_id_reprs + t_fused / row_norms(t_fused)


def stage1_step(client: ClientState, batch, cluster_model: ClusterModel,
                neg_seed=0, take_step=True):
    """One Stage-1 optimization step; returns the loss components."""
    users = [u for u, _ in batch]
    pos_items = [i for _, i in batch]
    neg_items = sample_negatives(client.dataset, batch, seed=neg_seed)
    B = len(batch)

    all_items = pos_items + neg_items
    t_norm, t_prime, t_fused, _ = fgsat_forward(client, all_items, cluster_model)

    user_reprs, item_reprs = propagate(client.graph, client.id_emb, client.cfg.layers)
    x_u = user_reprs.gather_rows(users)
    x_items = item_reprs.gather_rows(all_items)
    vec = rank_item_vector(x_items, t_fused)

    v_pos = vec.gather_rows(np.arange(B))
    v_neg = vec.gather_rows(np.arange(B, 2 * B))
    pos_scores = (x_u * v_pos).sum(axis=1)
    neg_scores = (x_u * v_neg).sum(axis=1)
    l_rec = bpr_loss(pos_scores, neg_scores)

    if client.cfg.fgsat_enabled:
        t_norm_pos = t_norm.gather_rows(np.arange(B))
        t_prime_pos = t_prime.gather_rows(np.arange(B))
        t_fused_pos = t_fused.gather_rows(np.arange(B))
        # the distillation loss sums over users; average it so lambda_kd
        # weighs it against the per-pair mean ranking loss
        l_kd = kd_loss(x_u, t_norm_pos, t_fused_pos) * (1.0 / B)
        l_fa = fa_loss(t_prime_pos, t_fused_pos)
    else:
        l_kd = Tensor(0.0)
        l_fa = Tensor(0.0)

    total = l_rec + client.cfg.lambda_kd * l_kd + client.cfg.lambda_fa * l_fa
    if take_step:
        client.optimizer.zero_grad()
        total.backward()
        client.optimizer.step()
    return {"rec": float(l_rec.data), "kd": float(l_kd.data),
            "fa": float(l_fa.data), "total": float(total.data)}


def export_pretrained(client: ClientState) -> EmbeddingMatrix:
    """Encoder output over all items (pre-adaptation), as an encoded matrix."""
    return EmbeddingMatrix(client.encode_all().astype(np.float32), kind="encoded")


def export_fused(client: ClientState, cluster_model: ClusterModel) -> EmbeddingMatrix:
    """Alternative export: the post-adaptation fused representations, computed
    over all items in one pass."""
    _, _, t_fused, _ = fgsat_forward(client, np.arange(client.dataset.num_items),
                                     cluster_model)
    return EmbeddingMatrix(t_fused.data.astype(np.float32), kind="encoded")
