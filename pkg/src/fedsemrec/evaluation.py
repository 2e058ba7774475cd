"""Full-ranking top-K metrics and the similarity-based privacy audit."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import EmbeddingMatrix, InteractionDataset


@dataclass
class RankingReport:
    domain: str
    metrics: dict                      # e.g. {"recall@10": ..., "ndcg@20": ...}
    users_evaluated: int
    per_user: dict = field(default_factory=dict)


@dataclass
class AttackReport:
    domain: str
    f1_by_topk: dict                   # top_k -> mean F1
    per_item: dict = field(default_factory=dict)  # top_k -> list of (p, r, f1)


def rank_full(user_scores, mask):
    """Rank every unmasked item by descending score; ties break toward the
    lower item id."""
    scores = np.asarray(user_scores, dtype=float)
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    candidates = np.array([i for i in range(scores.shape[0]) if i not in mask],
                          dtype=np.int64)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order]


def recall_at_k(ranked, ground_truth, K):
    if not ground_truth:
        raise ValueError("ground truth must be nonempty")
    hits = sum(1 for item in ranked[:K] if item in ground_truth)
    return hits / len(ground_truth)


def ndcg_at_k(ranked, ground_truth, K):
    if not ground_truth:
        raise ValueError("ground truth must be nonempty")
    dcg = sum(1.0 / np.log2(rank + 2)
              for rank, item in enumerate(ranked[:K]) if item in ground_truth)
    ideal = min(len(ground_truth), K)
    idcg = sum(1.0 / np.log2(rank + 2) for rank in range(ideal))
    return float(dcg / idcg)


def evaluate_ranking(ds: InteractionDataset, user_matrix, item_matrix,
                     ks=(10, 20), split="test", keep_per_user=False) -> RankingReport:
    """Full-ranking evaluation: each user's candidates are all items except
    their train+valid positives; users with an empty ground-truth set are
    skipped."""
    gt_map = ds.user_items(split)
    train_pos = ds.user_items("train")
    valid_pos = ds.user_items("valid") if split == "test" else {}

    sums = {f"recall@{k}": 0.0 for k in ks}
    sums.update({f"ndcg@{k}": 0.0 for k in ks})
    per_user = {}
    n = 0
    for user in sorted(gt_map):
        gt = gt_map[user]
        if not gt:
            continue
        mask = set(train_pos.get(user, set()))
        mask |= set(valid_pos.get(user, set()))
        scores = item_matrix @ user_matrix[user]
        ranked = rank_full(scores, mask)
        row = {}
        for k in ks:
            row[f"recall@{k}"] = recall_at_k(ranked, gt, k)
            row[f"ndcg@{k}"] = ndcg_at_k(ranked, gt, k)
        for key, val in row.items():
            sums[key] += val
        if keep_per_user:
            per_user[user] = row
        n += 1
    metrics = {key: (float(val) / n if n else 0.0) for key, val in sums.items()}
    return RankingReport(ds.domain_name, metrics, n, per_user)


def _f1(predicted: set, truth: set):
    if not predicted and not truth:
        return 1.0, 1.0, 1.0
    inter = len(predicted & truth)
    precision = inter / len(predicted) if predicted else 0.0
    recall = inter / len(truth) if truth else 0.0
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


def sia_attack(item_embs: EmbeddingMatrix, interactions: InteractionDataset,
               target_items=None, top_k_values=(1, 3, 5),
               keep_per_item=False) -> AttackReport:
    """Audit of the item-vector upload channel.

    For each target item the attacker takes its `top_k` nearest neighbours by
    cosine similarity among the intercepted vectors and predicts the union of
    those neighbours' interacting users; the mean F1 against the target's true
    user set quantifies leakage.
    """
    x = item_embs.data.astype(float)
    n = x.shape[0]
    norms = np.linalg.norm(x, axis=1)
    unit = np.where(norms[:, None] > 0, x / np.maximum(norms, 1e-300)[:, None], 0.0)
    cos = unit @ unit.T
    np.fill_diagonal(cos, -np.inf)

    item_users: dict[int, set] = {}
    for inter in interactions.interactions:
        item_users.setdefault(inter.item, set()).add(inter.user)

    if target_items is None:
        target_items = sorted(item_users)
    target_items = sorted(target_items)

    f1_by_topk = {}
    per_item = {}
    for top_k in top_k_values:
        rows = []
        for item in target_items:
            order = np.lexsort((np.arange(n), -cos[item]))[:top_k]
            predicted: set = set()
            for neighbour in order:
                predicted |= item_users.get(int(neighbour), set())
            truth = item_users.get(item, set())
            rows.append(_f1(predicted, truth))
        f1_by_topk[top_k] = float(np.mean([r[2] for r in rows])) if rows else 0.0
        if keep_per_item:
            per_item[top_k] = rows
    return AttackReport(interactions.domain_name, f1_by_topk, per_item)
