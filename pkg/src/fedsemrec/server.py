"""Federated coordinator: per-domain normalization statistics, weighted
k-means over the pooled item representations, and the per-round
aggregate/cluster/broadcast cycle.

Nothing in this module accepts user identifiers or interactions; the server
only ever sees item-level matrices.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ClusteringError(Exception):
    pass


@dataclass
class DomainStats:
    dim: int
    momentum: float = 0.9
    eps: float = 1e-5
    mean: np.ndarray = field(init=False)
    var: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mean = np.zeros(self.dim)
        self.var = np.ones(self.dim)

    def snapshot(self):
        s = DomainStats(self.dim, self.momentum, self.eps)
        s.mean = self.mean.copy()
        s.var = self.var.copy()
        return s


def normalize_batch(stats: DomainStats, T, training=False):
    """Standardize rows of T with the domain's running stats; in training
    mode the running mean/variance are then moved toward the batch's
    elementwise mean and population variance."""
    T = np.asarray(T, dtype=float)
    out = (T - stats.mean) / np.sqrt(stats.var + stats.eps)
    if training:
        batch_mean = T.mean(axis=0)
        batch_var = T.var(axis=0)  # population variance; single row -> 0
        rho = stats.momentum
        stats.mean = rho * stats.mean + (1 - rho) * batch_mean
        stats.var = rho * stats.var + (1 - rho) * batch_var
    return out


def denormalize(stats: DomainStats, T):
    return np.asarray(T) * np.sqrt(stats.var + stats.eps) + stats.mean


@dataclass
class ClusterModel:
    centers: np.ndarray                    # (K, d)
    assignments: dict                      # domain name -> int array per item
    inertia: float
    iterations_run: int
    stats_snapshots: dict = field(default_factory=dict)  # domain -> DomainStats

    @property
    def K(self):
        return self.centers.shape[0]


@dataclass
class RoundPlan:
    total_rounds: int = 20
    local_epochs_per_round: int = 1
    current_round: int = 1


def _assign(points, centers):
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1), d2


def weighted_kmeans(points, K, max_iters=100, tol=None, seed=0, delta=1e-6,
                    init_centers=None, weighted=True):
    """K-means whose center update weights members by 1/(distance + delta).

    Weights are measured against the plain member mean, so the update is a
    robustified mean rather than a copy of the previous center.  Seeding
    picks K distinct points, each proportional to squared distance from the
    centers already chosen; iteration stops when the assignment is stable or
    the budget runs out.  An empty cluster is re-seeded to the point
    currently farthest from its assigned center.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[0]
    distinct = np.unique(points, axis=0)
    if K < 1 or K > distinct.shape[0]:
        raise ClusteringError(f"K={K} but only {distinct.shape[0]} distinct points")
    rng = np.random.default_rng(seed)
    if init_centers is not None:
        centers = np.array(init_centers, dtype=float)
    else:
        chosen = [int(rng.integers(distinct.shape[0]))]
        while len(chosen) < K:
            d2 = ((distinct[:, None, :] - distinct[chosen][None, :, :]) ** 2
                  ).sum(axis=2).min(axis=1)
            d2[chosen] = 0.0
            probs = d2 / d2.sum() if d2.sum() > 0 else None
            if probs is None:
                remaining = [i for i in range(distinct.shape[0]) if i not in chosen]
                chosen.append(int(rng.choice(remaining)))
            else:
                chosen.append(int(rng.choice(distinct.shape[0], p=probs)))
        centers = distinct[chosen].copy()

    labels = None
    iters = 0
    for iters in range(1, max_iters + 1):
        new_labels, d2 = _assign(points, centers)
        # empty-cluster repair: steal the globally farthest point
        for k in range(K):
            if not (new_labels == k).any():
                own_d = d2[np.arange(n), new_labels]
                far = int(own_d.argmax())
                centers[k] = points[far]
                new_labels, d2 = _assign(points, centers)
        if labels is not None and (new_labels == labels).all():
            labels = new_labels
            break
        labels = new_labels
        for k in range(K):
            members = points[labels == k]
            if members.shape[0] == 0:
                continue
            if weighted:
                mean = members.mean(axis=0)
                dist = np.linalg.norm(members - mean, axis=1)
                w = 1.0 / (dist + delta)
            else:
                w = np.ones(members.shape[0])
            centers[k] = (w[:, None] * members).sum(axis=0) / w.sum()

    labels, d2 = _assign(points, centers)
    inertia = float(d2[np.arange(n), labels].sum())
    return centers, labels, inertia, iters


def run_round(uploads: dict, stats: dict, plan: RoundPlan, K, seed=0,
              prev_model: ClusterModel | None = None, warm_start=True,
              weighted=True) -> ClusterModel:
    """One synchronous server round.

    `uploads` maps domain name -> item matrix (encoder output over all of the
    domain's items).  Each matrix is normalized with its own DomainStats in
    training mode, the results are pooled, clustered, and per-domain
    assignment maps plus the stats snapshots are returned for broadcast.
    """
    names = sorted(uploads)
    dims = {uploads[n].shape[1] for n in names}
    if len(dims) != 1:
        raise ClusteringError(f"clients uploaded mismatched dimensions: {dims}")

    normalized = {}
    for name in names:
        normalized[name] = normalize_batch(stats[name], uploads[name], training=True)
    pooled = np.concatenate([normalized[n] for n in names], axis=0)

    init = None
    if warm_start and prev_model is not None and prev_model.K == K:
        init = prev_model.centers
    centers, labels, inertia, iters = weighted_kmeans(
        pooled, K, seed=seed, init_centers=init, weighted=weighted)

    assignments = {}
    offset = 0
    for name in names:
        rows = normalized[name].shape[0]
        assignments[name] = labels[offset:offset + rows].copy()
        offset += rows
    snaps = {name: stats[name].snapshot() for name in names}
    return ClusterModel(centers, assignments, inertia, iters, snaps)
