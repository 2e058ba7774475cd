"""Interaction logs, embedding files and synthetic benchmark generation.

Loaders are pure functions and the returned datasets are immutable
(frozen dataclasses over tuples / read-only arrays), so they can be shared
freely across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EMB1_MAGIC = b"EMB1"
RAW_TEXT_DIM = 1024


class DataError(Exception):
    """Malformed input file or contract violation in a data operation."""


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    timestamp: int | None = None


@dataclass(frozen=True)
class InteractionDataset:
    domain_name: str
    num_users: int
    num_items: int
    interactions: tuple[Interaction, ...]
    train_idx: tuple[int, ...] = ()
    valid_idx: tuple[int, ...] = ()
    test_idx: tuple[int, ...] = ()
    split_note: str = ""

    def user_items(self, split="train"):
        """Map user -> set of item ids for one split ('train'/'valid'/'test'/'all')."""
        if split == "all":
            idx = range(len(self.interactions))
        else:
            idx = getattr(self, f"{split}_idx")
        out: dict[int, set[int]] = {}
        for i in idx:
            inter = self.interactions[i]
            out.setdefault(inter.user, set()).add(inter.item)
        return out


@dataclass(frozen=True)
class EmbeddingMatrix:
    data: np.ndarray          # (rows, cols) float32
    kind: str = "encoded"     # "raw_text" (1024 cols) or "encoded"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if not np.isfinite(arr).all():
            r, c = np.argwhere(~np.isfinite(arr))[0]
            raise DataError(f"non-finite embedding value at row {r}, col {c}")
        if self.kind == "raw_text" and arr.shape[1] != RAW_TEXT_DIM:
            raise DataError(f"raw_text embeddings must have {RAW_TEXT_DIM} columns, "
                            f"got {arr.shape[1]}")
        object.__setattr__(self, "data", arr)
        arr.setflags(write=False)

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    num_users: int = 500
    num_items: int = 300
    num_topics: int = 4
    noise_scale: float = 0.05
    seed: int = 0
    min_interactions: int = 6
    max_interactions: int = 20

    def __post_init__(self):
        if self.num_topics > self.num_items:
            raise DataError("num_topics must not exceed num_items")


# ---------------------------------------------------------------------------
# interaction TSV

def _parse_tsv(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3):
                raise DataError(f"{path}: malformed row at line {lineno}: {line!r}")
            user_tok, item_tok = parts[0], parts[1]
            ts = None
            if len(parts) == 3 and parts[2] != "":
                try:
                    ts = int(parts[2])
                except ValueError as exc:
                    raise DataError(f"{path}: bad timestamp at line {lineno}") from exc
            rows.append((user_tok, item_tok, ts))
    return rows


def _kcore(pairs, min_core):
    """Iteratively drop users/items with < min_core interactions until fixpoint."""
    pairs = set(pairs)
    while True:
        u_deg: dict = {}
        i_deg: dict = {}
        for u, i in pairs:
            u_deg[u] = u_deg.get(u, 0) + 1
            i_deg[i] = i_deg.get(i, 0) + 1
        keep = {(u, i) for (u, i) in pairs
                if u_deg[u] >= min_core and i_deg[i] >= min_core}
        if keep == pairs:
            return pairs
        pairs = keep


def load_interactions(path, min_core=5, domain_name=None) -> InteractionDataset:
    """Load a `user<TAB>item[<TAB>timestamp]` TSV, apply iterative k-core
    filtering, and densely re-index users and items from 0.

    Duplicate (user, item) pairs collapse to one record keeping the earliest
    timestamp.
    """
    if min_core < 1:
        raise DataError("min_core must be >= 1")
    rows = _parse_tsv(path)

    # dedup, earliest timestamp wins
    first_ts: dict = {}
    for u, i, ts in rows:
        key = (u, i)
        if key not in first_ts:
            first_ts[key] = ts
        elif ts is not None and (first_ts[key] is None or ts < first_ts[key]):
            first_ts[key] = ts

    kept = _kcore(first_ts.keys(), min_core)
    if not kept:
        raise DataError(f"{path}: no interactions remain after {min_core}-core filtering")

    def token_order(tokens):
        # numeric token sets keep numeric order so integer ids round-trip
        if all(t.lstrip("-").isdigit() for t in tokens):
            return sorted(tokens, key=int)
        return sorted(tokens)

    users = token_order({u for u, _ in kept})
    items = token_order({i for _, i in kept})
    u_map = {tok: idx for idx, tok in enumerate(users)}
    i_map = {tok: idx for idx, tok in enumerate(items)}
    interactions = tuple(
        Interaction(u_map[u], i_map[i], first_ts[(u, i)])
        for (u, i) in sorted(kept, key=lambda p: (u_map[p[0]], i_map[p[1]]))
    )
    name = domain_name or Path(path).stem
    return InteractionDataset(name, len(users), len(items), interactions)


def split_dataset(ds: InteractionDataset, ratios=(0.8, 0.1, 0.1), seed=0) -> InteractionDataset:
    """Per-user chronological (or seeded-shuffle) split into train/valid/test.

    Counts use floor for valid/test with the remainder going to train; users
    with fewer than 3 interactions contribute everything to train.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    by_user: dict[int, list[int]] = {}
    for idx, inter in enumerate(ds.interactions):
        by_user.setdefault(inter.user, []).append(idx)

    has_ts = all(inter.timestamp is not None for inter in ds.interactions)
    train, valid, test = [], [], []
    for user in sorted(by_user):
        idxs = by_user[user]
        if has_ts:
            idxs = sorted(idxs, key=lambda j: (ds.interactions[j].timestamp,
                                               ds.interactions[j].item))
        else:
            idxs = list(rng.permutation(idxs))
        n = len(idxs)
        if n < 3:
            train.extend(idxs)
            continue
        n_valid = int(np.floor(n * ratios[1]))
        # a user admitted to evaluation always gets at least one test item
        n_test = max(int(np.floor(n * ratios[2])), 1)
        if n >= 10:
            n_valid = max(n_valid, 1)
        n_train = n - n_valid - n_test
        train.extend(idxs[:n_train])
        valid.extend(idxs[n_train:n_train + n_valid])
        test.extend(idxs[n_train + n_valid:])

    note = "chronological" if has_ts else f"seeded-shuffle(seed={seed})"
    return InteractionDataset(ds.domain_name, ds.num_users, ds.num_items,
                              ds.interactions, tuple(train), tuple(valid),
                              tuple(test), split_note=note)


# ---------------------------------------------------------------------------
# EMB1 binary format

def write_embeddings(path, emb: EmbeddingMatrix):
    """Write `EMB1 | u32 rows | u32 cols | f32 row-major data` (little-endian)."""
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", emb.rows, emb.cols))
        fh.write(emb.data.astype("<f4").tobytes())


def load_embeddings(path, expected_rows=None, kind=None) -> EmbeddingMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMB1_MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {EMB1_MAGIC!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise DataError(f"{path}: truncated header")
        rows, cols = struct.unpack("<II", header)
        payload = fh.read()
    expected_bytes = rows * cols * 4
    if len(payload) != expected_bytes:
        raise DataError(f"{path}: expected {expected_bytes} payload bytes, got {len(payload)}")
    if expected_rows is not None and rows != expected_rows:
        raise DataError(f"{path}: file declares {rows} rows but {expected_rows} expected")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, cols)
    if kind is None:
        kind = "raw_text" if cols == RAW_TEXT_DIM else "encoded"
    return EmbeddingMatrix(data, kind=kind)


# ---------------------------------------------------------------------------
# synthetic two-domain benchmark

def generate_synthetic(spec: SyntheticSpec):
    """Two seeded domains sharing latent topics.

    Returns ``[(dataset_a, embeddings_a), (dataset_b, embeddings_b)]``.  Item
    embeddings are topic centroids plus Gaussian noise; interactions are
    sampled proportionally to each user's topic-preference vector, so cluster
    structure is recoverable across domains.
    """
    rng = np.random.default_rng(spec.seed)
    centroids = rng.normal(size=(spec.num_topics, RAW_TEXT_DIM))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    out = []
    for domain in ("domain_a", "domain_b"):
        topics = rng.integers(0, spec.num_topics, size=spec.num_items)
        # every topic gets at least one item
        topics[:spec.num_topics] = np.arange(spec.num_topics)
        emb = centroids[topics] + spec.noise_scale * rng.normal(
            size=(spec.num_items, RAW_TEXT_DIM))

        prefs = rng.dirichlet(np.full(spec.num_topics, 0.4), size=spec.num_users)
        pairs = []
        for u in range(spec.num_users):
            n_u = int(rng.integers(spec.min_interactions, spec.max_interactions + 1))
            n_u = min(n_u, spec.num_items)
            weights = prefs[u][topics] + 1e-9
            weights = weights / weights.sum()
            chosen = rng.choice(spec.num_items, size=n_u, replace=False, p=weights)
            for rank, item in enumerate(chosen):
                pairs.append(Interaction(u, int(item), timestamp=rank))
        ds = InteractionDataset(domain, spec.num_users, spec.num_items, tuple(pairs))
        out.append((ds, EmbeddingMatrix(emb.astype(np.float32), kind="raw_text"),
                    topics.copy()))
    return [(ds, emb) for ds, emb, _ in out], [t for _, _, t in out]


def write_interactions(path, ds: InteractionDataset):
    """Serialize a dataset back to the interaction TSV format."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# domain={ds.domain_name}\n")
        for inter in ds.interactions:
            if inter.timestamp is None:
                fh.write(f"{inter.user}\t{inter.item}\n")
            else:
                fh.write(f"{inter.user}\t{inter.item}\t{inter.timestamp}\n")
