import numpy as np
import pytest

from fedsemrec.autodiff import Tensor, finite_difference_check
from fedsemrec.backbone import bpr_loss, propagate, sample_negatives
from fedsemrec.data import (EmbeddingMatrix, Interaction, InteractionDataset,
                            load_embeddings, write_embeddings)
from fedsemrec.fgsat import (ClientState, FgsatConfig, attention_fuse,
                             export_pretrained, fa_loss, fgsat_forward,
                             graph_transfer, kd_loss, rank_item_vector,
                             secondary_centers, stage1_step)
from fedsemrec.server import DomainStats, RoundPlan, run_round


def dense_ridge_oracle(assignments, T, eta):
    """Solve (Y^T Y + eta I)^-1 Y^T T with a dense linear solve."""
    present = np.unique(assignments)
    B = len(assignments)
    y = np.zeros((B, len(present)))
    for r, g in enumerate(present):
        y[assignments == g, r] = 1.0
    lhs = y.T @ y + eta * np.eye(len(present))
    return np.linalg.solve(lhs, y.T @ T)


def graph_transfer_oracle(c_prime, T, w2):
    z = np.vstack([c_prime, T])
    n = z.shape[0]
    norms = np.linalg.norm(z, axis=1)
    nonzero = norms > 0
    unit = np.where(nonzero[:, None], z / np.maximum(norms, 1e-300)[:, None], 0.0)
    a = (unit @ unit.T + 1.0) / 2.0
    a *= np.outer(nonzero, nonzero)
    np.fill_diagonal(a, 1.0)
    d = a.sum(axis=1)
    lap = a / np.sqrt(d)[:, None] / np.sqrt(d)[None, :]
    z_out = np.maximum(lap @ z @ w2, 0.0)
    return z_out[-T.shape[0]:], lap


def test_secondary_centers_singletons_vanishing_eta():
    T = Tensor(np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]))
    w1 = Tensor(np.eye(2))
    c_raw, _, local_row = secondary_centers([0, 1, 2], T, 1e-12, w1)
    assert np.allclose(c_raw.data, T.data, atol=1e-10)
    assert local_row == {0: 0, 1: 1, 2: 2}


def test_secondary_centers_two_member_spot_value():
    T = Tensor(np.array([[1.0, 1.0], [3.0, 3.0]]))
    c_raw, _, _ = secondary_centers([4, 4], T, 0.01, Tensor(np.eye(2)))
    expected = (2.0 / 2.01) * np.array([2.0, 2.0])
    assert np.allclose(c_raw.data[0], expected, atol=1e-12)
    assert c_raw.data[0, 0] == pytest.approx(1.990, abs=1e-3)


def test_secondary_centers_vs_dense_solve():
    rng = np.random.default_rng(0)
    T = rng.normal(size=(12, 5))
    assignments = rng.integers(0, 4, size=12)
    c_raw, _, local_row = secondary_centers(assignments, Tensor(T), 0.01,
                                            Tensor(np.eye(5)))
    oracle = dense_ridge_oracle(assignments, T, 0.01)
    assert np.allclose(c_raw.data, oracle, atol=1e-8)
    # row order follows sorted global cluster ids
    assert list(local_row) == sorted(local_row)


def test_secondary_centers_relu_kill():
    T = Tensor(np.array([[-1.0, -2.0], [-3.0, -4.0]]))
    _, c_prime, _ = secondary_centers([0, 0], T, 0.01, Tensor(np.eye(2)))
    assert (c_prime.data == 0).all()


def test_secondary_centers_eta_must_be_positive():
    with pytest.raises(Exception):
        secondary_centers([0], Tensor(np.zeros((1, 2))), 0.0, Tensor(np.eye(2)))


def test_graph_transfer_identical_pair():
    row = np.array([[0.5, -1.0, 2.0]])
    t_prime, _, _ = graph_transfer(Tensor(row.copy()), Tensor(row.copy()),
                                   Tensor(np.eye(3)))
    # A is all-ones 2x2, L all-1/2, so the output is ReLU(the shared row)
    assert np.allclose(t_prime.data, np.maximum(row, 0.0), atol=1e-9)


def test_graph_transfer_orthogonal_pair_matches_oracle():
    c = np.array([[1.0, 0.0]])
    T = np.array([[0.0, 1.0]])
    w2 = np.random.default_rng(1).normal(size=(2, 2))
    t_prime, _, lap = graph_transfer(Tensor(c), Tensor(T), Tensor(w2))
    oracle_t, oracle_lap = graph_transfer_oracle(c, T, w2)
    assert lap.data[0, 1] == pytest.approx(0.5 / 1.5, abs=1e-9)  # a=1/2, deg=3/2
    assert np.allclose(lap.data, oracle_lap, atol=1e-6)
    assert np.allclose(t_prime.data, oracle_t, atol=1e-6)


def test_graph_transfer_dense_oracle_four_nodes():
    rng = np.random.default_rng(2)
    c = rng.normal(size=(2, 3))
    T = rng.normal(size=(2, 3))
    w2 = rng.normal(size=(3, 3))
    t_prime, _, lap = graph_transfer(Tensor(c), Tensor(T), Tensor(w2))
    oracle_t, oracle_lap = graph_transfer_oracle(c, T, w2)
    assert np.allclose(lap.data, oracle_lap, atol=1e-6)
    assert np.allclose(t_prime.data, oracle_t, atol=1e-6)
    assert np.allclose(lap.data, lap.data.T, atol=1e-12)


def test_graph_transfer_zero_weight():
    rng = np.random.default_rng(3)
    t_prime, _, _ = graph_transfer(Tensor(rng.normal(size=(2, 3))),
                                   Tensor(rng.normal(size=(3, 3))),
                                   Tensor(np.zeros((3, 3))))
    assert (t_prime.data == 0).all()


def test_graph_transfer_zero_norm_row_isolated():
    c = np.array([[0.0, 0.0]])     # zero-norm center row
    T = np.array([[1.0, 0.0], [0.0, 1.0]])
    _, _, lap = graph_transfer(Tensor(c), Tensor(T), Tensor(np.eye(2)))
    a_row0 = lap.data[0] * np.sqrt(lap.data.sum())  # just check structure
    # row 0 keeps only its self-loop
    assert lap.data[0, 1] == pytest.approx(0.0, abs=1e-9)
    assert lap.data[0, 2] == pytest.approx(0.0, abs=1e-9)
    assert lap.data[0, 0] > 0


def test_graph_transfer_gradients():
    rng = np.random.default_rng(4)
    c = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    T = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(3, 3)), requires_grad=True)

    def f():
        t_prime, z_out, _ = graph_transfer(c, T, w2)
        return (t_prime * t_prime).sum() + z_out.sum()
    finite_difference_check(f, [c, T, w2])


def _fuse(scores_target, d=2):
    """Build inputs whose three attention scores equal scores_target."""
    att_w = Tensor(np.ones((d, 1)) / d)
    att_b = Tensor(np.zeros(1))
    mk = lambda s: Tensor(np.full((1, d), float(s)))
    return attention_fuse(mk(scores_target[0]), mk(scores_target[1]),
                          mk(scores_target[2]), att_w, att_b)


def test_attention_equal_scores_mean_fusion():
    rng = np.random.default_rng(5)
    t, c, s = (Tensor(rng.normal(size=(3, 4))) for _ in range(3))
    fused, q = attention_fuse(t, c, s, Tensor(np.zeros((4, 1))),
                              Tensor(np.array([7.0])))
    assert np.allclose(q.data, 1.0 / 3.0)
    assert np.allclose(fused.data, (t.data + c.data + s.data) / 3.0, atol=1e-12)


def test_attention_softmax_spot_value():
    _, q = _fuse([1.0, 0.0, 0.0])
    assert q.data[0, 0] == pytest.approx(0.576117, abs=1e-5)
    assert q.data[0, 1] == pytest.approx(0.211942, abs=1e-5)
    assert q.data[0, 2] == pytest.approx(0.211942, abs=1e-5)


def test_attention_weights_valid_distribution():
    rng = np.random.default_rng(6)
    t, c, s = (Tensor(rng.normal(size=(5, 3))) for _ in range(3))
    _, q = attention_fuse(t, c, s, Tensor(rng.normal(size=(3, 1))),
                          Tensor(rng.normal(size=1)))
    assert np.allclose(q.data.sum(axis=1), 1.0)
    assert ((q.data > 0) & (q.data < 1)).all()


def test_attention_gradients():
    rng = np.random.default_rng(7)
    t = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    c = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    s = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 1)), requires_grad=True)
    b = Tensor(rng.normal(size=1), requires_grad=True)

    def f():
        fused, _ = attention_fuse(t, c, s, w, b)
        return (fused * fused).sum()
    finite_difference_check(f, [t, c, s, w, b])


def test_kd_identical_representations_zero():
    rng = np.random.default_rng(8)
    users = Tensor(rng.normal(size=(4, 3)))
    T = Tensor(rng.normal(size=(5, 3)))
    loss = kd_loss(users, T, Tensor(T.data.copy()))
    assert float(loss.data) == pytest.approx(0.0, abs=1e-12)


def test_kd_spot_value():
    # one user, two items; teacher scores equal, student softmax = (0.9, 0.1)
    users = Tensor(np.array([[1.0]]))
    T = Tensor(np.array([[0.0], [0.0]]))
    fused = Tensor(np.array([[np.log(9.0)], [0.0]]))
    loss = kd_loss(users, T, fused)
    expected = 0.9 * np.log(1.8) + 0.1 * np.log(0.2)
    assert float(loss.data) == pytest.approx(expected, abs=1e-12)
    assert float(loss.data) == pytest.approx(0.368064, abs=1e-5)


def test_kd_shift_invariance():
    users = Tensor(np.array([[1.0]]))
    T = Tensor(np.array([[0.3], [-0.2], [0.8]]))
    shifted = Tensor(T.data + 5.0)     # adds 5 to every fused score
    loss = kd_loss(users, T, shifted)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-10)


def test_kd_nonnegative():
    rng = np.random.default_rng(9)
    for trial in range(5):
        users = Tensor(rng.normal(size=(3, 4)))
        T = Tensor(rng.normal(size=(6, 4)))
        fused = Tensor(rng.normal(size=(6, 4)))
        assert float(kd_loss(users, T, fused).data) >= -1e-12


def test_kd_teacher_detached():
    rng = np.random.default_rng(10)
    users = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    T = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    fused = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    loss = kd_loss(users, T, fused)
    loss.backward()
    assert T.grad is None or not np.any(T.grad)
    assert np.any(fused.grad)


def _frozen_teacher(users, T):
    scores = users.data @ T.data.T
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def test_kd_gradients():
    rng = np.random.default_rng(11)
    users = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    T = Tensor(rng.normal(size=(4, 3)))
    fused = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    # the teacher is detached, so it must stay fixed while differencing the
    # shared user parameters
    log_p = _frozen_teacher(users, T)
    finite_difference_check(lambda: kd_loss(users, T, fused, teacher_log_p=log_p),
                            [users, fused])


def test_fa_loss_cases():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert float(fa_loss(a, Tensor(a.data.copy())).data) == 0.0
    one = fa_loss(Tensor(np.array([[1.0, 1.0]])), Tensor(np.zeros((1, 2))))
    assert float(one.data) == pytest.approx(2.0)
    b = Tensor(np.array([[0.0, 0.0], [1.0, 1.0]]))
    base = float(fa_loss(a, b).data)
    scaled = float(fa_loss(Tensor(3 * a.data), Tensor(3 * b.data)).data)
    assert scaled == pytest.approx(9 * base, rel=1e-12)


def test_fa_gradient():
    rng = np.random.default_rng(12)
    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    finite_difference_check(lambda: fa_loss(a, b), [a, b])


# ---------------------------------------------------------------------------
# full client pipeline

def small_client(num_users=6, num_items=20, seed=0, **cfg_kwargs):
    rng = np.random.default_rng(seed)
    inters = []
    for u in range(num_users):
        items = rng.choice(num_items, size=8, replace=False)
        for rank, i in enumerate(items):
            inters.append(Interaction(u, int(i), rank))
    ds = InteractionDataset("toy", num_users, num_items, tuple(inters),
                            train_idx=tuple(range(len(inters))))
    raw = EmbeddingMatrix(rng.normal(size=(num_items, 1024)).astype(np.float32),
                          kind="raw_text")
    cfg = FgsatConfig(d_t=8, hidden=16, batch_size=16, **cfg_kwargs)
    client = ClientState(ds, raw, cfg, seed=seed)
    return client


def broadcast_model(client, K=3, seed=0):
    uploads = {client.name: client.encode_all()}
    stats = {client.name: DomainStats(client.cfg.d_t)}
    return run_round(uploads, stats, RoundPlan(), K=K, seed=seed)


def test_stage1_zero_weights_total_is_rec():
    client = small_client(lambda_kd=0.0, lambda_fa=0.0)
    model = broadcast_model(client)
    batch = [(0, client.dataset.interactions[0].item),
             (1, client.dataset.interactions[9].item)]
    losses = stage1_step(client, batch, model, neg_seed=1, take_step=False)
    assert losses["total"] == pytest.approx(losses["rec"], abs=1e-12)


def test_stage1_training_smoke_loss_decreases():
    # follows the round protocol: fresh normalization broadcast before each
    # step, otherwise the frozen stats snapshot goes stale and the KD teacher
    # sharpens itself without bound
    client = small_client(seed=3, lambda_kd=0.05, lambda_fa=0.05)
    stats = {client.name: DomainStats(client.cfg.d_t)}
    model = None
    totals = []
    for step in range(50):
        model = run_round({client.name: client.encode_all()}, stats,
                          RoundPlan(), K=3, seed=3, prev_model=model)
        batches = list(client.iter_batches(seed=step))
        losses = stage1_step(client, batches[0], model, neg_seed=step)
        totals.append(losses["total"])
    smoothed = np.convolve(totals, np.ones(10) / 10, mode="valid")
    assert smoothed[-1] < smoothed[0]
    # overall trend is downward, not just the endpoints
    assert np.polyfit(np.arange(len(smoothed)), smoothed, 1)[0] < 0


def test_stage1_full_gradient_check():
    client = small_client(seed=5)
    model = broadcast_model(client, seed=5)
    batch = [(0, client.dataset.interactions[0].item),
             (2, client.dataset.interactions[17].item),
             (4, client.dataset.interactions[33].item)]
    negs = sample_negatives(client.dataset, batch, seed=2)

    users = [u for u, _ in batch]
    all_items = [i for _, i in batch] + negs
    B = len(batch)
    t_norm0, _, _, _ = fgsat_forward(client, all_items, model)
    u0, _ = propagate(client.graph, client.id_emb, client.cfg.layers)
    log_p = _frozen_teacher(u0.gather_rows(users),
                            t_norm0.gather_rows(np.arange(B)))

    def f():
        t_norm, t_prime, t_fused, _ = fgsat_forward(client, all_items, model)
        u_reprs, i_reprs = propagate(client.graph, client.id_emb, client.cfg.layers)
        x_u = u_reprs.gather_rows(users)
        vec = rank_item_vector(i_reprs.gather_rows(all_items), t_fused)
        pos = (x_u * vec.gather_rows(np.arange(B))).sum(axis=1)
        neg = (x_u * vec.gather_rows(np.arange(B, 2 * B))).sum(axis=1)
        l = bpr_loss(pos, neg)
        l = l + 0.2 * kd_loss(x_u, t_norm.gather_rows(np.arange(B)),
                              t_fused.gather_rows(np.arange(B)),
                              teacher_log_p=log_p)
        l = l + 0.1 * fa_loss(t_prime.gather_rows(np.arange(B)),
                              t_fused.gather_rows(np.arange(B)))
        return l
    finite_difference_check(f, client.params, n_points=4)


def test_fgsat_disabled_uses_broadcast_centers():
    client = small_client(fgsat_enabled=False)
    model = broadcast_model(client)
    items = [0, 1, 2]
    _, t_prime, t_fused, q = fgsat_forward(client, items, model)
    assign = model.assignments[client.name][items]
    assert q is None
    assert np.allclose(t_fused.data, model.centers[assign])
    assert np.allclose(t_prime.data, t_fused.data)


def test_export_pretrained_round_trip(tmp_path):
    client = small_client(seed=7)
    emb = export_pretrained(client)
    assert emb.rows == client.dataset.num_items
    p1, p2 = tmp_path / "a.emb1", tmp_path / "b.emb1"
    write_embeddings(p1, emb)
    write_embeddings(p2, export_pretrained(client))
    assert p1.read_bytes() == p2.read_bytes()
    back = load_embeddings(p1, expected_rows=client.dataset.num_items)
    fresh = client.encode([3]).data[0]
    assert np.allclose(back.data[3], fresh, atol=1e-6)
