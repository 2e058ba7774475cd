"""Two-stage experiment driver: federated pre-training rounds, per-domain
fine-tuning with early stopping, evaluation and artifact emission."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .config import ExperimentConfig, content_hash, resolved_dict
from .data import (EmbeddingMatrix, SyntheticSpec, generate_synthetic,
                   load_embeddings, load_interactions, split_dataset,
                   write_embeddings, write_interactions)
from .evaluation import evaluate_ranking, sia_attack
from .fgsat import (ClientState, FgsatConfig, export_pretrained, stage1_step)
from .finetune import Stage2Config, Stage2Trainer
from .server import ClusterModel, DomainStats, RoundPlan, run_round


@dataclass
class RunResult:
    reports: dict                      # domain -> RankingReport
    attack: dict                       # domain -> AttackReport
    cluster_model: dict                # domain -> ClusterModel used in stage 2
    trainers: dict = field(default_factory=dict)
    loss_log: list = field(default_factory=list)


def _each_client(clients, fn, single_thread):
    """Apply fn to every client, optionally on a thread per client, and
    return results in client order (deterministic either way)."""
    if single_thread or len(clients) == 1:
        return [fn(c) for c in clients]
    with ThreadPoolExecutor(max_workers=len(clients)) as pool:
        return list(pool.map(fn, clients))


def prepare_datasets(cfg: ExperimentConfig):
    """Load (or synthesize) and split both domains; returns
    [(dataset, raw_embeddings), ...]."""
    if cfg.synthetic is not None:
        spec = SyntheticSpec(num_users=cfg.synthetic.num_users,
                             num_items=cfg.synthetic.num_items,
                             num_topics=cfg.synthetic.num_topics,
                             noise_scale=cfg.synthetic.noise_scale,
                             min_interactions=cfg.synthetic.min_interactions,
                             max_interactions=cfg.synthetic.max_interactions,
                             seed=cfg.seed)
        pairs, _topics = generate_synthetic(spec)
    else:
        pairs = []
        for d in cfg.domains:
            ds = load_interactions(d.interactions, min_core=cfg.min_core,
                                   domain_name=d.name)
            emb = load_embeddings(d.embeddings, expected_rows=ds.num_items)
            pairs.append((ds, emb))
    return [(split_dataset(ds, seed=cfg.seed), emb) for ds, emb in pairs]


def build_clients(cfg: ExperimentConfig, pairs):
    fcfg = FgsatConfig(d_t=cfg.d_t, hidden=cfg.hidden, eta=cfg.eta,
                       lambda_kd=cfg.lambda_kd, lambda_fa=cfg.lambda_fa,
                       layers=cfg.layers, lr=cfg.lr, batch_size=cfg.batch_size,
                       fgsat_enabled=not cfg.disable_fgsat)
    return [ClientState(ds, emb, fcfg, seed=cfg.seed + 17 * idx)
            for idx, (ds, emb) in enumerate(pairs)]


def local_cluster_model(client: ClientState, K, seed) -> ClusterModel:
    """Standalone (non-federated) clustering of one client's own items, used
    when the federated stage is disabled."""
    stats = {client.name: DomainStats(client.cfg.d_t)}
    uploads = {client.name: client.encode_all()}
    K_eff = min(K, client.dataset.num_items)
    return run_round(uploads, stats, RoundPlan(1, 1, 1), K_eff, seed=seed)


def run_stage1(cfg: ExperimentConfig, clients):
    """Federated pre-training: R synchronous rounds of upload, cluster,
    broadcast and local adaptation."""
    stats = {c.name: DomainStats(cfg.d_t) for c in clients}
    plan = RoundPlan(cfg.rounds, cfg.local_epochs, 1)
    model = None
    loss_log = []
    for r in range(1, cfg.rounds + 1):
        plan.current_round = r
        uploads = {c.name: m for c, m in
                   zip(clients, _each_client(clients, lambda c: c.encode_all(),
                                             cfg.single_thread))}
        model = run_round(uploads, stats, plan, K=cfg.K, seed=cfg.seed,
                          prev_model=model, warm_start=cfg.warm_start_clusters)

        def train(client, _r=r, _model=model):
            rows = []
            for epoch in range(cfg.local_epochs):
                for b, batch in enumerate(client.iter_batches(
                        seed=cfg.seed * 31 + _r * 7 + epoch)):
                    losses = stage1_step(client, batch, _model,
                                         neg_seed=cfg.seed * 13 + _r * 1009
                                         + epoch * 53 + b)
                    rows.append({"stage": 1, "round": _r, "epoch": epoch,
                                 "batch": b, "domain": client.name, **losses})
            return rows

        for rows in _each_client(clients, train, cfg.single_thread):
            loss_log.extend(rows)
    return model, loss_log


def run_stage2(cfg: ExperimentConfig, clients, t_pre_map, cluster_models):
    """Per-domain fine-tuning with early stopping on validation Recall@20."""
    s2cfg = Stage2Config(alpha=0.0 if cfg.disable_cl else cfg.alpha,
                         beta=cfg.beta, tau=cfg.tau, top_n=cfg.top_n,
                         patience=cfg.patience, lr_decay=cfg.lr_decay,
                         max_epochs=cfg.max_epochs,
                         standard_infonce=cfg.standard_infonce)
    trainers = {c.name: Stage2Trainer(c, t_pre_map[c.name],
                                      cluster_models[c.name], s2cfg)
                for c in clients}
    loss_log = []

    def finetune(client):
        trainer = trainers[client.name]
        best_r20 = -1.0
        best_params = None
        bad = 0
        rows = []
        for epoch in range(s2cfg.max_epochs):
            losses = trainer.epoch(epoch, seed=cfg.seed)
            item_m, user_m = trainer.item_and_user_matrices()
            rep = evaluate_ranking(client.dataset, user_m, item_m, ks=(20,),
                                   split="valid")
            r20 = rep.metrics["recall@20"]
            rows.append({"stage": 2, "epoch": epoch, "domain": client.name,
                         "valid_recall@20": r20, **losses})
            if r20 > best_r20 + 1e-12:
                best_r20 = r20
                best_params = [p.data.copy() for p in trainer.client.params]
                bad = 0
            else:
                bad += 1
                if bad >= s2cfg.patience:
                    break
        if best_params is not None:
            for p, saved in zip(trainer.client.params, best_params):
                p.data = saved
            trainer.refresh_local_graph()
        return rows

    for rows in _each_client(clients, finetune, cfg.single_thread):
        loss_log.extend(rows)
    return trainers, loss_log


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    pairs = prepare_datasets(cfg)
    clients = build_clients(cfg, pairs)

    loss_log = []
    if cfg.disable_fed:
        t_pre_map = {c.name: export_pretrained(c) for c in clients}
        cluster_models = {c.name: local_cluster_model(c, cfg.K, cfg.seed)
                          for c in clients}
        stage1_model = None
    else:
        stage1_model, s1_log = run_stage1(cfg, clients)
        loss_log.extend(s1_log)
        t_pre_map = {c.name: export_pretrained(c) for c in clients}
        cluster_models = {c.name: stage1_model for c in clients}

    trainers, s2_log = run_stage2(cfg, clients, t_pre_map, cluster_models)
    loss_log.extend(s2_log)

    reports, attack = {}, {}
    for client in clients:
        trainer = trainers[client.name]
        item_m, user_m = trainer.item_and_user_matrices()
        reports[client.name] = evaluate_ranking(client.dataset, user_m, item_m,
                                                ks=(10, 20), split="test")
        intercepted = EmbeddingMatrix(client.encode_all().astype(np.float32))
        attack[client.name] = sia_attack(intercepted, client.dataset,
                                         top_k_values=(1, 3, 5))
    return RunResult(reports, attack, cluster_models, trainers, loss_log)


def emit_artifacts(cfg: ExperimentConfig, result: RunResult, out_dir=None):
    """Write the run's reports, datasets, embeddings and checkpoints."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    input_paths = []
    if cfg.synthetic is None:
        for d in cfg.domains:
            input_paths += [d.interactions, d.embeddings]

    report = {
        "engine_version": __version__,
        "config": resolved_dict(cfg),
        "input_hash": content_hash(input_paths) if input_paths else "synthetic",
        "domains": {},
    }
    for name, rep in result.reports.items():
        report["domains"][name] = {
            "metrics": rep.metrics,
            "users_evaluated": rep.users_evaluated,
            "attack_f1": {str(k): v for k, v in result.attack[name].f1_by_topk.items()},
        }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "config.resolved.json").write_text(
        json.dumps(resolved_dict(cfg), indent=2, sort_keys=True) + "\n")
    with open(out / "losses.jsonl", "w") as fh:
        for row in result.loss_log:
            fh.write(json.dumps(row, sort_keys=True) + "\n")

    for name, trainer in result.trainers.items():
        client = trainer.client
        write_interactions(out / f"{name}.interactions.tsv", client.dataset)
        write_embeddings(out / f"{name}.t_pre.emb1", trainer.t_pre)
        upload = EmbeddingMatrix(client.encode_all().astype(np.float32))
        write_embeddings(out / f"{name}.upload.emb1", upload)
        item_m, user_m = trainer.item_and_user_matrices()
        write_embeddings(out / f"{name}.fused.emb1",
                         EmbeddingMatrix(item_m.astype(np.float32)))
        write_embeddings(out / f"{name}.users.emb1",
                         EmbeddingMatrix(user_m.astype(np.float32)))
        tensors = {f"param_{i}": p.data for i, p in enumerate(client.params)}
        model = result.cluster_model[name]
        tensors["cluster_centers"] = model.centers
        tensors["cluster_assignments"] = model.assignments[name].astype(float)
        snap = model.stats_snapshots[name]
        tensors["stats_mean"] = snap.mean
        tensors["stats_var"] = snap.var
        save_checkpoint(out / f"{name}.checkpoint.bin", tensors)
    return out / "report.json"
