"""Command-line entry point.

Subcommands: run, synth, eval, attack, dump.  Exit codes: 0 success,
2 config error, 3 data error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, load_config
from .data import (DataError, EmbeddingMatrix, SyntheticSpec,
                   generate_synthetic, load_embeddings, load_interactions,
                   split_dataset, write_embeddings, write_interactions)
from .evaluation import evaluate_ranking, sia_attack

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def cmd_run(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if args.single_thread:
        cfg.single_thread = True
    from .pipeline import emit_artifacts, run_experiment
    result = run_experiment(cfg)
    report_path = emit_artifacts(cfg, result)
    print(f"report written to {report_path}")
    for name, rep in sorted(result.reports.items()):
        line = " ".join(f"{k}={v:.5f}" for k, v in sorted(rep.metrics.items()))
        print(f"{name}: {line}")
    return EXIT_OK


def cmd_synth(args):
    spec = SyntheticSpec(num_users=args.users, num_items=args.items,
                         num_topics=args.topics, noise_scale=args.noise,
                         seed=args.seed if args.seed is not None else 0)
    pairs, _ = generate_synthetic(spec)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for ds, emb in pairs:
        write_interactions(out / f"{ds.domain_name}.interactions.tsv", ds)
        write_embeddings(out / f"{ds.domain_name}.emb1", emb)
        print(f"{ds.domain_name}: {ds.num_users} users, {ds.num_items} items, "
              f"{len(ds.interactions)} interactions")
    return EXIT_OK


def _load_run_domain(run_dir: Path, domain: str):
    ds = load_interactions(run_dir / f"{domain}.interactions.tsv", min_core=1,
                           domain_name=domain)
    return ds


def _domains_in(run_dir: Path):
    return sorted(p.name[:-len(".checkpoint.bin")]
                  for p in run_dir.glob("*.checkpoint.bin"))


def cmd_eval(args):
    run_dir = Path(args.dir)
    domains = [args.domain] if args.domain else _domains_in(run_dir)
    if not domains:
        raise DataError(f"{run_dir}: no run artifacts found")
    out = {}
    for domain in domains:
        ds = split_dataset(_load_run_domain(run_dir, domain), seed=args.seed or 0)
        items = load_embeddings(run_dir / f"{domain}.fused.emb1").data
        users = load_embeddings(run_dir / f"{domain}.users.emb1").data
        rep = evaluate_ranking(ds, users.astype(float), items.astype(float))
        out[domain] = rep.metrics
        line = " ".join(f"{k}={v:.5f}" for k, v in sorted(rep.metrics.items()))
        print(f"{domain}: {line}")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    if args.tsv_out:
        with open(args.tsv_out, "w") as fh:
            fh.write("domain\tmetric\tvalue\n")
            for domain in sorted(out):
                for metric in sorted(out[domain]):
                    fh.write(f"{domain}\t{metric}\t{out[domain][metric]:.6f}\n")
    return EXIT_OK


def cmd_attack(args):
    run_dir = Path(args.dir)
    domains = [args.domain] if args.domain else _domains_in(run_dir)
    if not domains:
        raise DataError(f"{run_dir}: no run artifacts found")
    top_ks = tuple(int(k) for k in args.topk.split(","))
    out = {}
    for domain in domains:
        ds = _load_run_domain(run_dir, domain)
        emb = load_embeddings(run_dir / f"{domain}.upload.emb1")
        report = sia_attack(emb, ds, top_k_values=top_ks)
        out[domain] = {str(k): v for k, v in report.f1_by_topk.items()}
        for k in top_ks:
            print(f"{domain}\ttop-{k}\tF1={report.f1_by_topk[k]:.4f}")
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_dump(args):
    """Dump the broadcast cluster state (centers as EMB1, assignments as TSV)
    from a run checkpoint, e.g. for external plotting."""
    run_dir = Path(args.dir)
    out = Path(args.out or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    domains = [args.domain] if args.domain else _domains_in(run_dir)
    if not domains:
        raise DataError(f"{run_dir}: no run artifacts found")
    for domain in domains:
        tensors = load_checkpoint(run_dir / f"{domain}.checkpoint.bin")
        write_embeddings(out / f"{domain}.centers.emb1",
                         EmbeddingMatrix(tensors["cluster_centers"]))
        assign = tensors["cluster_assignments"].astype(int)
        with open(out / f"{domain}.assignments.tsv", "w") as fh:
            fh.write("# item\tcluster\n")
            for item, cluster in enumerate(assign):
                fh.write(f"{item}\t{cluster}\n")
        print(f"{domain}: dumped {tensors['cluster_centers'].shape[0]} centers, "
              f"{assign.shape[0]} assignments")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="fedsemrec")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the two-stage training pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out")
    p_run.add_argument("--single-thread", action="store_true")
    p_run.set_defaults(fn=cmd_run)

    p_synth = sub.add_parser("synth", help="generate the synthetic two-domain benchmark")
    p_synth.add_argument("--users", type=int, default=500)
    p_synth.add_argument("--items", type=int, default=300)
    p_synth.add_argument("--topics", type=int, default=4)
    p_synth.add_argument("--noise", type=float, default=0.05)
    p_synth.add_argument("--seed", type=int, required=True)
    p_synth.add_argument("--out")
    p_synth.set_defaults(fn=cmd_synth)

    p_eval = sub.add_parser("eval", help="re-evaluate ranking metrics from run artifacts")
    p_eval.add_argument("--dir", required=True)
    p_eval.add_argument("--domain")
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--json-out")
    p_eval.add_argument("--tsv-out")
    p_eval.set_defaults(fn=cmd_eval)

    p_att = sub.add_parser("attack", help="run the similarity-based privacy audit")
    p_att.add_argument("--dir", required=True)
    p_att.add_argument("--domain")
    p_att.add_argument("--topk", default="1,3,5")
    p_att.add_argument("--json-out")
    p_att.set_defaults(fn=cmd_attack)

    p_dump = sub.add_parser("dump", help="dump cluster centers and assignments")
    p_dump.add_argument("--dir", required=True)
    p_dump.add_argument("--domain")
    p_dump.add_argument("--out")
    p_dump.set_defaults(fn=cmd_dump)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
