"""Experiment configuration: JSON schema, strict parsing, documented defaults."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


class ConfigError(Exception):
    pass


@dataclass
class DomainSpec:
    name: str
    interactions: str | None = None   # TSV path
    embeddings: str | None = None     # EMB1 path


@dataclass
class SyntheticBlock:
    num_users: int = 500
    num_items: int = 300
    num_topics: int = 4
    noise_scale: float = 0.05
    min_interactions: int = 6
    max_interactions: int = 20


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str
    domains: list = field(default_factory=list)          # [DomainSpec, ...]
    synthetic: SyntheticBlock | None = None

    d_t: int = 64
    hidden: int = 256
    K: int = 50
    rounds: int = 20
    local_epochs: int = 1
    lr: float = 0.005
    batch_size: int = 1024
    lambda_kd: float = 0.2
    lambda_fa: float = 0.1
    alpha: float = 0.2
    beta: float = 0.2
    tau: float = 0.5
    top_n: int = 10
    layers: int = 2
    min_core: int = 5
    max_epochs: int = 50
    patience: int = 5
    lr_decay: float = 1.0
    eta: float = 0.01
    warm_start_clusters: bool = True
    standard_infonce: bool = False

    disable_fed: bool = False
    disable_cl: bool = False
    disable_fgsat: bool = False
    single_thread: bool = False

    def validate(self):
        if self.synthetic is None and len(self.domains) != 2:
            raise ConfigError("config needs either a 'synthetic' block or exactly "
                              "two 'domains' entries")
        if self.synthetic is None:
            for d in self.domains:
                for attr in ("interactions", "embeddings"):
                    path = getattr(d, attr)
                    if path is None or not Path(path).exists():
                        raise ConfigError(f"domain {d.name}: missing {attr} file {path}")
        return self


_SCALARS = {name for name in ExperimentConfig.__dataclass_fields__
            if name not in ("domains", "synthetic")}


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _SCALARS - {"domains", "synthetic"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "seed" not in raw:
        raise ConfigError("'seed' is mandatory")
    if "out_dir" not in raw:
        raise ConfigError("'out_dir' is mandatory")

    kwargs = {k: raw[k] for k in raw if k in _SCALARS}
    domains = []
    for entry in raw.get("domains", []):
        bad = set(entry) - {"name", "interactions", "embeddings"}
        if bad:
            raise ConfigError(f"unknown domain keys: {sorted(bad)}")
        domains.append(DomainSpec(**entry))
    synthetic = None
    if "synthetic" in raw:
        bad = set(raw["synthetic"]) - set(SyntheticBlock.__dataclass_fields__)
        if bad:
            raise ConfigError(f"unknown synthetic keys: {sorted(bad)}")
        synthetic = SyntheticBlock(**raw["synthetic"])
    cfg = ExperimentConfig(domains=domains, synthetic=synthetic, **kwargs)
    return cfg.validate()


def dataset_pair_defaults(pair: str) -> dict:
    """Published default hyperparameters per dataset pair."""
    table = {
        "kitchen-food": {"K": 50, "lambda_kd": 0.2, "lambda_fa": 0.1,
                         "alpha": 0.2, "beta": 0.2},
        "care-beauty": {"K": 70, "lambda_kd": 0.1, "lambda_fa": 0.1,
                        "alpha": 0.1, "beta": 0.1},
    }
    if pair not in table:
        raise ConfigError(f"unknown dataset pair {pair!r}; known: {sorted(table)}")
    return table[pair]


def resolved_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    return d


def content_hash(paths) -> str:
    """Stable hash over the input files' bytes."""
    h = hashlib.sha256()
    for p in sorted(str(p) for p in paths):
        h.update(p.encode())
        h.update(Path(p).read_bytes())
    return h.hexdigest()
