"""Run configuration: defaults, YAML file loading, and flag overrides.

Precedence is flags > config file > defaults.  A run's effective config
is canonically serialized (sorted keys) and hashed so any two runs can
be compared by their summary records.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from crossview.exceptions import ValidationError


@dataclass
class PathsConfig:
    ego_manifest: str = "data/ego_manifest.jsonl"
    exo_manifest: str = "data/exo_manifest.jsonl"
    ego_features: str = "data/ego_features.cvfs"
    exo_features: str = "data/exo_features.cvfs"
    pairs: str = "out/pairs.jsonl"
    refined_manifest: str = "out/exo_refined.jsonl"
    index: str = "out/exo.cvix"
    retrieval_checkpoint: str = "out/retrieval.cvck"
    captioner_checkpoint: str = "out/captioner.cvck"
    rankings: str = "out/rankings.jsonl"
    captions: str = "out/captions.jsonl"
    report: str = "out/report.txt"
    summary_dir: str = "out"
    lexicon: str | None = None  # None = packaged default
    prompt_file: str | None = None


@dataclass
class RetrievalSettings:
    epochs: int = 5
    learning_rate: float = 3e-5
    batch_size: int = 4096
    temperature: float = 0.05
    frames: int = 4
    entity_rule: str = "and"
    model_dim: int = 768
    layers: int = 4
    heads: int = 8
    output_dim: int = 768
    max_frames: int = 32
    text_buckets: int = 4096
    max_steps: int | None = None


@dataclass
class MiningSettings:
    alpha: float = 1.0
    top_k: int = 1
    longform_min_span: float = 60.0
    longform_max_span: float = 300.0
    narrations_per_window: int = 20


@dataclass
class CaptioningSettings:
    shots: int = 1
    query_count: int = 64
    resampler_depth: int = 6
    resampler_dim: int = 64
    resampler_heads: int = 4
    patches: int = 4
    patch_dim: int = 16
    decoder_dim: int = 64
    decoder_layers: int = 2
    decoder_heads: int = 2
    max_seq: int = 160
    gate_interval: int = 1
    epochs: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 8
    frames: int = 4
    max_new_tokens: int = 16
    max_steps: int | None = None


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    mining: MiningSettings = field(default_factory=MiningSettings)
    captioning: CaptioningSettings = field(default_factory=CaptioningSettings)
    seed: int = 0

    def validate(self) -> None:
        r, m, c = self.retrieval, self.mining, self.captioning
        checks = [
            (r.epochs >= 1, "retrieval.epochs must be >= 1"),
            (r.learning_rate > 0, "retrieval.learning_rate must be positive"),
            (r.batch_size >= 1, "retrieval.batch_size must be >= 1"),
            (r.temperature > 0, "retrieval.temperature must be positive"),
            (r.frames >= 1, "retrieval.frames must be >= 1"),
            (r.entity_rule in ("and", "or"), "retrieval.entity_rule must be and|or"),
            (r.model_dim % r.heads == 0, "retrieval.heads must divide model_dim"),
            (r.layers >= 1, "retrieval.layers must be >= 1"),
            (r.output_dim >= 1, "retrieval.output_dim must be >= 1"),
            (r.text_buckets >= 1, "retrieval.text_buckets must be >= 1"),
            (
                r.frames <= r.max_frames,
                "retrieval.frames must not exceed retrieval.max_frames",
            ),
            (m.alpha >= 0, "mining.alpha must be >= 0"),
            (m.top_k >= 1, "mining.top_k must be >= 1"),
            (
                0 < m.longform_min_span < m.longform_max_span,
                "mining long-form window must satisfy 0 < min < max",
            ),
            (m.narrations_per_window >= 1, "mining.narrations_per_window must be >= 1"),
            (c.shots >= 0, "captioning.shots must be >= 0"),
            (c.query_count >= 1, "captioning.query_count must be >= 1"),
            (c.resampler_depth >= 1, "captioning.resampler_depth must be >= 1"),
            (
                c.resampler_dim % c.resampler_heads == 0,
                "captioning.resampler_heads must divide resampler_dim",
            ),
            (
                c.decoder_dim % c.decoder_heads == 0,
                "captioning.decoder_heads must divide decoder_dim",
            ),
            (c.epochs >= 1, "captioning.epochs must be >= 1"),
            (c.learning_rate > 0, "captioning.learning_rate must be positive"),
            (c.batch_size >= 1, "captioning.batch_size must be >= 1"),
            (
                1 <= c.frames <= r.max_frames,
                "captioning.frames must lie in [1, retrieval.max_frames]",
            ),
            (c.max_new_tokens >= 1, "captioning.max_new_tokens must be >= 1"),
            (c.gate_interval >= 0, "captioning.gate_interval must be >= 0"),
            (isinstance(self.seed, int), "seed must be an integer"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValidationError(message)

    def to_dict(self) -> dict:
        return asdict(self)


_GROUPS = {f.name: f.type for f in fields(RunConfig)}


def _merge(base: dict, update: dict, where: str = "") -> None:
    for key, value in update.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ValidationError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config key {path!r} must be a mapping")
            _merge(base[key], value, path)
        else:
            base[key] = value


def _set_dotted(tree: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ValidationError(f"unknown config key {dotted!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ValidationError(f"unknown config key {dotted!r}")
    node[parts[-1]] = value


def load_run_config(
    config_path: str | Path | None = None, overrides: dict | None = None
) -> RunConfig:
    """Defaults, then the YAML file, then dotted-key overrides."""
    tree = RunConfig().to_dict()
    if config_path is not None:
        if not Path(config_path).is_file():
            raise ValidationError(f"no such config file: {config_path}")
        raw = Path(config_path).read_text(encoding="utf-8")
        loaded = yaml.safe_load(raw)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ValidationError(f"{config_path}: config must be a mapping")
        _merge(tree, loaded)
    for dotted, value in (overrides or {}).items():
        _set_dotted(tree, dotted, value)
    cfg = RunConfig(
        paths=PathsConfig(**tree["paths"]),
        retrieval=RetrievalSettings(**tree["retrieval"]),
        mining=MiningSettings(**tree["mining"]),
        captioning=CaptioningSettings(**tree["captioning"]),
        seed=tree["seed"],
    )
    cfg.validate()
    return cfg


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(cfg: RunConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode("utf-8")).hexdigest()[:12]
