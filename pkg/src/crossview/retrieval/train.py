"""Retrieval training loop and checkpoint plumbing."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..data import ClipRecord, DatasetManifest, load_checkpoint, save_checkpoint
from ..exceptions import ValidationError
from ..mining import MinedPair
from ..nn import AdamW
from ..text import EntityProfile, TaggerLexicon, extract_entities
from .encoder import (
    CrossViewEncoder,
    EncoderConfig,
    TextEncoderAdapter,
    TextEncoderConfig,
    subsample_frames,
)
from .loss import LossConfig, build_positive_mask, egoexo_nce


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 3e-5
    batch_size: int = 4096
    frames: int = 4  # frames subsampled per clip each step
    weight_decay: float = 0.01
    seed: int = 0
    max_steps: int | None = None  # optional hard cap across epochs


@dataclass
class TrainingResult:
    loss_trace: list[float] = field(default_factory=list)
    steps: int = 0

    @property
    def final_loss(self) -> float:
        return self.loss_trace[-1] if self.loss_trace else float("nan")


@dataclass
class PairedSample:
    """One mined (ego, exo) clip pair, materialized for training."""

    ego: ClipRecord
    exo: ClipRecord
    ego_features: np.ndarray  # (T, d_f)
    exo_features: np.ndarray
    ego_profile: EntityProfile
    exo_profile: EntityProfile


def build_training_samples(
    pairs: list[MinedPair],
    ego_manifest: DatasetManifest,
    exo_manifest: DatasetManifest,
    ego_store: dict[str, np.ndarray],
    exo_store: dict[str, np.ndarray],
    lexicon: TaggerLexicon,
) -> list[PairedSample]:
    """One sample per (ego clip, exo candidate); inputs must be complete."""
    ego_by_id = ego_manifest.by_id()
    exo_by_id = exo_manifest.by_id()
    samples: list[PairedSample] = []
    for pair in pairs:
        ego = ego_by_id.get(pair.ego_clip_id)
        if ego is None:
            raise ValidationError(f"pair references unknown ego clip {pair.ego_clip_id!r}")
        ego_feat = ego_store.get(pair.ego_clip_id)
        if ego_feat is None:
            raise ValidationError(f"no features for ego clip {pair.ego_clip_id!r}")
        for cand in pair.candidates:
            exo = exo_by_id.get(cand.exo_clip_id)
            if exo is None:
                raise ValidationError(
                    f"pair references unknown exo clip {cand.exo_clip_id!r}"
                )
            exo_feat = exo_store.get(cand.exo_clip_id)
            if exo_feat is None:
                raise ValidationError(f"no features for exo clip {cand.exo_clip_id!r}")
            samples.append(
                PairedSample(
                    ego=ego,
                    exo=exo,
                    ego_features=ego_feat,
                    exo_features=exo_feat,
                    ego_profile=extract_entities(ego.caption, lexicon),
                    exo_profile=extract_entities(exo.caption, lexicon),
                )
            )
    return samples


def train_retrieval(
    samples: list[PairedSample],
    encoder: CrossViewEncoder,
    adapter: TextEncoderAdapter,
    loss_cfg: LossConfig | None = None,
    cfg: TrainConfig | None = None,
) -> TrainingResult:
    """Minimize the cross-view contrastive loss over mined pairs.

    Frame subsampling is random per step (temporal order kept); the
    epoch shuffle and subsampling share one seeded generator, so a
    given (samples, configs, seed) triple always replays identically.
    """
    loss_cfg = loss_cfg or LossConfig()
    cfg = cfg or TrainConfig()
    if not samples:
        raise ValidationError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    params = {f"video.{n}": p for n, p in encoder.params.items()}
    params.update({f"text.{n}": p for n, p in adapter.params.items()})
    opt = AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    result = TrainingResult()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(order), cfg.batch_size):
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                return result
            batch = [samples[i] for i in order[lo : lo + cfg.batch_size]]
            ego_frames = np.stack(
                [subsample_frames(s.ego_features, cfg.frames, rng) for s in batch]
            ).astype(np.float64)
            exo_frames = np.stack(
                [subsample_frames(s.exo_features, cfg.frames, rng) for s in batch]
            ).astype(np.float64)
            mask = build_positive_mask(
                [s.ego_profile for s in batch],
                [s.exo_profile for s in batch],
                loss_cfg,
            )
            z_ego = encoder.forward(ego_frames)
            z_exo = encoder.forward(exo_frames)
            u_ego = adapter.forward([s.ego.caption for s in batch])
            u_exo = adapter.forward([s.exo.caption for s in batch])
            loss = egoexo_nce(z_ego, z_exo, u_ego, u_exo, mask, loss_cfg)
            opt.zero_grad()
            loss.backward()
            opt.step()
            result.loss_trace.append(loss.item())
            result.steps += 1
    return result


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_retrieval_checkpoint(
    encoder: CrossViewEncoder,
    adapter: TextEncoderAdapter,
    loss_cfg: LossConfig,
    train_cfg: TrainConfig,
    path,
) -> None:
    state = {f"video.{n}": p.data for n, p in encoder.params.items()}
    state.update({f"text.{n}": p.data for n, p in adapter.params.items()})
    config = {
        "kind": "retrieval",
        "encoder": asdict(encoder.cfg),
        "text": asdict(adapter.cfg),
        "loss": asdict(loss_cfg),
        "train": asdict(train_cfg),
    }
    save_checkpoint(state, config, path)


def load_retrieval_checkpoint(
    path, lookup_table: dict[str, np.ndarray] | None = None
) -> tuple[CrossViewEncoder, TextEncoderAdapter, dict]:
    state, config = load_checkpoint(path)
    if config.get("kind") != "retrieval":
        raise ValidationError(f"{path}: not a retrieval checkpoint")
    encoder = CrossViewEncoder(EncoderConfig(**config["encoder"]))
    adapter = TextEncoderAdapter(
        TextEncoderConfig(**config["text"]), lookup_table=lookup_table
    )
    encoder.params.load_state_dict(
        {n[len("video.") :]: a for n, a in state.items() if n.startswith("video.")}
    )
    adapter.params.load_state_dict(
        {n[len("text.") :]: a for n, a in state.items() if n.startswith("text.")}
    )
    return encoder, adapter, config
