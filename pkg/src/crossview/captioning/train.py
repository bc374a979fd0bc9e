"""Captioner training, K-shot generation, and checkpointing."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from crossview.captioning.decoder import (
    CaptionDecoder,
    DecoderConfig,
    caption_loss,
    forward_decoder,
)
from crossview.captioning.prompt import (
    PromptSequence,
    build_prompt,
    build_training_sequence,
)
from crossview.captioning.tokenizer import Vocabulary
from crossview.captioning.visual import (
    PerceiverResampler,
    RandomProjectionPatches,
    ResamplerConfig,
    build_patch_grid,
)
from crossview.data import DatasetManifest, load_checkpoint, save_checkpoint
from crossview.exceptions import ValidationError
from crossview.mining import MinedPair
from crossview.nn import AdamW, ops
from crossview.retrieval.train import TrainingResult


@dataclass(frozen=True)
class CaptionSample:
    """One training example: the ego clip, K retrieved exo clips, target text."""

    ego_clip_id: str
    ego_features: np.ndarray  # (T, feature_dim)
    exo_features: tuple = ()  # K arrays, (T, feature_dim) each
    exo_captions: tuple = ()  # K strings, same order
    target: str = ""

    def __post_init__(self):
        if len(self.exo_features) != len(self.exo_captions):
            raise ValidationError(
                f"{self.ego_clip_id}: {len(self.exo_features)} exo feature sets"
                f" but {len(self.exo_captions)} captions"
            )

    @property
    def shots(self) -> int:
        return len(self.exo_captions)


@dataclass
class CaptionTrainConfig:
    epochs: int = 5
    learning_rate: float = 1e-3
    batch_size: int = 8
    frames: int = 4
    weight_decay: float = 0.01
    seed: int = 0
    max_steps: int | None = None
    train_decoder: bool = True  # False freezes everything but resampler + gates


def build_caption_samples(
    pairs: list[MinedPair],
    ego_manifest: DatasetManifest,
    exo_manifest: DatasetManifest,
    ego_store: dict[str, np.ndarray],
    exo_store: dict[str, np.ndarray],
    shots: int,
) -> list[CaptionSample]:
    """Materialize K-shot samples from mined pairs; inputs must be complete."""
    if shots < 0:
        raise ValidationError("shots must be >= 0")
    ego_by_id = ego_manifest.by_id()
    exo_by_id = exo_manifest.by_id()
    samples = []
    for pair in pairs:
        ego = ego_by_id.get(pair.ego_clip_id)
        if ego is None:
            raise ValidationError(f"unknown ego clip {pair.ego_clip_id!r}")
        ego_feat = ego_store.get(pair.ego_clip_id)
        if ego_feat is None:
            raise ValidationError(f"no features for ego clip {pair.ego_clip_id!r}")
        if len(pair.candidates) < shots:
            raise ValidationError(
                f"{pair.ego_clip_id}: {len(pair.candidates)} retrieved clips,"
                f" need {shots}"
            )
        exo_feats, exo_caps = [], []
        for cand in pair.candidates[:shots]:
            exo = exo_by_id.get(cand.exo_clip_id)
            if exo is None:
                raise ValidationError(f"unknown exo clip {cand.exo_clip_id!r}")
            feat = exo_store.get(cand.exo_clip_id)
            if feat is None:
                raise ValidationError(f"no features for exo clip {cand.exo_clip_id!r}")
            exo_feats.append(feat)
            exo_caps.append(exo.caption)
        samples.append(
            CaptionSample(
                ego_clip_id=pair.ego_clip_id,
                ego_features=ego_feat,
                exo_features=tuple(exo_feats),
                exo_captions=tuple(exo_caps),
                target=ego.caption,
            )
        )
    return samples


def _pad_sequences(seqs: list[PromptSequence], pad_id: int):
    """Stack variable-length sequences; pads never enter the loss."""
    length = max(len(s) for s in seqs)
    b = len(seqs)
    ids = np.full((b, length), pad_id, dtype=np.int64)
    chunks = np.zeros((b, length), dtype=np.int64)
    mask = np.zeros((b, length), dtype=bool)
    for r, seq in enumerate(seqs):
        n = len(seq)
        ids[r, :n] = seq.token_ids
        chunks[r, :n] = seq.chunk_map
        mask[r, :n] = seq.loss_mask
    return ids, chunks, mask


def _batch_visual(
    batch: list[CaptionSample],
    provider: RandomProjectionPatches,
    resampler: PerceiverResampler,
    frames: int,
    rng: np.random.Generator | None,
):
    """Resample every clip in the batch: (B, K+1, L, d_v) Tensor."""
    grids = [
        build_patch_grid(
            provider, list(s.exo_features) + [s.ego_features], frames, rng
        ).features
        for s in batch
    ]
    stacked = np.concatenate(grids)  # (B*(K+1), T, N, d)
    tokens = resampler.forward(stacked)
    clips = grids[0].shape[0]
    return ops.reshape(
        tokens, (len(batch), clips, resampler.cfg.query_count, resampler.cfg.model_dim)
    )


def train_captioner(
    samples: list[CaptionSample],
    vocab: Vocabulary,
    provider: RandomProjectionPatches,
    resampler: PerceiverResampler,
    decoder: CaptionDecoder,
    cfg: CaptionTrainConfig,
) -> TrainingResult:
    """Teacher-forced training on the masked ego-target cross-entropy.

    The patch provider stays frozen.  The resampler and the gated blocks
    always train; the base decoder trains unless ``train_decoder`` is
    False.  All samples must carry the same number of retrieved clips.
    """
    if not samples:
        raise ValidationError("no training samples")
    shots = {s.shots for s in samples}
    if len(shots) != 1:
        raise ValidationError(f"mixed shot counts in dataset: {sorted(shots)}")

    trainable = {f"resampler.{n}": p for n, p in resampler.params.items()}
    for name, p in decoder.params.items():
        if cfg.train_decoder or name.startswith("gated"):
            trainable[f"decoder.{name}"] = p
    everything = list(resampler.params.items()) + list(decoder.params.items())
    opt = AdamW(trainable, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)

    rng = np.random.default_rng(cfg.seed)
    sequences = [
        build_training_sequence(list(s.exo_captions), s.target, vocab)
        for s in samples
    ]
    result = TrainingResult()
    for _ in range(cfg.epochs):
        order = rng.permutation(len(samples))
        for lo in range(0, len(samples), cfg.batch_size):
            if cfg.max_steps is not None and result.steps >= cfg.max_steps:
                return result
            take = order[lo : lo + cfg.batch_size]
            batch = [samples[i] for i in take]
            ids, chunks, mask = _pad_sequences([sequences[i] for i in take], vocab.pad_id)
            visual = _batch_visual(batch, provider, resampler, cfg.frames, rng)
            loss, _ = caption_loss(decoder, ids, chunks, mask, visual)
            for _, p in everything:
                p.grad = None
            loss.backward()
            opt.step()
            result.loss_trace.append(loss.item())
            result.steps += 1
    return result


@dataclass(frozen=True)
class GenerationConfig:
    shots: int = 1
    max_new_tokens: int = 16
    decoding: str = "greedy"
    beam_width: int = 4
    frames: int = 4

    def __post_init__(self):
        if self.shots < 0:
            raise ValidationError("shots must be >= 0")
        if self.decoding not in ("greedy", "beam"):
            raise ValidationError(f"unknown decoding {self.decoding!r}")
        if self.max_new_tokens < 1 or self.beam_width < 1:
            raise ValidationError("max_new_tokens and beam_width must be >= 1")


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def _decode_greedy(decoder, prompt, visual, vocab, cfg):
    ids = list(prompt.token_ids)
    chunks = list(prompt.chunk_map)
    ego = prompt.num_videos - 1
    out = []
    while len(out) < cfg.max_new_tokens and len(ids) < decoder.cfg.max_seq:
        seq = PromptSequence(
            np.asarray(ids, np.int64),
            np.asarray(chunks, np.int64),
            np.zeros(len(ids), bool),
            prompt.media_positions,
        )
        logits = forward_decoder(decoder, seq, visual)
        nxt = int(np.argmax(logits[-1]))
        if nxt == vocab.eoc_id:
            break
        out.append(nxt)
        ids.append(nxt)
        chunks.append(ego)
    return out


def _decode_beam(decoder, prompt, visual, vocab, cfg):
    """Plain width-b beam search over summed log-probabilities."""
    ego = prompt.num_videos - 1
    base_ids = list(prompt.token_ids)
    base_chunks = list(prompt.chunk_map)
    beams = [((), 0.0, False)]  # (suffix, logprob, finished)
    for _ in range(cfg.max_new_tokens):
        grown = []
        for suffix, score, finished in beams:
            if finished or len(base_ids) + len(suffix) >= decoder.cfg.max_seq:
                grown.append((suffix, score, True))
                continue
            ids = base_ids + list(suffix)
            chunks = base_chunks + [ego] * len(suffix)
            seq = PromptSequence(
                np.asarray(ids, np.int64),
                np.asarray(chunks, np.int64),
                np.zeros(len(ids), bool),
                prompt.media_positions,
            )
            logp = _log_softmax(forward_decoder(decoder, seq, visual)[-1])
            # stable sort on -logp: ties resolve to the lower token id
            top = np.argsort(-logp, kind="stable")[: cfg.beam_width]
            for tok in top:
                tok = int(tok)
                grown.append(
                    (suffix + (tok,), score + float(logp[tok]), tok == vocab.eoc_id)
                )
        # deterministic: best score first, token sequence breaks ties
        grown.sort(key=lambda b: (-b[1], b[0]))
        beams = grown[: cfg.beam_width]
        if all(b[2] for b in beams):
            break
    suffix = beams[0][0]
    if suffix and suffix[-1] == vocab.eoc_id:
        suffix = suffix[:-1]
    return list(suffix)


def generate_caption(
    ego_features: np.ndarray,
    retrieved: list[tuple[np.ndarray, str]],
    vocab: Vocabulary,
    provider: RandomProjectionPatches,
    resampler: PerceiverResampler,
    decoder: CaptionDecoder,
    cfg: GenerationConfig,
) -> str:
    """Generate an egocentric caption conditioned on K retrieved exo clips."""
    if len(retrieved) != cfg.shots:
        raise ValidationError(
            f"retrieved {len(retrieved)} clips but config says shots={cfg.shots}"
        )
    prompt = build_prompt([caption for _, caption in retrieved], vocab)
    grid = build_patch_grid(
        provider, [feat for feat, _ in retrieved] + [ego_features], cfg.frames
    )
    visual = resampler.resample(grid)
    if cfg.decoding == "greedy":
        out = _decode_greedy(decoder, prompt, visual, vocab, cfg)
    else:
        out = _decode_beam(decoder, prompt, visual, vocab, cfg)
    return vocab.decode(out, skip_special=True)


def save_captioner_checkpoint(
    provider: RandomProjectionPatches,
    resampler: PerceiverResampler,
    decoder: CaptionDecoder,
    vocab: Vocabulary,
    train_cfg: CaptionTrainConfig,
    path,
) -> None:
    config = {
        "kind": "captioner",
        "provider": {
            "feature_dim": provider.feature_dim,
            "patches": provider.num_patches,
            "dim": provider.dim,
            "seed": provider.seed,
        },
        "resampler": asdict(resampler.cfg),
        "decoder": asdict(decoder.cfg),
        "train": asdict(train_cfg),
        "vocab": vocab.tokens,
    }
    state = {f"resampler.{n}": a for n, a in resampler.params.state_dict().items()}
    state.update({f"decoder.{n}": a for n, a in decoder.params.state_dict().items()})
    save_checkpoint(state, config, path)


def load_captioner_checkpoint(path):
    state, config = load_checkpoint(path)
    if config.get("kind") != "captioner":
        raise ValidationError(f"{path} is not a captioner checkpoint")
    provider = RandomProjectionPatches(**config["provider"])
    resampler = PerceiverResampler(ResamplerConfig(**config["resampler"]))
    decoder = CaptionDecoder(DecoderConfig(**config["decoder"]))
    vocab = Vocabulary(config["vocab"])
    resampler.params.load_state_dict(
        {
            n[len("resampler.") :]: a
            for n, a in state.items()
            if n.startswith("resampler.")
        }
    )
    decoder.params.load_state_dict(
        {n[len("decoder.") :]: a for n, a in state.items() if n.startswith("decoder.")}
    )
    return provider, resampler, decoder, vocab, config
