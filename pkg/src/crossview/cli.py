"""Command-line pipeline: mine -> refine -> train-retrieval -> build-index
-> retrieve -> train-captioner -> caption -> evaluate.

Every command merges flags over the config file over defaults, validates
its inputs before writing anything, and drops a run summary JSON
(command, config hash, input paths, counts — never timestamps) into the
summary directory, so identically-configured runs produce byte-identical
artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from crossview import captioning as cap
from crossview import metrics
from crossview.config import RunConfig, config_hash, load_run_config
from crossview.data import (
    load_manifest,
    read_feature_store,
    save_manifest,
)
from crossview.exceptions import CrossViewError, ValidationError
from crossview.mining import (
    MiningConfig,
    load_pairs,
    mine_pairs,
    save_pairs,
)
from crossview.retrieval import (
    CrossViewEncoder,
    EncoderConfig,
    LossConfig,
    TextEncoderAdapter,
    TextEncoderConfig,
    TrainConfig,
    build_index,
    build_training_samples,
    load_index,
    load_retrieval_checkpoint,
    retrieve_topk,
    save_index,
    save_retrieval_checkpoint,
    subsample_frames,
    train_retrieval,
)
from crossview.text import (
    FallbackRefiner,
    RemoteRefiner,
    TaggerLexicon,
    default_prompt_path,
    load_default_lexicon,
    load_prompt_template,
    refine_manifest,
)

REFINER_URL_ENV = "CROSSVIEW_REFINER_URL"


def _lexicon(cfg: RunConfig) -> TaggerLexicon:
    if cfg.paths.lexicon is None:
        return load_default_lexicon()
    return TaggerLexicon.from_tsv(cfg.paths.lexicon)


def _write_summary(cfg: RunConfig, command: str, inputs: dict, counts: dict) -> None:
    summary = {
        "command": command,
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "inputs": inputs,
        "counts": counts,
    }
    out_dir = Path(cfg.paths.summary_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"summary-{command}.json"
    path.write_text(
        json.dumps(summary, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _write_jsonl(records: list[dict], path: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def _read_jsonl(path: str) -> list[dict]:
    if not Path(path).is_file():
        raise ValidationError(f"no such file: {path}")
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def _stores(cfg: RunConfig) -> tuple[dict, dict, int]:
    ego_store, ego_dim = read_feature_store(cfg.paths.ego_features)
    exo_store, exo_dim = read_feature_store(cfg.paths.exo_features)
    if ego_dim != exo_dim:
        raise ValidationError(
            f"feature stores disagree on dim: ego {ego_dim} vs exo {exo_dim}"
        )
    return ego_store, exo_store, ego_dim


# ---------------------------------------------------------------------------
# commands


def cmd_mine_pairs(cfg: RunConfig, args) -> None:
    ego = load_manifest(cfg.paths.ego_manifest)
    exo = load_manifest(cfg.paths.exo_manifest)
    lexicon = _lexicon(cfg)
    m = cfg.mining
    result = mine_pairs(
        ego,
        exo,
        lexicon,
        MiningConfig(
            alpha_s=m.alpha,
            top_k=m.top_k,
            longform_min_span=m.longform_min_span,
            longform_max_span=m.longform_max_span,
            narrations_per_window=m.narrations_per_window,
        ),
    )
    Path(cfg.paths.pairs).parent.mkdir(parents=True, exist_ok=True)
    save_pairs(result.pairs, cfg.paths.pairs)
    counts = {
        "ego_clips": result.ego_clips,
        "matched": result.matched,
        "skipped_missing_scenario": result.skipped_missing_scenario,
        "pairs_written": len(result.pairs),
    }
    _write_summary(
        cfg,
        "mine-pairs",
        {"ego_manifest": cfg.paths.ego_manifest, "exo_manifest": cfg.paths.exo_manifest},
        counts,
    )
    print(f"mine-pairs: matched {result.matched}/{result.ego_clips} ego clips")


def cmd_refine_captions(cfg: RunConfig, args) -> None:
    manifest = load_manifest(args.input or cfg.paths.exo_manifest)
    base_url = os.environ.get(REFINER_URL_ENV)
    if base_url:
        prompt_path = cfg.paths.prompt_file or default_prompt_path()
        refiner = RemoteRefiner(base_url, load_prompt_template(prompt_path))
        mode = f"remote ({base_url})"
    else:
        refiner = FallbackRefiner(_lexicon(cfg))
        mode = "fallback"
    refined = refine_manifest(manifest, refiner, max_concurrency=args.max_concurrency)
    out_path = args.output or cfg.paths.refined_manifest
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_manifest(refined, out_path)
    _write_summary(
        cfg,
        "refine-captions",
        {"input": args.input or cfg.paths.exo_manifest, "refiner": mode},
        {"records": len(refined.records)},
    )
    print(f"refine-captions: {len(refined.records)} records via {mode}")


def _encoder_configs(cfg: RunConfig, feature_dim: int):
    r = cfg.retrieval
    enc_cfg = EncoderConfig(
        feature_dim=feature_dim,
        model_dim=r.model_dim,
        layers=r.layers,
        heads=r.heads,
        max_frames=r.max_frames,
        output_dim=r.output_dim,
    )
    txt_cfg = TextEncoderConfig(
        backend="hash",
        model_dim=r.output_dim,
        buckets=r.text_buckets,
        output_dim=r.output_dim,
    )
    return enc_cfg, txt_cfg


def cmd_train_retrieval(cfg: RunConfig, args) -> None:
    ego = load_manifest(cfg.paths.ego_manifest)
    exo = load_manifest(cfg.paths.exo_manifest)
    pairs = load_pairs(cfg.paths.pairs)
    ego_store, exo_store, dim = _stores(cfg)
    lexicon = _lexicon(cfg)
    samples = build_training_samples(pairs, ego, exo, ego_store, exo_store, lexicon)

    r = cfg.retrieval
    enc_cfg, txt_cfg = _encoder_configs(cfg, dim)
    encoder = CrossViewEncoder(enc_cfg, seed=cfg.seed)
    adapter = TextEncoderAdapter(txt_cfg, seed=cfg.seed + 1)
    loss_cfg = LossConfig(temperature=r.temperature, entity_rule=r.entity_rule)
    train_cfg = TrainConfig(
        epochs=r.epochs,
        learning_rate=r.learning_rate,
        batch_size=r.batch_size,
        frames=r.frames,
        seed=cfg.seed,
        max_steps=r.max_steps,
    )
    print(
        f"train-retrieval: epochs={r.epochs} learning_rate={r.learning_rate}"
        f" batch_size={r.batch_size} temperature={r.temperature}"
    )
    result = train_retrieval(samples, encoder, adapter, loss_cfg, train_cfg)
    final_loss = result.loss_trace[-1] if result.loss_trace else float("nan")
    Path(cfg.paths.retrieval_checkpoint).parent.mkdir(parents=True, exist_ok=True)
    save_retrieval_checkpoint(
        encoder, adapter, loss_cfg, train_cfg, cfg.paths.retrieval_checkpoint
    )
    _write_summary(
        cfg,
        "train-retrieval",
        {"pairs": cfg.paths.pairs},
        {
            "samples": len(samples),
            "steps": result.steps,
            "final_loss": final_loss,
        },
    )
    print(f"train-retrieval: {result.steps} steps, final loss {final_loss:.4f}")


def cmd_build_index(cfg: RunConfig, args) -> None:
    exo = load_manifest(cfg.paths.exo_manifest)
    exo_store, _ = read_feature_store(cfg.paths.exo_features)
    encoder, adapter, _ = load_retrieval_checkpoint(cfg.paths.retrieval_checkpoint)
    index = build_index(
        exo,
        exo_store,
        encoder,
        adapter,
        frames=cfg.retrieval.frames,
        temperature=cfg.retrieval.temperature,
    )
    Path(cfg.paths.index).parent.mkdir(parents=True, exist_ok=True)
    save_index(index, cfg.paths.index)
    _write_summary(
        cfg,
        "build-index",
        {"exo_manifest": cfg.paths.exo_manifest},
        {"indexed_clips": len(index)},
    )
    print(f"build-index: {len(index)} clips, dim {index.dim}")


def _encode_queries(cfg: RunConfig, manifest, store, encoder) -> dict[str, np.ndarray]:
    out = {}
    for rec in manifest.records:
        feats = store.get(rec.clip_id)
        if feats is None:
            raise ValidationError(f"no features for clip {rec.clip_id!r}")
        picked = subsample_frames(feats, cfg.retrieval.frames)
        out[rec.clip_id] = encoder.encode(picked)
    return out


def cmd_retrieve(cfg: RunConfig, args) -> None:
    ego = load_manifest(cfg.paths.ego_manifest)
    ego_store, _ = read_feature_store(cfg.paths.ego_features)
    encoder, _, _ = load_retrieval_checkpoint(cfg.paths.retrieval_checkpoint)
    index = load_index(cfg.paths.index)
    queries = _encode_queries(cfg, ego, ego_store, encoder)
    records = []
    for rec in ego.records:
        top = retrieve_topk(index, queries[rec.clip_id], k=args.k, mode=args.mode)
        records.append(
            {
                "clip_id": rec.clip_id,
                "candidates": [
                    {"clip_id": cid, "score": float(score)} for cid, score in top
                ],
            }
        )
    _write_jsonl(records, cfg.paths.rankings)
    _write_summary(
        cfg,
        "retrieve",
        {"index": cfg.paths.index, "mode": args.mode, "k": args.k},
        {"queries": len(records)},
    )
    print(f"retrieve: wrote top-{args.k} rankings for {len(records)} queries")


def _captioner_configs(cfg: RunConfig, feature_dim: int, vocab_size: int):
    c = cfg.captioning
    resampler_cfg = cap.ResamplerConfig(
        input_dim=c.patch_dim,
        model_dim=c.resampler_dim,
        query_count=c.query_count,
        depth=c.resampler_depth,
        heads=c.resampler_heads,
        max_frames=cfg.retrieval.max_frames,
    )
    decoder_cfg = cap.DecoderConfig(
        vocab_size=vocab_size,
        model_dim=c.decoder_dim,
        layers=c.decoder_layers,
        heads=c.decoder_heads,
        visual_dim=c.resampler_dim,
        max_seq=c.max_seq,
        gate_interval=c.gate_interval,
    )
    return resampler_cfg, decoder_cfg


def cmd_train_captioner(cfg: RunConfig, args) -> None:
    ego = load_manifest(cfg.paths.ego_manifest)
    exo = load_manifest(cfg.paths.exo_manifest)
    pairs = load_pairs(cfg.paths.pairs)
    ego_store, exo_store, dim = _stores(cfg)
    c = cfg.captioning
    samples = cap.build_caption_samples(
        pairs, ego, exo, ego_store, exo_store, shots=c.shots
    )
    vocab = cap.Vocabulary.from_texts(
        [rec.caption for rec in ego.records] + [rec.caption for rec in exo.records]
    )
    resampler_cfg, decoder_cfg = _captioner_configs(cfg, dim, len(vocab))
    provider = cap.RandomProjectionPatches(
        feature_dim=dim, patches=c.patches, dim=c.patch_dim, seed=cfg.seed
    )
    resampler = cap.PerceiverResampler(resampler_cfg, seed=cfg.seed + 1)
    decoder = cap.CaptionDecoder(decoder_cfg, seed=cfg.seed + 2)
    train_cfg = cap.CaptionTrainConfig(
        epochs=c.epochs,
        learning_rate=c.learning_rate,
        batch_size=c.batch_size,
        frames=c.frames,
        seed=cfg.seed,
        max_steps=c.max_steps,
    )
    result = cap.train_captioner(samples, vocab, provider, resampler, decoder, train_cfg)
    final_loss = result.loss_trace[-1] if result.loss_trace else float("nan")
    Path(cfg.paths.captioner_checkpoint).parent.mkdir(parents=True, exist_ok=True)
    cap.save_captioner_checkpoint(
        provider, resampler, decoder, vocab, train_cfg, cfg.paths.captioner_checkpoint
    )
    _write_summary(
        cfg,
        "train-captioner",
        {"pairs": cfg.paths.pairs},
        {
            "samples": len(samples),
            "vocab": len(vocab),
            "steps": result.steps,
            "final_loss": final_loss,
        },
    )
    print(f"train-captioner: {result.steps} steps, final loss {final_loss:.4f}")


def cmd_caption(cfg: RunConfig, args) -> None:
    ego = load_manifest(cfg.paths.ego_manifest)
    exo = load_manifest(cfg.paths.exo_manifest)
    pairs = load_pairs(cfg.paths.pairs)
    ego_store, exo_store, _ = _stores(cfg)
    provider, resampler, decoder, vocab, _ = cap.load_captioner_checkpoint(
        cfg.paths.captioner_checkpoint
    )
    c = cfg.captioning
    samples = cap.build_caption_samples(
        pairs, ego, exo, ego_store, exo_store, shots=c.shots
    )
    gen_cfg = cap.GenerationConfig(
        shots=c.shots, max_new_tokens=c.max_new_tokens, frames=c.frames
    )
    records = []
    for sample in sorted(samples, key=lambda s: s.ego_clip_id):
        caption = cap.generate_caption(
            sample.ego_features,
            list(zip(sample.exo_features, sample.exo_captions)),
            vocab,
            provider,
            resampler,
            decoder,
            gen_cfg,
        )
        records.append({"clip_id": sample.ego_clip_id, "caption": caption})
    _write_jsonl(records, cfg.paths.captions)
    _write_summary(
        cfg,
        "caption",
        {"checkpoint": cfg.paths.captioner_checkpoint, "shots": c.shots},
        {"captions": len(records)},
    )
    print(f"caption: wrote {len(records)} captions")


def cmd_evaluate_retrieval(cfg: RunConfig, args) -> None:
    ego = load_manifest(cfg.paths.ego_manifest)
    ego_store, _ = read_feature_store(cfg.paths.ego_features)
    encoder, _, _ = load_retrieval_checkpoint(cfg.paths.retrieval_checkpoint)
    index = load_index(cfg.paths.index)
    truth = load_pairs(cfg.paths.pairs)
    relevant = {
        p.ego_clip_id: {c.exo_clip_id for c in p.candidates} for p in truth
    }
    queried = [rec for rec in ego.records if relevant.get(rec.clip_id)]
    if not queried:
        raise ValidationError("no evaluated queries: truth pairs are empty")
    queries = _encode_queries(
        cfg, type(ego)(ego.view, queried), ego_store, encoder
    )
    rankings = {}
    score_rows = []
    rel_rows = []
    for rec in queried:
        ranked = retrieve_topk(
            index, queries[rec.clip_id], k=len(index), mode=args.mode
        )
        rankings[rec.clip_id] = [cid for cid, _ in ranked]
        by_id = {cid: score for cid, score in ranked}
        score_rows.append([by_id[cid] for cid in index.clip_ids])
        rel_rows.append(
            [1.0 if cid in relevant[rec.clip_id] else 0.0 for cid in index.clip_ids]
        )
    scores = np.asarray(score_rows)
    rel = np.asarray(rel_rows)
    results = [
        metrics.recall_at_k(rankings, relevant, k)
        for k in (1, 5, 10)
        if k <= len(index)
    ]
    results.append(metrics.mean_average_precision(scores, rel, index.clip_ids))
    results.append(metrics.ndcg(scores, rel, index.clip_ids))
    report = metrics.format_report(results, title="retrieval evaluation")
    Path(cfg.paths.report).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.paths.report).write_text(report, encoding="utf-8")
    _write_summary(
        cfg,
        "evaluate-retrieval",
        {"index": cfg.paths.index, "truth": cfg.paths.pairs, "mode": args.mode},
        {res.name: res.value for res in results},
    )
    print(report, end="")


def cmd_evaluate_captioning(cfg: RunConfig, args) -> None:
    hypotheses = {
        rec["clip_id"]: rec["caption"] for rec in _read_jsonl(cfg.paths.captions)
    }
    references = load_manifest(cfg.paths.ego_manifest)
    corpus = []
    for rec in references.records:
        if rec.clip_id in hypotheses:
            corpus.append(
                metrics.CaptionPair(hypotheses[rec.clip_id], (rec.caption,))
            )
    if not corpus:
        raise ValidationError("no caption/reference overlap to evaluate")
    results = [metrics.bleu4(corpus), metrics.rouge_l(corpus), metrics.cider(corpus)]
    report = metrics.format_report(results, title="captioning evaluation")
    Path(cfg.paths.report).parent.mkdir(parents=True, exist_ok=True)
    Path(cfg.paths.report).write_text(report, encoding="utf-8")
    _write_summary(
        cfg,
        "evaluate-captioning",
        {"captions": cfg.paths.captions, "references": cfg.paths.ego_manifest},
        {res.name: res.value for res in results},
    )
    print(report, end="")


# ---------------------------------------------------------------------------
# argument plumbing


def _path_flag(sub, name: str) -> None:
    dest = name.replace("-", "_")
    sub.add_argument(f"--{name}", dest=dest, default=None)
    sub.set_defaults(
        _overrides={**sub.get_default("_overrides"), dest: f"paths.{dest}"}
    )


def _field_flag(sub, name: str, dotted: str, type_) -> None:
    dest = name.replace("-", "_")
    sub.add_argument(f"--{name}", dest=dest, type=type_, default=None)
    sub.set_defaults(_overrides={**sub.get_default("_overrides"), dest: dotted})


def _new_command(subparsers, name: str, handler, help_text: str):
    sub = subparsers.add_parser(name, help=help_text)
    sub.add_argument("--config", default=None, help="YAML run config")
    sub.add_argument("--seed", type=int, default=None)
    sub.set_defaults(func=handler, _overrides={})
    return sub


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossview",
        description="Cross-view clip pairing, retrieval training, and captioning.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    sub = _new_command(subparsers, "mine-pairs", cmd_mine_pairs,
                       "mine pseudo ego-exo pairs from captions")
    for flag in ("ego-manifest", "exo-manifest", "pairs", "lexicon"):
        _path_flag(sub, flag)
    _field_flag(sub, "alpha", "mining.alpha", float)
    _field_flag(sub, "top-k", "mining.top_k", int)

    sub = _new_command(subparsers, "refine-captions", cmd_refine_captions,
                       "rewrite captions (remote endpoint or offline fallback)")
    _path_flag(sub, "lexicon")
    _path_flag(sub, "prompt-file")
    sub.add_argument("--input", default=None, help="manifest to refine")
    sub.add_argument("--output", default=None, help="refined manifest path")
    sub.add_argument("--max-concurrency", type=int, default=1)

    sub = _new_command(subparsers, "train-retrieval", cmd_train_retrieval,
                       "train the cross-view retrieval encoder")
    for flag in ("ego-manifest", "exo-manifest", "ego-features", "exo-features",
                 "pairs", "retrieval-checkpoint", "lexicon"):
        _path_flag(sub, flag)
    _field_flag(sub, "epochs", "retrieval.epochs", int)
    _field_flag(sub, "learning-rate", "retrieval.learning_rate", float)
    _field_flag(sub, "batch-size", "retrieval.batch_size", int)
    _field_flag(sub, "temperature", "retrieval.temperature", float)
    _field_flag(sub, "frames", "retrieval.frames", int)
    _field_flag(sub, "entity-rule", "retrieval.entity_rule", str)
    _field_flag(sub, "model-dim", "retrieval.model_dim", int)
    _field_flag(sub, "layers", "retrieval.layers", int)
    _field_flag(sub, "heads", "retrieval.heads", int)
    _field_flag(sub, "output-dim", "retrieval.output_dim", int)
    _field_flag(sub, "max-steps", "retrieval.max_steps", int)

    sub = _new_command(subparsers, "build-index", cmd_build_index,
                       "embed exo clips into a retrieval index")
    for flag in ("exo-manifest", "exo-features", "retrieval-checkpoint", "index"):
        _path_flag(sub, flag)

    sub = _new_command(subparsers, "retrieve", cmd_retrieve,
                       "rank index clips for each ego query")
    for flag in ("ego-manifest", "ego-features", "retrieval-checkpoint",
                 "index", "rankings"):
        _path_flag(sub, flag)
    sub.add_argument("--k", type=int, default=10)
    sub.add_argument("--mode", choices=("paper_exp", "cosine"), default="paper_exp")

    sub = _new_command(subparsers, "train-captioner", cmd_train_captioner,
                       "train the retrieval-augmented captioner")
    for flag in ("ego-manifest", "exo-manifest", "ego-features", "exo-features",
                 "pairs", "captioner-checkpoint"):
        _path_flag(sub, flag)
    _field_flag(sub, "shots", "captioning.shots", int)
    _field_flag(sub, "epochs", "captioning.epochs", int)
    _field_flag(sub, "learning-rate", "captioning.learning_rate", float)
    _field_flag(sub, "batch-size", "captioning.batch_size", int)
    _field_flag(sub, "query-count", "captioning.query_count", int)
    _field_flag(sub, "resampler-depth", "captioning.resampler_depth", int)
    _field_flag(sub, "max-steps", "captioning.max_steps", int)

    sub = _new_command(subparsers, "caption", cmd_caption,
                       "generate K-shot egocentric captions")
    for flag in ("ego-manifest", "exo-manifest", "ego-features", "exo-features",
                 "pairs", "captioner-checkpoint", "captions"):
        _path_flag(sub, flag)
    _field_flag(sub, "shots", "captioning.shots", int)
    _field_flag(sub, "max-new-tokens", "captioning.max_new_tokens", int)

    sub = _new_command(subparsers, "evaluate-retrieval", cmd_evaluate_retrieval,
                       "score rankings against truth pairs")
    for flag in ("ego-manifest", "ego-features", "retrieval-checkpoint",
                 "index", "pairs", "report"):
        _path_flag(sub, flag)
    sub.add_argument("--mode", choices=("paper_exp", "cosine"), default="paper_exp")

    sub = _new_command(subparsers, "evaluate-captioning", cmd_evaluate_captioning,
                       "score generated captions against references")
    for flag in ("ego-manifest", "captions", "report"):
        _path_flag(sub, flag)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    overrides = {}
    for dest, dotted in args._overrides.items():
        value = getattr(args, dest)
        if value is not None:
            overrides[dotted] = value
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        cfg = load_run_config(args.config, overrides)
        args.func(cfg, args)
    except CrossViewError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
