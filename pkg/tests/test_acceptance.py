"""Acceptance suite: one test per shipped capability claim.

Each test is a self-contained check of one property the package
promises — oracle equivalence for the loss, mask and miner, gradient
correctness, the zero-init gating identity, synthetic learnability of
cross-view retrieval and K-shot captioning, exact metric values, and
byte-reproducibility of the CLI pipeline. Thresholds and tolerances are
stated inline next to each assertion.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from gradcheck import fd_grad
from oracles import (
    nce_loss_oracle,
    positive_mask_oracle,
    random_profiles,
    random_unit_rows,
)
from test_mining import brute_force_pairs, random_manifest

from crossview import captioning as cap
from crossview import metrics
from crossview.data import ClipRecord, DatasetManifest
from crossview.mining import MiningConfig, mine_pairs
from crossview.nn import Tensor
from crossview.retrieval import (
    CrossViewEncoder,
    EncoderConfig,
    LossConfig,
    TextEncoderAdapter,
    TextEncoderConfig,
    TrainConfig,
    build_index,
    build_positive_mask,
    egoexo_nce,
    retrieve_topk,
    subsample_frames,
    train_retrieval,
)
from crossview.retrieval.train import PairedSample
from crossview.text import EntityProfile, load_default_lexicon

REPO_ROOT = Path(__file__).resolve().parents[1]


def test_criterion_1_loss_matches_brute_force_oracle():
    """Loss equals an independent brute-force implementation, <= 1e-6 abs."""
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(100):
        b = int(rng.integers(1, 9))  # B <= 8
        d = int(rng.integers(2, 17))  # d <= 16
        tau = float(rng.choice([0.05, 0.2, 1.0]))
        rule = str(rng.choice(["and", "or"]))
        blocks = [random_unit_rows(rng, b, d) for _ in range(4)]
        ego_p = random_profiles(rng, b)
        exo_p = random_profiles(rng, b)
        cfg = LossConfig(temperature=tau, entity_rule=rule)
        mask = build_positive_mask(ego_p, exo_p, cfg)
        got = egoexo_nce(*(Tensor(x) for x in blocks), mask, cfg).item()
        want = nce_loss_oracle(*blocks, mask.matrix, tau)
        worst = max(worst, abs(got - want))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-6, f"worst |loss - oracle| = {worst:.3e}"
    assert elapsed < 10.0, f"took {elapsed:.1f}s, budget is 10s"
    print(f"\nPASS criterion 1: loss oracle gap {worst:.2e} over 100 batches "
          f"({elapsed:.1f}s)")


def test_criterion_2_gradients_match_finite_differences():
    """Analytic grads of all four embedding blocks vs central differences."""
    rng = np.random.default_rng(202)
    worst = 0.0
    for tau in (1.0, 0.25):
        for _ in range(3):
            b = int(rng.integers(1, 5))  # B <= 4
            d = int(rng.integers(2, 9))  # d <= 8
            blocks = [random_unit_rows(rng, b, d) for _ in range(4)]
            cfg = LossConfig(temperature=tau)
            mask = build_positive_mask(
                random_profiles(rng, b), random_profiles(rng, b), cfg
            )
            leaves = [Tensor(x, requires_grad=True) for x in blocks]
            egoexo_nce(*leaves, mask, cfg).backward()
            for which in range(4):
                def loss_at(x, which=which):
                    probe = [blk.copy() for blk in blocks]
                    probe[which] = x
                    return egoexo_nce(
                        *(Tensor(p) for p in probe), mask, cfg
                    ).item()

                numeric = fd_grad(loss_at, blocks[which], step=1e-4)
                analytic = leaves[which].grad
                scale = max(float(np.abs(numeric).max()), 1e-8)
                rel = float(np.abs(analytic - numeric).max()) / scale
                worst = max(worst, rel)
    assert worst <= 1e-4, f"worst relative gradient error {worst:.3e}"
    print(f"\nPASS criterion 2: max relative gradient error {worst:.2e}")


def test_criterion_3_positive_mask_properties():
    """Duplicated anchor rows, symmetric entity clauses, B=1 all-true."""
    rng = np.random.default_rng(303)
    checked = 0
    for trial in range(500):
        b = int(rng.integers(1, 9))
        rule = "and" if trial % 2 == 0 else "or"
        ego_p = random_profiles(rng, b)
        exo_p = random_profiles(rng, b)
        m = build_positive_mask(ego_p, exo_p, LossConfig(entity_rule=rule)).matrix
        # the two view rows of a pair share one positive set
        assert np.array_equal(m[:b], m[b:]), f"trial {trial}: rows differ"
        # entity overlap is a symmetric relation within each text half
        assert np.array_equal(m[:b, :b], m[:b, :b].T), f"trial {trial}: ego block"
        assert np.array_equal(m[:b, b:], m[:b, b:].T), f"trial {trial}: exo block"
        # and it must agree with the literal definition
        assert np.array_equal(m, positive_mask_oracle(ego_p, exo_p, rule))
        if b == 1:
            assert m.all(), "B=1 mask must be all-true"
        checked += 1
    single = build_positive_mask(
        random_profiles(rng, 1), random_profiles(rng, 1), LossConfig()
    ).matrix
    assert single.shape == (2, 2) and single.all()
    print(f"\nPASS criterion 3: {checked} random masks, zero violations")


def _synthetic_world(rng, n=100, latent_dim=16, feat_dim=24, frames=6):
    latents = rng.normal(size=(n, latent_dim))
    latents /= np.linalg.norm(latents, axis=1, keepdims=True)
    to_ego = rng.normal(0, latent_dim**-0.5, size=(latent_dim, feat_dim))
    to_exo = rng.normal(0, latent_dim**-0.5, size=(latent_dim, feat_dim))

    def views(noise_rng):
        ego = np.stack(
            [latents @ to_ego + noise_rng.normal(0, 0.1, (n, feat_dim))
             for _ in range(frames)], axis=1)
        exo = np.stack(
            [latents @ to_exo + noise_rng.normal(0, 0.1, (n, feat_dim))
             for _ in range(frames)], axis=1)
        return ego.astype(np.float32), exo.astype(np.float32)

    return latents, views


def test_criterion_4_synthetic_cross_view_retrieval():
    """Trained Ego2Exo R@1 >= 0.90 on 100 held-out candidates; untrained <= 0.05."""
    start = time.perf_counter()
    rng = np.random.default_rng(42)
    n, latent_dim, feat_dim = 100, 16, 24
    latents, views = _synthetic_world(rng, n, latent_dim, feat_dim)
    train_ego, train_exo = views(rng)

    empty = EntityProfile(frozenset(), frozenset())
    samples = []
    for i in range(n):
        ego_rec = ClipRecord(f"ego-{i:03d}", f"v{i}", "ego", "synthetic",
                             0.0, 1.0, f"act-{i:03d}")
        exo_rec = ClipRecord(f"exo-{i:03d}", f"v{i}", "exo", "synthetic",
                             0.0, 1.0, f"act-{i:03d}")
        samples.append(
            PairedSample(ego_rec, exo_rec, train_ego[i], train_exo[i], empty, empty)
        )

    enc_cfg = EncoderConfig(feature_dim=feat_dim, model_dim=32, layers=1,
                            heads=2, max_frames=8, output_dim=16)
    txt_cfg = TextEncoderConfig(backend="lookup", model_dim=latent_dim,
                                output_dim=16)
    table = {f"act-{i:03d}": latents[i] for i in range(n)}

    def ego2exo_r1(encoder, adapter):
        held_ego, held_exo = views(np.random.default_rng(77))
        manifest = DatasetManifest("exo", [s.exo for s in samples])
        store = {rec.clip_id: held_exo[i] for i, rec in enumerate(manifest.records)}
        index = build_index(manifest, store, encoder, adapter,
                            frames=4, temperature=0.3)
        hits = 0
        for i in range(n):
            query = encoder.encode(subsample_frames(held_ego[i], 4))
            hits += retrieve_topk(index, query, k=1)[0][0] == f"exo-{i:03d}"
        return hits / n

    untrained = ego2exo_r1(
        CrossViewEncoder(enc_cfg, seed=1),
        TextEncoderAdapter(txt_cfg, seed=2, lookup_table=table),
    )
    encoder = CrossViewEncoder(enc_cfg, seed=1)
    adapter = TextEncoderAdapter(txt_cfg, seed=2, lookup_table=table)
    result = train_retrieval(
        samples, encoder, adapter, LossConfig(temperature=0.3),
        TrainConfig(epochs=500, learning_rate=5e-3, batch_size=100,
                    frames=4, seed=0, max_steps=500),
    )
    trained = ego2exo_r1(encoder, adapter)
    elapsed = time.perf_counter() - start

    assert result.steps <= 500
    assert untrained <= 0.05, f"untrained R@1 {untrained} above chance band"
    assert trained >= 0.90, f"trained R@1 {trained} below 0.90"
    assert elapsed < 120.0, f"took {elapsed:.0f}s, budget is 2 min"
    print(f"\nPASS criterion 4: R@1 untrained {untrained:.2f} -> trained "
          f"{trained:.2f} in {result.steps} steps ({elapsed:.0f}s)")


def test_criterion_5_zero_init_gating_identity():
    """Fresh gated decoder reproduces base-decoder logits within 1e-6."""
    rng = np.random.default_rng(505)
    words = [f"tok{i}" for i in range(30)]
    vocab = cap.Vocabulary.from_texts(words)
    base_cfg = dict(vocab_size=len(vocab), model_dim=24, layers=2, heads=2,
                    visual_dim=8, max_seq=64)
    gated = cap.CaptionDecoder(cap.DecoderConfig(**base_cfg, gate_interval=1), seed=9)
    plain = cap.CaptionDecoder(cap.DecoderConfig(**base_cfg, gate_interval=0), seed=9)

    worst = 0.0
    for _ in range(50):
        shots = int(rng.integers(0, 3))
        caps = [" ".join(rng.choice(words, size=rng.integers(1, 5))) for _ in range(shots)]
        ego = " ".join(rng.choice(words, size=rng.integers(1, 5)))
        prompt = cap.build_training_sequence(caps, ego, vocab)
        visual = rng.normal(size=(shots + 1, 4, 8))
        got = cap.forward_decoder(gated, prompt, visual)
        want = cap.forward_decoder(plain, prompt, visual)
        worst = max(worst, float(np.abs(got - want).max()))
    assert worst <= 1e-6, f"max |gated - base| logit gap {worst:.3e}"
    print(f"\nPASS criterion 5: zero-init gating identity, max gap {worst:.2e}")


def _copy_task_models(seed=0):
    provider = cap.RandomProjectionPatches(feature_dim=8, patches=2, dim=4, seed=seed)
    resampler = cap.PerceiverResampler(
        cap.ResamplerConfig(input_dim=4, model_dim=8, query_count=2, depth=1,
                            heads=2, max_frames=4),
        seed=seed + 1,
    )
    decoder = cap.CaptionDecoder(
        cap.DecoderConfig(vocab_size=100, model_dim=32, layers=2, heads=2,
                          visual_dim=8, max_seq=32, gate_interval=1),
        seed=seed + 2,
    )
    return provider, resampler, decoder


def test_criterion_6_k_shot_copy_task_benefit():
    """1-shot beats 0-shot by >= 20 points; random retrieval ~ 0-shot.

    Clip features are a single shared matrix, so the only way to name
    the action is to read it off the retrieved caption.
    """
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    words = [f"act{i:03d}" for i in range(96)]
    vocab = cap.Vocabulary.from_texts(words)
    assert len(vocab) <= 128
    shared = rng.normal(size=(2, 8)).astype(np.float32)

    def samples(shots):
        return [
            cap.CaptionSample(f"e-{w}", shared,
                              (shared,) * shots, (w,) * shots, w)
            for w in words
        ]

    def accuracy(model, shots, shuffled=False):
        provider, resampler, decoder = model
        gen_cfg = cap.GenerationConfig(shots=shots, max_new_tokens=3, frames=2)
        order = np.roll(np.arange(len(words)), 1) if shuffled else np.arange(len(words))
        hits = 0
        for i, w in enumerate(words):
            retrieved = [(shared, words[order[i]])] if shots else []
            got = cap.generate_caption(shared, retrieved, vocab, *model, gen_cfg)
            hits += got == w
        return hits / len(words)

    budget = cap.CaptionTrainConfig(epochs=40, learning_rate=3e-3,
                                    batch_size=16, frames=2, seed=0)
    one_shot = _copy_task_models()
    cap.train_captioner(samples(1), vocab, *one_shot, budget)
    zero_shot = _copy_task_models()
    cap.train_captioner(samples(0), vocab, *zero_shot, budget)

    acc1 = accuracy(one_shot, 1)
    acc0 = accuracy(zero_shot, 0)
    acc_random = accuracy(one_shot, 1, shuffled=True)
    elapsed = time.perf_counter() - start

    assert acc1 - acc0 >= 0.20, f"1-shot {acc1:.3f} vs 0-shot {acc0:.3f}"
    assert abs(acc_random - acc0) <= 0.05, (
        f"random retrieval {acc_random:.3f} vs 0-shot {acc0:.3f}"
    )
    assert elapsed < 300.0, f"took {elapsed:.0f}s, budget is 5 min"
    print(f"\nPASS criterion 6: 1-shot {acc1:.2f}, 0-shot {acc0:.2f}, "
          f"random retrieval {acc_random:.2f} ({elapsed:.0f}s)")


def test_criterion_7_mining_matches_exhaustive_scoring():
    """Indexed miner == exhaustive scoring on 20 random corpora, exactly."""
    lexicon = load_default_lexicon()
    rng = np.random.default_rng(707)
    for trial in range(20):
        n_ego = int(rng.integers(5, 101))
        n_exo = int(rng.integers(5, 101))  # total <= 200 clips
        top_k = int(rng.integers(1, 4))
        ego = random_manifest(rng, "ego", n_ego)
        exo = random_manifest(rng, "exo", n_exo)
        mined = mine_pairs(ego, exo, lexicon, MiningConfig(top_k=top_k))
        got = {
            p.ego_clip_id: [(c.exo_clip_id, c.noun_overlap, c.verb_overlap)
                            for c in p.candidates]
            for p in mined.pairs
        }
        want = brute_force_pairs(ego, exo, lexicon, top_k)
        assert got == want, f"trial {trial}: miner diverged from oracle"
    print("\nPASS criterion 7: 20/20 corpora identical to exhaustive scoring")


def test_criterion_8_metric_hand_checks_and_oracles():
    """Pinned metric values plus definition oracles, exact or <= 1e-9."""
    # BLEU-4 on identical pairs
    same = [metrics.CaptionPair("the cat sat on the mat", ("the cat sat on the mat",)),
            metrics.CaptionPair("a dog runs in the park", ("a dog runs in the park",))]
    assert metrics.bleu4(same).value == pytest.approx(1.0, abs=1e-9)

    # ROUGE-L on the two-token overlap fixture: P=2/3, R=1, F1=0.8
    rouge = metrics.rouge_l([metrics.CaptionPair("a b c", ("a c",))])
    assert rouge.value == pytest.approx(0.8, abs=1e-9)

    # CIDEr on a degenerate corpus where every reference is shared:
    # df hits N for every n-gram, idf = log(N/N) = 0, so the score is 0
    degenerate = [metrics.CaptionPair("wash the pan", ("wash the pan",)),
                  metrics.CaptionPair("wash the pan now", ("wash the pan",))]
    assert metrics.cider(degenerate).value == pytest.approx(0.0, abs=1e-9)

    # ranking metrics vs literal definition oracles on random instances
    from test_metrics import map_oracle, ndcg_oracle

    rng = np.random.default_rng(808)
    for _ in range(200):
        q = int(rng.integers(1, 11))
        c = int(rng.integers(2, 11))  # <= 10x10
        scores = rng.normal(size=(q, c))
        rel = (rng.random((q, c)) < 0.35).astype(float)
        if not rel.any():
            rel[0, 0] = 1.0
        ids = [f"{j:06d}" for j in range(c)]
        assert metrics.mean_average_precision(scores, rel).value == pytest.approx(
            map_oracle(scores, rel, ids), abs=1e-9)
        assert metrics.ndcg(scores, rel).value == pytest.approx(
            ndcg_oracle(scores, rel, ids), abs=1e-9)

        # R@k against a literal reading of the definition
        k = int(rng.integers(1, c + 1))
        rankings = {}
        relevant = {}
        for i in range(q):
            order = sorted(range(c), key=lambda j: (-scores[i, j], ids[j]))
            rankings[f"q{i}"] = [ids[j] for j in order]
            relevant[f"q{i}"] = {ids[j] for j in range(c) if rel[i, j] > 0}
        want_hits = [
            any(x in relevant[f"q{i}"] for x in rankings[f"q{i}"][:k])
            for i in range(q) if relevant[f"q{i}"]
        ]
        if want_hits:
            got = metrics.recall_at_k(rankings, relevant, k)
            assert got.value == pytest.approx(
                sum(want_hits) / len(want_hits), abs=1e-9)

    # MCQ vs a literal argmax-with-strict-ties oracle
    for _ in range(200):
        g = int(rng.integers(1, 11))
        groups, scores_by_query, oracle_hits = [], {}, 0
        for i in range(g):
            vals = np.round(rng.normal(size=5), 1)  # rounding forces ties
            correct = int(rng.integers(0, 5))
            ids5 = [f"c{i}-{j}" for j in range(5)]
            groups.append(metrics.CandidateGroup(f"q{i}", ids5, correct, "inter"))
            scores_by_query[f"q{i}"] = dict(zip(ids5, map(float, vals)))
            top = vals.max()
            if vals[correct] == top and (vals == top).sum() == 1:
                oracle_hits += 1
        got = metrics.mcq_accuracy(groups, scores_by_query)
        assert got.value == pytest.approx(oracle_hits / g, abs=1e-9)
    print("\nPASS criterion 8: hand values exact, oracles matched to <= 1e-9")


def test_criterion_9_pipeline_reproducibility(tmp_path):
    """Desk-scale CLI pipeline twice: < 10 min each, byte-identical output."""
    stages = [
        ["mine-pairs"], ["refine-captions"], ["train-retrieval"],
        ["build-index"], ["retrieve"], ["train-captioner"], ["caption"],
        ["evaluate-retrieval"], ["evaluate-captioning"],
    ]

    def run_once(root: Path) -> dict:
        root.mkdir()
        corpus = subprocess.run(
            [sys.executable, str(REPO_ROOT / "scripts/make_demo_corpus.py"),
             "--out", str(root / "data"), "--seed", "7"],
            capture_output=True, text=True)
        assert corpus.returncode == 0, corpus.stderr
        (root / "desk.yaml").write_bytes(
            (REPO_ROOT / "configs/desk.yaml").read_bytes())
        start = time.perf_counter()
        for stage in stages:
            done = subprocess.run(
                [sys.executable, "-m", "crossview", *stage, "--config", "desk.yaml"],
                capture_output=True, text=True, cwd=str(root))
            assert done.returncode == 0, f"{stage}: {done.stderr}"
        elapsed = time.perf_counter() - start
        assert elapsed < 600.0, f"pipeline took {elapsed:.0f}s, budget is 10 min"
        return {
            str(p.relative_to(root)): p.read_bytes()
            for p in sorted((root / "out").rglob("*")) if p.is_file()
        }

    first = run_once(tmp_path / "first")
    second = run_once(tmp_path / "second")
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], f"{name} differs between runs"
    assert len(first) >= 17  # 8 artifacts + 9 summaries
    print(f"\nPASS criterion 9: {len(first)} artifacts byte-identical across runs")
