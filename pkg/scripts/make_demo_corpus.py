"""Generate a small synthetic ego/exo corpus for pipeline demos.

Each paired clip gets a shared latent vector; ego and exo features are
different fixed linear views of that latent plus frame noise, so a
retrieval model can actually learn the correspondence. Captions are
templated from lexicon verbs and nouns, so pair mining recovers the
ground-truth pairing from text alone.

    python scripts/make_demo_corpus.py --out data --pairs 18 --seed 7
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from crossview.data import ClipRecord, DatasetManifest, save_manifest, write_feature_store

# (scenario, verb lemma, noun lemma) — lemmas come from the packaged lexicon
ACTIVITIES = [
    ("kitchen", "cut", "carrot"),
    ("kitchen", "stir", "soup"),
    ("kitchen", "crack", "egg"),
    ("kitchen", "knead", "dough"),
    ("kitchen", "wash", "bowl"),
    ("kitchen", "grate", "cheese"),
    ("workshop", "drill", "board"),
    ("workshop", "tighten", "bolt"),
    ("workshop", "sand", "table"),
    ("workshop", "paint", "door"),
    ("workshop", "measure", "pipe"),
    ("workshop", "hammer", "nail"),
    ("garden", "plant", "seed"),
    ("garden", "prune", "flower"),
    ("garden", "trim", "bush"),
    ("garden", "pull", "leaf"),
    ("garden", "dig", "soil"),
    ("garden", "pick", "tomato"),
]

PLACES = {"kitchen": "kitchen", "workshop": "garage", "garden": "garden"}


def build_corpus(n_pairs: int, dim: int, latent_dim: int, seed: int):
    if n_pairs > len(ACTIVITIES):
        raise SystemExit(
            f"at most {len(ACTIVITIES)} pairs available, asked for {n_pairs}"
        )
    rng = np.random.default_rng(seed)
    proj_ego = rng.normal(0.0, latent_dim**-0.5, size=(latent_dim, dim))
    proj_exo = rng.normal(0.0, latent_dim**-0.5, size=(latent_dim, dim))

    ego_records, exo_records = [], []
    ego_feats, exo_feats = {}, {}
    for i, (scenario, verb, noun) in enumerate(ACTIVITIES[:n_pairs]):
        latent = rng.normal(size=latent_dim)
        for view, proj, records, feats in (
            ("ego", proj_ego, ego_records, ego_feats),
            ("exo", proj_exo, exo_records, exo_feats),
        ):
            clip_id = f"{view}-{i:03d}"
            frames = int(rng.integers(6, 11))
            noise = rng.normal(0.0, 0.05, size=(frames, dim))
            feats[clip_id] = (latent @ proj + noise).astype(np.float32)
            if view == "ego":
                text = f"#C C {verb} the {noun}"
            else:
                text = f"a person {verb} the {noun} in the {PLACES[scenario]}"
            records.append(
                ClipRecord(
                    clip_id=clip_id,
                    video_id=f"video-{i:03d}",
                    view=view,
                    scenario=scenario,
                    start=0.0,
                    end=4.0,
                    text=text,
                )
            )
    ego = DatasetManifest("ego", ego_records)
    exo = DatasetManifest("exo", exo_records)
    return ego, exo, ego_feats, exo_feats, dim


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data", help="output directory")
    parser.add_argument("--pairs", type=int, default=18)
    parser.add_argument("--dim", type=int, default=32, help="feature width")
    parser.add_argument("--latent-dim", type=int, default=6)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ego, exo, ego_feats, exo_feats, dim = build_corpus(
        args.pairs, args.dim, args.latent_dim, args.seed
    )
    save_manifest(ego, out / "ego_manifest.jsonl")
    save_manifest(exo, out / "exo_manifest.jsonl")
    write_feature_store(ego_feats, dim, out / "ego_features.cvfs")
    write_feature_store(exo_feats, dim, out / "exo_features.cvfs")
    print(f"wrote {len(ego.records)} ego + {len(exo.records)} exo clips to {out}/")


if __name__ == "__main__":
    main()
