"""Cross-view video-language toolkit.

Mines pseudo ego-exo clip pairs from captioned corpora, trains a
cross-view retrieval model with a view-aware contrastive loss, and
generates egocentric captions with a retrieval-augmented decoder.
"""

__version__ = "0.1.0"
