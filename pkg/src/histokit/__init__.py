"""histokit: cluster-based annotation of tissue-tile embeddings and multimodal survival models."""

__version__ = "0.1.0"
