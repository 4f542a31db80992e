"""Reference activation-vector provider for the round-trip evaluation suite."""

from .embed import EMBED_DIM, build_backbone, embed, main

__all__ = ["EMBED_DIM", "build_backbone", "embed", "main"]
