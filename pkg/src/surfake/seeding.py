"""Derivation of named random substreams from one root seed.

Every stochastic component (split shuffling, weight init, batch order,
embeddings, synthetic scenes) draws its seed from the root seed through a
named substream, so individual stages can be rerun independently while the
whole pipeline stays reproducible from a single integer.
"""

import hashlib


def substream_seed(root_seed: int, name: str) -> int:
    """Derive a stable 63-bit seed for the substream ``name`` of ``root_seed``."""
    digest = hashlib.sha256(f"{root_seed}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
