"""Counter-based random streams.

Every stochastic site in the pipeline draws from a generator keyed by
(global seed, purpose tag, integer indices such as step or sample).  The
key is hashed into a Philox counter-based bit generator, so the stream a
site sees depends only on its key, never on how many draws other sites
made or in which order concurrent work was scheduled.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "tag_id"]


def tag_id(tag: str) -> int:
    """Stable 64-bit integer for a purpose tag (platform independent)."""
    digest = hashlib.sha256(tag.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(seed: int, tag: str, *indices: int) -> np.random.Generator:
    """Generator for the (seed, tag, *indices) key.

    Same key, same stream, on any platform and under any execution order.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, tag_id(tag)) + tuple(
        int(i) & 0xFFFFFFFFFFFFFFFF for i in indices
    )
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
