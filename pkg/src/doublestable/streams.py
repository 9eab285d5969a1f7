"""Counter-based random streams keyed by ``(seed, index, label)``.

Every replication draws from its own Philox stream, so results do not depend
on how replications are scheduled across workers.
"""

from __future__ import annotations

import zlib

import numpy as np


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, index: int = 0, label: str = "") -> np.random.Generator:
    """Return the generator for replication ``index`` of substream ``label``."""
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), _label_key(label)))
    return np.random.Generator(np.random.Philox(seq))


def streams(seed: int, count: int, label: str = "", start: int = 0) -> list[np.random.Generator]:
    return [stream(seed, start + i, label) for i in range(count)]
