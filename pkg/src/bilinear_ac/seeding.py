"""Named, independent random streams derived from one root seed.

Every run owns a single integer root seed.  Each consumer (environment,
action noise, buffer sampling, gate noise, ...) gets its own generator
keyed by name, so adding or removing draws in one component never
reshuffles the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Streams used by the training loop; other components may derive extras.
STREAMS = ("env", "actor-noise", "buffer-sampling", "gate-noise", "init", "eval")


def stream(root_seed: int, name: str) -> np.random.Generator:
    """Generator for the substream `name` under `root_seed`.

    The name is hashed so the mapping is stable across platforms and
    insensitive to the order in which streams are created.
    """
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence([root_seed, key]))


def streams(root_seed: int, names=STREAMS) -> dict[str, np.random.Generator]:
    return {name: stream(root_seed, name) for name in names}
