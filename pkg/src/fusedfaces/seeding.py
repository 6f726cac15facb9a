"""Stage-tagged seed derivation.

One top-level integer seed is fanned out into independent streams, one per
(stage, tag...) path, so changing how many draws one stage makes never shifts
another stage's randomness.
"""

import hashlib

import numpy as np


def derive_seed(seed, *tags):
    key = ":".join([str(int(seed))] + [str(t) for t in tags]).encode("utf-8")
    digest = hashlib.sha256(key).digest()
    return int.from_bytes(digest[:8], "little")


def make_rng(seed, *tags):
    return np.random.default_rng(derive_seed(seed, *tags))
