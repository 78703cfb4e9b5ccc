"""Named deterministic RNG substreams.

A master seed plus a key tuple (role, iteration, step, rollout, purpose, ...)
is hashed into a 64-bit stream seed, so any part of a run can be recomputed
independently of execution order.
"""

from __future__ import annotations

import hashlib
import random


def derive_seed(master_seed: int, *key) -> int:
    material = repr((int(master_seed),) + tuple(key)).encode("utf-8")
    digest = hashlib.sha256(material).digest()
    return int.from_bytes(digest[:8], "big")


def substream(master_seed: int, *key) -> random.Random:
    return random.Random(derive_seed(master_seed, *key))
