"""Stable seed derivation.

Every stochastic component (data generation, init, per-round training,
privacy noise, encryption) draws from a seed derived from the master seed
plus a label path, via SHA-256.  Python's builtin ``hash`` is salted per
process, so it must not be used here: the same config has to reproduce the
same run across processes and transports.
"""

import hashlib

import numpy as np


def derive_seed(master: int, *labels) -> int:
    text = repr((int(master),) + tuple(str(x) for x in labels))
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derived_rng(master: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *labels))
