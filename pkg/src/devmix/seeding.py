"""Deterministic, platform-independent seed derivation.

Every stochastic entry point in the package takes an explicit 64-bit seed.
Sub-streams (per replicate, per restart, per sampler branch) derive their own
seed from the parent seed plus a distinguishing tag, so results never depend
on execution order or on Python's salted ``hash``.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map a tuple of ints/strings to a stable 64-bit seed via SHA-256."""
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, (np.integer,)):
            part = int(part)
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def rng_from(*parts) -> np.random.Generator:
    """Fresh generator seeded from the derived seed of ``parts``."""
    return np.random.default_rng(derive_seed(*parts))
