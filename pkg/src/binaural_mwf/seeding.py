"""Deterministic derivation of per-purpose PRNG seeds from one master seed."""

import hashlib


def derive_seed(master_seed, label):
    """Map (master seed, purpose label) to a stable 64-bit seed.

    Uses SHA-256 so the mapping is identical across processes and platforms
    (unlike the builtin salted ``hash``).
    """
    digest = hashlib.sha256(f"{int(master_seed)}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
