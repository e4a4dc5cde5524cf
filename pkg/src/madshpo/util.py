"""Deterministic hashing helpers (stable across processes and platforms)."""

from __future__ import annotations

import hashlib


def hash_u64(*parts) -> int:
    """Stable 64-bit digest of the stringified parts."""
    payload = "\x1f".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def hash_unit(*parts) -> float:
    """Stable uniform value in [0, 1)."""
    return hash_u64(*parts) / 2.0**64
