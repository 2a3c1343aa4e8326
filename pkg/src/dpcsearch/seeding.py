"""Stable seed derivation.

Every stochastic component gets its own stream derived by hashing a
master seed with a purpose tag (and usually an index), so streams never
collide, resuming a run replays identical draws, and nothing depends on
call order. SHA-256 keeps the mapping stable across platforms and Python
versions, unlike ``hash()``.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts) -> int:
    """Hash the parts into a non-negative 63-bit integer seed."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)
