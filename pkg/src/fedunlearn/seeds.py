"""Stable seed derivation for nested randomness.

Sub-seeds are derived by hashing the textual parts, so they are stable
across processes and platforms (unlike the builtin ``hash``).
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    """Map any tuple of printable parts to a 64-bit seed, deterministically."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
