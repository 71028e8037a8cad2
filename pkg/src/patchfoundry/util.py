"""Shared plumbing: derived RNG streams and content hashing."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np


def derive_rng(seed: int, *tokens) -> np.random.Generator:
    """Deterministic per-item RNG stream from (global seed, item tokens).

    Hash-derived so results are independent of scheduling order and
    identical across platforms.
    """
    digest = hashlib.sha256(repr((int(seed),) + tuple(str(t) for t in tokens)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:16], "little"))


def sha256_file(path: Path | str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()
