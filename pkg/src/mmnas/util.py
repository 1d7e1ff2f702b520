"""Shared helpers: canonical JSON, short hashes, deterministic RNG streams."""

from __future__ import annotations

import hashlib
import json

import numpy as np


def canonical_json(obj) -> str:
    """Bit-stable JSON encoding: sorted keys, no whitespace."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def short_hash(obj) -> str:
    """16-hex-char digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def seeded_rng(seed: int, *tags: int) -> np.random.Generator:
    """Independent, reproducible RNG stream for (seed, purpose tags)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *map(int, tags)]))


# purpose tags for seeded_rng; every consumer uses one of these so streams
# never collide across stages
TAG_WEIGHT_INIT = 1
TAG_ARCH_INIT = 2
TAG_SHUFFLE = 3
TAG_AUGMENT = 4
TAG_PRETRAIN_INIT = 5
TAG_PRETRAIN_EPOCH = 6
TAG_CLASSIFIER_INIT = 7
TAG_CLASSIFIER_EPOCH = 8
TAG_SPLIT = 9
TAG_DATA_LATENT = 10
TAG_DATA_MAPS = 11
TAG_DATA_NOISE = 12
TAG_DATA_LABELS = 13
TAG_DATA_TOKENS = 14
