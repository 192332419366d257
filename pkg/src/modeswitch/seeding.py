"""Seed fan-out and content hashing.

A component's generator is ``SeedSequence([global_seed, stable_hash(name), *extra])``;
names are slash-separated paths such as ``"collect/aggressive/merge"``.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np


def stable_hash(text: str) -> int:
    """32-bit hash of ``text`` that does not change between interpreter runs."""
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "little")


def seed_sequence(global_seed: int, name: str, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(global_seed), stable_hash(name), *[int(e) for e in extra]])


def rng_for(global_seed: int, name: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(global_seed, name, *extra))


def sub_seed(global_seed: int, name: str, *extra: int) -> int:
    """A plain integer seed, for interfaces (like the CLI) that take one."""
    return int(seed_sequence(global_seed, name, *extra).generate_state(1, np.uint32)[0])


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def content_hash(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("ascii")).hexdigest()[:16]
