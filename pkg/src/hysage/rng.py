"""Seed derivation and counter-based uniforms.

Stage seeds come from ``sha256("<root>:<stage>")``, so each pipeline stage owns an
independent stream that depends only on the root seed and the stage name.
``hashed_uniforms`` maps integer coordinates (seed, a, b, ...) to uniforms in
[0, 1) through a splitmix64 mixer; results do not depend on evaluation order,
which keeps walks and history samples reproducible under any batching.
"""
from __future__ import annotations

import hashlib

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def stage_seed(root: int, stage: str) -> int:
    digest = hashlib.sha256(f"{int(root)}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & ((1 << 63) - 1)


def stage_rng(root: int, stage: str) -> np.random.Generator:
    return np.random.default_rng(stage_seed(root, stage))


def _mix(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def hashed_uniforms(seed: int, *coords) -> np.ndarray:
    """Uniforms in [0, 1) keyed by broadcast integer coordinate arrays."""
    with np.errstate(over="ignore"):
        h = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GOLDEN)
        for c in coords:
            c = np.asarray(c).astype(np.uint64)
            h = _mix(h ^ (c * _GOLDEN + _GOLDEN))
    return (np.asarray(h) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
