"""Seeded uniform random bit interleaver."""
from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def permutation(n: int, permutation_seed: int) -> np.ndarray:
    return np.random.default_rng(int(permutation_seed)).permutation(n)


def permutations(n: int, permutation_seed) -> np.ndarray:
    """One permutation per seed; the seed array's shape is prepended."""
    seeds = np.atleast_1d(np.asarray(permutation_seed, dtype=np.int64))
    perms = np.stack([permutation(n, s) for s in seeds.ravel()]).reshape(*seeds.shape, n)
    return perms if np.ndim(permutation_seed) else perms[0]


def interleave(bits, permutation_seed, expected_length: int | None = None):
    """out[i] = bits[perm[i]]. A seed array of shape ``bits.shape[:-1]`` gives one permutation per row."""
    bits = np.asarray(bits)
    if expected_length is not None and bits.shape[-1] != expected_length:
        raise DimensionError(f"expected {expected_length} bits, got {bits.shape[-1]}")
    return gather(bits, permutations(bits.shape[-1], permutation_seed))


def deinterleave(bits, permutation_seed, expected_length: int | None = None):
    bits = np.asarray(bits)
    if expected_length is not None and bits.shape[-1] != expected_length:
        raise DimensionError(f"expected {expected_length} bits, got {bits.shape[-1]}")
    return scatter(bits, permutations(bits.shape[-1], permutation_seed))


def gather(bits, perm):
    """out[..., i] = bits[..., perm[..., i]]."""
    return np.take_along_axis(bits, np.broadcast_to(perm, bits.shape), axis=-1)


def scatter(bits, perm):
    """Inverse of :func:`gather`: out[..., perm[..., i]] = bits[..., i]."""
    out = np.empty_like(bits)
    np.put_along_axis(out, np.broadcast_to(perm, bits.shape), bits, axis=-1)
    return out
