"""Enumerated bases for dense vectors and orbit tabulation.

A dense vector over a :class:`Basis` stores one amplitude per entry of
``basis.configs``.  For the full Hilbert space the entry index equals the
packed configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numba as nb
import numpy as np

from .errors import ConfigLengthError
from .lattice import SymmetryGroup, orbit_keys, popcount64

MAX_DENSE_SITES = 26


@dataclass(frozen=True, eq=False)
class Basis:
    n_sites: int
    configs: np.ndarray
    index_map: np.ndarray
    sector: str = "full"

    @property
    def dim(self) -> int:
        return self.configs.shape[0]

    def index(self, xs) -> np.ndarray:
        idx = self.index_map[np.asarray(xs, dtype=np.int64)]
        if np.any(idx < 0):
            raise ConfigLengthError("configuration outside the basis sector")
        return idx


def _check_dense(n_sites):
    if n_sites > MAX_DENSE_SITES:
        raise ConfigLengthError(f"dense bases are limited to {MAX_DENSE_SITES} sites, got {n_sites}")


@lru_cache(maxsize=8)
def full_basis(n_sites: int) -> Basis:
    _check_dense(n_sites)
    configs = np.arange(1 << n_sites, dtype=np.uint64)
    return Basis(n_sites, configs, np.arange(1 << n_sites, dtype=np.int64), "full")


@lru_cache(maxsize=8)
def zero_magnetization_basis(n_sites: int) -> Basis:
    _check_dense(n_sites)
    if n_sites % 2:
        raise ConfigLengthError("the zero-magnetization sector needs an even number of sites")
    configs = _configs_with_popcount(n_sites, n_sites // 2)
    assert configs.shape[0] == comb(n_sites, n_sites // 2)
    index_map = np.full(1 << n_sites, -1, dtype=np.int64)
    index_map[configs.astype(np.int64)] = np.arange(configs.shape[0])
    return Basis(n_sites, configs, index_map, "zero_magnetization")


def basis_for(n_sites: int, constraint: str | None) -> Basis:
    if constraint in (None, "none", "None"):
        return full_basis(n_sites)
    if constraint in ("zero_magnetization", "ZeroMagnetization"):
        return zero_magnetization_basis(n_sites)
    raise ValueError(f"unknown sector constraint {constraint!r}")


@nb.njit(cache=True)
def _configs_with_popcount(n, k):
    total = np.uint64(1) << np.uint64(n)
    count = 0
    for x in range(total):
        if popcount64(np.uint64(x)) == k:
            count += 1
    out = np.empty(count, dtype=np.uint64)
    j = 0
    for x in range(total):
        if popcount64(np.uint64(x)) == k:
            out[j] = x
            j += 1
    return out


@dataclass(frozen=True, eq=False)
class OrbitIndex:
    """Maps every configuration of ``2^N`` onto its orbit representative.

    ``orbit_of[x]`` indexes into ``reps``; functions invariant under the
    group only need to be evaluated on ``reps``.
    """

    reps: np.ndarray
    orbit_of: np.ndarray

    @property
    def n_orbits(self) -> int:
        return self.reps.shape[0]


@lru_cache(maxsize=8)
def orbit_index(group: SymmetryGroup) -> OrbitIndex:
    n = group.n_sites
    _check_dense(n)
    keys = orbit_keys(np.arange(1 << n, dtype=np.uint64), group)
    reps, inverse = np.unique(keys, return_inverse=True)
    return OrbitIndex(reps, inverse.astype(np.int32))
