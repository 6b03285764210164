"""Periodic lattices, bit-packed spin configurations and translation groups.

Configurations are stored as integers with one bit per site: bit ``i`` set
means spin ``+1`` on site ``i``.  Batches of configurations are ``uint64``
arrays, which limits batch routines to at most 64 sites.  The ``±1`` view is
what the public API exposes.

Permutation convention
----------------------
A permutation ``g`` is stored as an integer array with ``g[j]`` the
destination of site ``j``.  Acting on a configuration moves the spin at site
``j`` to site ``g[j]``, so ``(g·x)[i] = x[g⁻¹(i)]``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numba as nb
import numpy as np

from .errors import ConfigLengthError, InvalidLatticeError

MAX_PACKED_SITES = 64


@dataclass(frozen=True)
class SpinConfig:
    """A computational-basis state ``x ∈ {-1, +1}^N`` in packed form."""

    bits: int
    n_sites: int

    def __post_init__(self):
        if self.n_sites < 1:
            raise ConfigLengthError("a configuration needs at least one site")
        if self.bits < 0 or self.bits >> self.n_sites:
            raise ConfigLengthError(f"bits {self.bits:#x} do not fit in {self.n_sites} sites")

    @classmethod
    def from_spins(cls, spins: Sequence[int]) -> "SpinConfig":
        bits = 0
        for i, s in enumerate(spins):
            if s == 1:
                bits |= 1 << i
            elif s != -1:
                raise ValueError(f"spin values must be +1 or -1, got {s!r} at site {i}")
        return cls(bits, len(spins))

    @property
    def spins(self) -> np.ndarray:
        return unpack(np.array([self.bits], dtype=np.uint64), self.n_sites)[0]

    @property
    def magnetization(self) -> int:
        return 2 * self.bits.bit_count() - self.n_sites

    def flipped(self) -> "SpinConfig":
        return SpinConfig(self.bits ^ ((1 << self.n_sites) - 1), self.n_sites)

    def __len__(self):
        return self.n_sites

    def __repr__(self):
        s = "".join("+" if (self.bits >> i) & 1 else "-" for i in range(self.n_sites))
        return f"SpinConfig({s})"


def pack(spins) -> np.ndarray:
    """Pack a ``(B, N)`` array of ±1 spins into ``uint64`` integers."""
    spins = np.atleast_2d(np.asarray(spins))
    n = spins.shape[1]
    if n > MAX_PACKED_SITES:
        raise ConfigLengthError(f"packed batches support at most {MAX_PACKED_SITES} sites")
    if not np.all(np.abs(spins) == 1):
        raise ValueError("spin values must be +1 or -1")
    weights = np.left_shift(np.uint64(1), np.arange(n, dtype=np.uint64))
    return ((spins > 0).astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)


def unpack(bits, n_sites: int) -> np.ndarray:
    """Inverse of :func:`pack`; returns an ``int8`` array of shape ``(B, N)``."""
    bits = np.asarray(bits, dtype=np.uint64).reshape(-1)
    shifts = np.arange(n_sites, dtype=np.uint64)
    b = (bits[:, None] >> shifts[None, :]) & np.uint64(1)
    return (2 * b.astype(np.int8) - 1).astype(np.int8)


def site_mask(n_sites: int) -> np.uint64:
    return np.uint64((1 << n_sites) - 1)


@dataclass(frozen=True)
class Lattice:
    """Periodic chain or square lattice with row-major site numbering.

    Site ``(i0, i1)`` of a ``dims = (d0, d1)`` lattice has index
    ``i0 * d1 + i1``.  Bonds are ``(site, neighbour along +axis)`` for every
    site and every axis.  At extent 2 this yields each geometric bond twice;
    the duplicates are kept so that ``Σ_<ij>`` is uniform over lattice sizes.
    """

    dims: tuple[int, ...]
    pbc: bool = True
    bonds: tuple[tuple[int, int], ...] = field(default=(), repr=False)

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.dims))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @cached_property
    def bond_array(self) -> np.ndarray:
        return np.array(self.bonds, dtype=np.int64).reshape(-1, 2)

    def coords(self, site: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(site, self.dims))

    def index(self, coords: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(c % d for c, d in zip(coords, self.dims)), self.dims))

    def sublattice(self) -> np.ndarray:
        """Checkerboard parity of every site (0 or 1)."""
        return np.array([sum(self.coords(s)) % 2 for s in range(self.n_sites)], dtype=np.int8)

    def is_bipartite(self) -> bool:
        return all(d % 2 == 0 for d in self.dims)


def build_lattice(dims, pbc: bool = True) -> Lattice:
    dims = tuple(int(d) for d in np.atleast_1d(dims))
    if len(dims) not in (1, 2):
        raise InvalidLatticeError(f"only 1D chains and 2D square lattices are supported, got dims={dims}")
    if any(d < 2 for d in dims):
        raise InvalidLatticeError(f"every extent must be at least 2, got dims={dims}")
    if not pbc:
        raise InvalidLatticeError("only periodic boundary conditions are supported")
    n = int(np.prod(dims))
    bonds = []
    for site in range(n):
        c = np.unravel_index(site, dims)
        for axis in range(len(dims)):
            nb_c = list(c)
            nb_c[axis] = (nb_c[axis] + 1) % dims[axis]
            bonds.append((site, int(np.ravel_multi_index(tuple(nb_c), dims))))
    return Lattice(dims=dims, pbc=True, bonds=tuple(bonds))


@dataclass(frozen=True)
class SymmetryGroup:
    """A group of site permutations; element 0 is the identity.

    ``z2_even`` marks that global spin inversion is treated as a symmetry
    when canonicalizing orbits.
    """

    perms: tuple[tuple[int, ...], ...]
    z2_even: bool = False

    def __post_init__(self):
        n = len(self.perms[0])
        if tuple(self.perms[0]) != tuple(range(n)):
            raise ValueError("element 0 of a symmetry group must be the identity")
        for p in self.perms:
            if sorted(p) != list(range(n)):
                raise ValueError(f"{p} is not a permutation of {n} sites")

    @cached_property
    def array(self) -> np.ndarray:
        return np.array(self.perms, dtype=np.int64)

    @property
    def n_sites(self) -> int:
        return len(self.perms[0])

    def __len__(self):
        return len(self.perms)

    def with_z2(self, z2_even: bool) -> "SymmetryGroup":
        return SymmetryGroup(self.perms, z2_even)


def trivial_group(n_sites: int, z2_even: bool = False) -> SymmetryGroup:
    return SymmetryGroup((tuple(range(n_sites)),), z2_even)


def single_site() -> Lattice:
    """A lone spin without bonds, for the two-level sanity cases."""
    return Lattice(dims=(1,), pbc=True, bonds=())


def translation_group(lattice: Lattice, z2_even: bool = False) -> SymmetryGroup:
    """All ``N`` translations of a periodic lattice, identity first.

    Shifts are enumerated with the last axis varying fastest, so for a chain
    element ``s`` maps site ``i`` to ``(i + s) mod N``.
    """
    if not lattice.pbc:
        raise InvalidLatticeError("translations require periodic boundaries")
    perms = []
    sites = [lattice.coords(s) for s in range(lattice.n_sites)]
    for shift in itertools.product(*(range(d) for d in lattice.dims)):
        perms.append(tuple(lattice.index([c + s for c, s in zip(coord, shift)]) for coord in sites))
    return SymmetryGroup(tuple(perms), z2_even)


def compose(g, h) -> tuple[int, ...]:
    """``g ∘ h``: apply ``h`` first, then ``g``."""
    g = np.asarray(g)
    return tuple(int(v) for v in g[np.asarray(h)])


def apply_perm(g, x: SpinConfig) -> SpinConfig:
    g = np.asarray(g, dtype=np.int64)
    if g.shape != (x.n_sites,):
        raise ConfigLengthError(f"permutation of length {g.shape[0]} applied to {x.n_sites} sites")
    out = apply_perm_packed(np.array([x.bits], dtype=np.uint64), g)
    return SpinConfig(int(out[0]), x.n_sites)


def canonical_orbit_key(x: SpinConfig, group: SymmetryGroup) -> int:
    """Smallest packed integer in the orbit of ``x`` (lexicographic minimum)."""
    if group.n_sites != x.n_sites:
        raise ConfigLengthError("group and configuration disagree on the number of sites")
    keys = orbit_keys(np.array([x.bits], dtype=np.uint64), group)
    return int(keys[0])


def orbit_keys(xs, group: SymmetryGroup) -> np.ndarray:
    xs = np.ascontiguousarray(xs, dtype=np.uint64)
    return _orbit_keys(xs, group.array, bool(group.z2_even), site_mask(group.n_sites))


def orbit_images(xs, group: SymmetryGroup) -> np.ndarray:
    """``(B, |G|)`` array holding ``g·x`` for every config and group element."""
    xs = np.ascontiguousarray(xs, dtype=np.uint64)
    return _orbit_images(xs, group.array)


@nb.njit(cache=True)
def _perm_bits(x, perm):
    out = np.uint64(0)
    one = np.uint64(1)
    for j in range(perm.shape[0]):
        if (x >> np.uint64(j)) & one:
            out |= one << np.uint64(perm[j])
    return out


@nb.njit(cache=True)
def apply_perm_packed(xs, perm):
    out = np.empty_like(xs)
    for b in range(xs.shape[0]):
        out[b] = _perm_bits(xs[b], perm)
    return out


@nb.njit(cache=True)
def _orbit_images(xs, perms):
    out = np.empty((xs.shape[0], perms.shape[0]), dtype=np.uint64)
    for b in range(xs.shape[0]):
        for g in range(perms.shape[0]):
            out[b, g] = _perm_bits(xs[b], perms[g])
    return out


@nb.njit(cache=True)
def _orbit_keys(xs, perms, z2, mask):
    out = np.empty_like(xs)
    for b in range(xs.shape[0]):
        best = xs[b]
        if z2 and (best ^ mask) < best:
            best = best ^ mask
        for g in range(1, perms.shape[0]):
            y = _perm_bits(xs[b], perms[g])
            if y < best:
                best = y
            if z2:
                y = y ^ mask
                if y < best:
                    best = y
        out[b] = best
    return out


@nb.njit(cache=True, inline="always")
def popcount64(x):
    x = x - ((x >> np.uint64(1)) & np.uint64(0x5555555555555555))
    x = (x & np.uint64(0x3333333333333333)) + ((x >> np.uint64(2)) & np.uint64(0x3333333333333333))
    x = (x + (x >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (x * np.uint64(0x0101010101010101)) >> np.uint64(56)
