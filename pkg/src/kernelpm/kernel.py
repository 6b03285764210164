"""Group-averaged arcsin kernel and its finite-width NTK counterpart.

The kernel between two configurations of ``L`` sites is

    k(x, y) = 1/|G| Σ_g σ(<g·x, y> / L),    σ(t) = t · arcsin(γ t)

Because configurations are ±1 vectors, ``<x, y> = L − 2·hamming(x, y)``, so on
packed integers every evaluation reduces to a popcount and a lookup in a
table of ``L + 1`` precomputed σ values.  Averaging over the group on the
support side (``<g·x, y> = <x, g⁻¹·y>``) lets the orbit images of the support
be computed once per model.

σ is even, hence ``k(−x, y) = k(x, y)``: every function in the RKHS is
invariant under global spin inversion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ConfigLengthError
from .lattice import SpinConfig, SymmetryGroup, orbit_images, popcount64

DEFAULT_GAMMA = 0.5808
# tanh(x) ≈ erf(ERF_ALPHA·x); γ = 2α²/(1+2α²)
ERF_ALPHA = 0.8324


@dataclass(frozen=True)
class KernelParams:
    group: SymmetryGroup
    gamma: float = DEFAULT_GAMMA
    z2_even: bool = True

    def __post_init__(self):
        if not 0.0 < abs(self.gamma) < 1.0:
            raise ValueError(f"gamma must lie in (0, 1) for arcsin to be defined, got {self.gamma}")

    @property
    def n_sites(self) -> int:
        return self.group.n_sites

    @property
    def orbit_group(self) -> SymmetryGroup:
        """The group used to identify equivalent samples."""
        return self.group.with_z2(self.z2_even)

    def table(self) -> np.ndarray:
        """``σ((L − 2d)/L) / |G|`` indexed by the Hamming distance ``d``."""
        n = self.n_sites
        t = (n - 2.0 * np.arange(n + 1)) / n
        return sigma(t, self.gamma) / len(self.group)


def sigma(t, gamma: float = DEFAULT_GAMMA):
    t = np.asarray(t, dtype=np.float64)
    return t * np.arcsin(gamma * t)


def _check(x, p):
    if x.n_sites != p.n_sites:
        raise ConfigLengthError(f"configuration has {x.n_sites} sites, kernel expects {p.n_sites}")


def kernel_eval(x: SpinConfig, y: SpinConfig, p: KernelParams) -> float:
    _check(x, p)
    _check(y, p)
    return float(kernel_matrix(np.array([x.bits], np.uint64), np.array([y.bits], np.uint64), p)[0, 0])


def kernel_matrix(xs, ys, p: KernelParams) -> np.ndarray:
    """Rectangular block ``K[a, b] = k(xs[a], ys[b])``."""
    xs = np.ascontiguousarray(xs, dtype=np.uint64)
    images = orbit_images(ys, p.group)
    return _kernel_block(xs, images, p.table())


@dataclass(frozen=True, eq=False)
class GramMatrix:
    entries: np.ndarray
    order: np.ndarray


def gram_matrix(samples, p: KernelParams) -> GramMatrix:
    samples = np.ascontiguousarray(samples, dtype=np.uint64).reshape(-1)
    if samples.size == 0:
        raise ValueError("the Gram matrix needs at least one sample")
    images = orbit_images(samples, p.group)
    return GramMatrix(_gram(samples, images, p.table()), samples)


def weighted_sum(xs, support_images: np.ndarray, weights: np.ndarray, table: np.ndarray) -> np.ndarray:
    """``Σ_i w_i k(x, y_i)`` for a batch, without forming the kernel block."""
    xs = np.ascontiguousarray(xs, dtype=np.uint64).reshape(-1)
    return _weighted_sum(xs, support_images, np.ascontiguousarray(weights, dtype=np.float64), table)


@nb.njit(cache=True, nogil=True)
def _kernel_block(xs, images, table):
    out = np.empty((xs.shape[0], images.shape[0]))
    for a in range(xs.shape[0]):
        x = xs[a]
        for b in range(images.shape[0]):
            s = 0.0
            for g in range(images.shape[1]):
                s += table[popcount64(x ^ images[b, g])]
            out[a, b] = s
    return out


@nb.njit(cache=True, nogil=True)
def _gram(xs, images, table):
    m = xs.shape[0]
    out = np.empty((m, m))
    for a in range(m):
        x = xs[a]
        for b in range(a, m):
            s = 0.0
            for g in range(images.shape[1]):
                s += table[popcount64(x ^ images[b, g])]
            out[a, b] = s
            out[b, a] = s
    return out


@nb.njit(cache=True, fastmath=True, nogil=True)
def _weighted_sum(xs, images, weights, table):
    out = np.empty(xs.shape[0])
    m, ng = images.shape
    for a in range(xs.shape[0]):
        x = xs[a]
        acc = 0.0
        for b in range(m):
            s = 0.0
            for g in range(ng):
                s += table[popcount64(x ^ images[b, g])]
            acc += weights[b] * s
        out[a] = acc
    return out


def empirical_ntk(p: KernelParams, width: int, pairs, seed=0, rescale: bool = True) -> np.ndarray:
    """Finite-width tangent kernel of a symmetrized log-cosh network.

    The network is ``f(x) = 1/|G| Σ_g 1/√n₁ Σ_i log cosh(<L_g w_i, x>/√n₀)``
    with standard-normal filters ``w``.  Its gradient with respect to filter
    ``w_i`` is ``1/(|G|√(n₁n₀)) Σ_g tanh(z_gi) g⁻¹·x``, so the tangent kernel
    is a ``|G|×|G|`` contraction of tanh correlations with overlaps.

    In the infinite-width limit, and with tanh replaced by ``erf(αx)``, the
    result equals ``(2/π) k(x, y)``.  With ``rescale=True`` the ``π/2``
    factor is applied so the output is directly comparable to
    :func:`kernel_eval`.
    """
    if width < 1:
        raise ValueError("width must be at least 1")
    pairs = list(pairs)
    n0 = p.n_sites
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((width, n0))
    inv = np.argsort(p.group.array, axis=1)
    out = np.empty(len(pairs))
    for k, (x, y) in enumerate(pairs):
        _check(x, p)
        _check(y, p)
        xs = x.spins.astype(np.float64)[inv]
        ys = y.spins.astype(np.float64)[inv]
        tx = np.tanh(w @ xs.T / np.sqrt(n0))
        ty = np.tanh(w @ ys.T / np.sqrt(n0))
        corr = tx.T @ ty / width
        overlap = xs @ ys.T / n0
        out[k] = np.sum(corr * overlap) / len(p.group) ** 2
    if rescale:
        out *= np.pi / 2
    return out
