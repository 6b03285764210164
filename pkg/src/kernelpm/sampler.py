"""Metropolis–Hastings sampling from ``|ψ|²`` with flip and exchange moves.

Chains advance in lock-step so that every move costs one batched evaluator
call.  Each chain owns its own generator, spawned from a
:class:`numpy.random.SeedSequence`: chain ``c`` uses child ``c`` of the
sampler seed, so identical seeds reproduce the exact sample stream and
chains can be relabelled by permuting the children.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import SamplingError
from .hamiltonian import LogPsi
from .lattice import SpinConfig

SINGLE_FLIP = "single_flip"
EXCHANGE = "exchange"
ZERO_MAGNETIZATION = "zero_magnetization"


@dataclass(frozen=True)
class SamplerConfig:
    move: str = SINGLE_FLIP
    n_chains: int = 16
    burn_in_sweeps: int = 16
    sweeps_per_sample: int = 1
    seed: int = 0
    constraint: str | None = None

    def __post_init__(self):
        if self.move not in (SINGLE_FLIP, EXCHANGE):
            raise ValueError(f"unknown move {self.move!r}")
        if self.constraint not in (None, ZERO_MAGNETIZATION):
            raise ValueError(f"unknown constraint {self.constraint!r}")
        if self.constraint == ZERO_MAGNETIZATION and self.move != EXCHANGE:
            raise ValueError("the zero-magnetization constraint needs exchange moves")
        if self.n_chains < 1 or self.sweeps_per_sample < 1 or self.burn_in_sweeps < 0:
            raise ValueError("n_chains and sweeps_per_sample must be positive, burn_in_sweeps non-negative")

    def check_sites(self, n_sites: int):
        if self.constraint == ZERO_MAGNETIZATION and n_sites % 2:
            raise ValueError("zero magnetization needs an even number of sites")
        if self.move == EXCHANGE and n_sites < 2:
            raise ValueError("exchange moves need at least two sites")


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Samples of shape ``(n_chains, per_chain)``; ``pooled`` is chain-major."""

    chains: np.ndarray
    acceptance: np.ndarray
    last: np.ndarray

    @property
    def pooled(self) -> np.ndarray:
        return self.chains.reshape(-1)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.acceptance))


def propose(move: str, x: SpinConfig, rng: np.random.Generator) -> SpinConfig:
    n = x.n_sites
    if move == SINGLE_FLIP:
        return SpinConfig(x.bits ^ (1 << int(rng.integers(n))), n)
    if move == EXCHANGE:
        i, j = _pair(rng, n, 1)
        return SpinConfig(_exchange(x.bits, int(i[0]), int(j[0])), n)
    raise ValueError(f"unknown move {move!r}")


def _pair(rng, n, size):
    i = rng.integers(n, size=size)
    j = rng.integers(n - 1, size=size)
    j = j + (j >= i)
    return i, j


def _exchange(bits: int, i: int, j: int) -> int:
    if ((bits >> i) ^ (bits >> j)) & 1:
        return bits ^ ((1 << i) | (1 << j))
    return bits


def proposal_distribution(move: str, x: SpinConfig) -> dict[int, float]:
    """Exact proposal probabilities ``q(x'|x)`` matching :func:`propose`."""
    n = x.n_sites
    out: dict[int, float] = {}
    if move == SINGLE_FLIP:
        for k in range(n):
            y = x.bits ^ (1 << k)
            out[y] = out.get(y, 0.0) + 1.0 / n
    elif move == EXCHANGE:
        p = 1.0 / (n * (n - 1))
        for i in range(n):
            for j in range(n):
                if i != j:
                    y = _exchange(x.bits, i, j)
                    out[y] = out.get(y, 0.0) + p
    else:
        raise ValueError(f"unknown move {move!r}")
    return out


def acceptance_probability(logpsi_from, logpsi_to):
    """``min(1, |ψ(x')|² / |ψ(x)|²)``."""
    return np.minimum(1.0, np.exp(np.minimum(2.0 * (np.asarray(logpsi_to) - np.asarray(logpsi_from)), 0.0)))


def transition_matrix(logpsi_values: np.ndarray, move: str, configs: np.ndarray, n_sites: int) -> np.ndarray:
    """Dense Metropolis–Hastings kernel ``P[a, b] = P(configs[a] → configs[b])``."""
    configs = np.asarray(configs, dtype=np.uint64)
    pos = {int(c): a for a, c in enumerate(configs)}
    dim = len(configs)
    mat = np.zeros((dim, dim))
    for a, c in enumerate(configs):
        for y, q in proposal_distribution(move, SpinConfig(int(c), n_sites)).items():
            b = pos.get(y)
            if b is None:
                raise ValueError(f"proposal {y:#x} leaves the configuration set")
            if b != a:
                mat[a, b] += q * float(acceptance_probability(logpsi_values[a], logpsi_values[b]))
        mat[a, a] = 1.0 - mat[a].sum() + mat[a, a]
    return mat


def chain_seeds(seed, n_chains: int) -> list[np.random.SeedSequence]:
    if isinstance(seed, np.random.SeedSequence):
        return seed.spawn(n_chains)
    return np.random.SeedSequence(int(seed)).spawn(n_chains)


def _random_start(rng, n_sites, constraint):
    if constraint == ZERO_MAGNETIZATION:
        up = rng.permutation(n_sites)[: n_sites // 2]
        return int(np.sum(np.left_shift(np.uint64(1), up.astype(np.uint64)), dtype=np.uint64))
    return int(rng.integers(0, 1 << n_sites, dtype=np.uint64)) if n_sites < 64 else int(
        rng.integers(0, 2**63, dtype=np.uint64)) << 1 | int(rng.integers(2))


def _check_finite(values, configs):
    bad = ~np.isfinite(values)
    if np.any(bad):
        c = int(configs[np.nonzero(bad)[0][0]])
        raise SamplingError(f"evaluator returned {values[bad][0]!r} at config {c:#x}", config=c)


def mh_sample(logpsi: LogPsi, cfg: SamplerConfig, n_samples: int, n_sites: int,
              init: np.ndarray | None = None,
              seeds: int | np.random.SeedSequence | Sequence[np.random.SeedSequence] | None = None,
              ) -> SampleBatch:
    """Draw ``n_samples`` configurations from ``|ψ|²``.

    Chains start from ``init`` when given (warm start), otherwise from a
    uniformly random configuration of the allowed sector.  After
    ``burn_in_sweeps`` sweeps each chain emits one sample every
    ``sweeps_per_sample`` sweeps; a sweep is ``n_sites`` proposals.

    Every sampling interval ends with one lazy move, attempted with
    probability 1/2.  Without it a chain whose moves are always accepted
    (e.g. a uniform target) is periodic: an even number of single flips per
    interval conserves the parity of the magnetization.  The lazy move
    keeps ``|ψ|²`` stationary and makes the emitted sequence aperiodic.
    Acceptance rates count attempted moves after burn-in.
    """
    cfg.check_sites(n_sites)
    if n_samples % cfg.n_chains:
        raise ValueError(f"n_samples={n_samples} is not divisible by n_chains={cfg.n_chains}")
    per_chain = n_samples // cfg.n_chains
    if seeds is None:
        seeds = cfg.seed
    children = list(seeds) if isinstance(seeds, (list, tuple)) else chain_seeds(seeds, cfg.n_chains)
    if len(children) != cfg.n_chains:
        raise ValueError("one seed per chain is required")
    rngs = [np.random.Generator(np.random.PCG64(s)) for s in children]

    burn = cfg.burn_in_sweeps * n_sites
    stride = cfg.sweeps_per_sample * n_sites + 1
    total = burn + per_chain * stride
    if init is None:
        x = np.array([_random_start(r, n_sites, cfg.constraint) for r in rngs], dtype=np.uint64)
    else:
        x = np.array(init, dtype=np.uint64).reshape(cfg.n_chains)
    one = np.uint64(1)
    if cfg.move == SINGLE_FLIP:
        flips = np.stack([one << r.integers(n_sites, size=total).astype(np.uint64) for r in rngs])
    else:
        masks = []
        for r in rngs:
            i, j = _pair(r, n_sites, total)
            masks.append((one << i.astype(np.uint64)) | (one << j.astype(np.uint64)))
        pair_masks = np.stack(masks)
    log_u = np.log(np.stack([r.random(total) for r in rngs]))
    lazy_skip = np.stack([r.random(per_chain) < 0.5 for r in rngs])

    lp = np.asarray(logpsi(x), dtype=np.float64)
    _check_finite(lp, x)
    out = np.empty((cfg.n_chains, per_chain), dtype=np.uint64)
    accepted = np.zeros(cfg.n_chains)
    attempted = np.zeros(cfg.n_chains)
    k = 0
    for t in range(total):
        emit = t >= burn and (t - burn + 1) % stride == 0
        if cfg.move == SINGLE_FLIP:
            xp = x ^ flips[:, t]
        else:
            m = pair_masks[:, t]
            differ = popcount_u64(x & m) == 1
            xp = np.where(differ, x ^ m, x)
        lpp = np.asarray(logpsi(xp), dtype=np.float64)
        _check_finite(lpp, xp)
        acc = log_u[:, t] < 2.0 * (lpp - lp)
        tried = ~lazy_skip[:, k] if emit else np.ones(cfg.n_chains, dtype=bool)
        acc &= tried
        x = np.where(acc, xp, x)
        lp = np.where(acc, lpp, lp)
        if t >= burn:
            accepted += acc
            attempted += tried
        if emit:
            out[:, k] = x
            k += 1
    with np.errstate(invalid="ignore"):
        acceptance = accepted / attempted
    return SampleBatch(out, acceptance, x.copy())


def popcount_u64(xs: np.ndarray) -> np.ndarray:
    return np.bitwise_count(xs)
