"""Transverse-field Ising and Heisenberg Hamiltonians as sparse row generators.

Both models use Pauli matrices and sum over the bonds of a :class:`Lattice`:

* ``TFI``: ``H = Σ_<ij> σᶻᵢσᶻⱼ − h Σᵢ σˣᵢ``
* ``AFH``: ``H = Σ_<ij> (σˣᵢσˣⱼ + σʸᵢσʸⱼ + σᶻᵢσᶻⱼ)``

With ``marshall=True`` the Heisenberg exchange amplitude changes sign, which
is the sublattice rotation that makes the ground state positive on bipartite
lattices.

Log-amplitude evaluators are callables mapping a ``uint64`` array of packed
configurations to a float array of ``log ψ`` values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import AmplitudeOverflowError, ConfigLengthError, SignViolationError
from .lattice import Lattice, SpinConfig

LogPsi = Callable[[np.ndarray], np.ndarray]

# exp(700) is close to the float64 limit
MAX_LOG_RATIO = 700.0

DEFAULT_SHIFT = {"TFI": 1.0, "AFH": 0.0}


@dataclass(frozen=True)
class HamiltonianSpec:
    model: str
    lattice: Lattice
    h: float = 0.0
    marshall: bool = False

    def __post_init__(self):
        if self.model not in ("TFI", "AFH"):
            raise ValueError(f"model must be 'TFI' or 'AFH', got {self.model!r}")
        if self.model == "TFI" and self.h < 0:
            raise ValueError("the transverse field must be non-negative")
        if self.marshall and self.model != "AFH":
            raise ValueError("the Marshall rotation only applies to the Heisenberg model")
        if self.marshall and not self.lattice.is_bipartite():
            raise ValueError(f"Marshall rotation needs a bipartite lattice, dims={self.lattice.dims}")

    @property
    def n_sites(self) -> int:
        return self.lattice.n_sites

    @property
    def exchange_amplitude(self) -> float:
        return -2.0 if self.marshall else 2.0


@dataclass(frozen=True)
class ConnectedRow:
    diag: float
    offdiag: tuple[tuple[SpinConfig, float], ...]


@dataclass(frozen=True)
class ShiftedOperator:
    """``Λ − H``."""

    spec: HamiltonianSpec
    shift: float


def _check_length(spec, n):
    if n != spec.n_sites:
        raise ConfigLengthError(f"configuration has {n} sites, lattice has {spec.n_sites}")


def diagonal(spec: HamiltonianSpec, xs) -> np.ndarray:
    """``Σ_<ij> sᵢsⱼ`` for a batch of packed configurations."""
    xs = np.asarray(xs, dtype=np.uint64)
    bonds = spec.lattice.bond_array.astype(np.uint64)
    one = np.uint64(1)
    out = np.zeros(xs.shape, dtype=np.float64)
    for i, j in bonds:
        out += 1.0 - 2.0 * (((xs >> i) ^ (xs >> j)) & one)
    return out


def connected_batch(spec: HamiltonianSpec, xs):
    """Diagonal plus padded off-diagonal entries for a batch.

    Returns ``diag (B,)``, ``conn (B, K)`` and ``amps (B, K)`` where
    ``amps[b, k] = <x_b|H|conn[b, k]>``.  Padding entries carry amplitude 0.
    Duplicate neighbours (extent-2 lattices) appear once per bond and sum
    to the merged amplitude.
    """
    xs = np.asarray(xs, dtype=np.uint64).reshape(-1)
    diag = diagonal(spec, xs)
    n = spec.n_sites
    one = np.uint64(1)
    if spec.model == "TFI":
        flips = np.left_shift(one, np.arange(n, dtype=np.uint64))
        conn = xs[:, None] ^ flips[None, :]
        amps = np.full(conn.shape, -spec.h, dtype=np.float64)
        if spec.h == 0.0:
            amps[:] = 0.0
    else:
        bonds = spec.lattice.bond_array.astype(np.uint64)
        bi, bj = bonds[:, 0], bonds[:, 1]
        differ = ((xs[:, None] >> bi[None, :]) ^ (xs[:, None] >> bj[None, :])) & one
        masks = (one << bi) | (one << bj)
        conn = np.where(differ.astype(bool), xs[:, None] ^ masks[None, :], xs[:, None])
        amps = differ.astype(np.float64) * spec.exchange_amplitude
    return diag, conn, amps


def connected_elements(spec: HamiltonianSpec, x: SpinConfig) -> ConnectedRow:
    _check_length(spec, x.n_sites)
    diag, conn, amps = connected_batch(spec, np.array([x.bits], dtype=np.uint64))
    merged: dict[int, float] = {}
    for c, a in zip(conn[0], amps[0]):
        if a != 0.0 and int(c) != x.bits:
            merged[int(c)] = merged.get(int(c), 0.0) + float(a)
    row = tuple((SpinConfig(c, x.n_sites), a) for c, a in merged.items() if a != 0.0)
    return ConnectedRow(float(diag[0]), row)


def shifted_log_batch(op: ShiftedOperator, xs, logpsi: LogPsi, sign_policy: str = "error"):
    """``log <x|Λ−H|ψ>`` for a batch, evaluated with a signed log-sum-exp.

    Returns the labels and ``log ψ(x)`` for the same configurations.  With
    ``sign_policy="abs"`` non-positive totals are replaced by the log of
    their magnitude instead of raising, and exact zeros take the smallest
    label of the batch.
    """
    xs = np.asarray(xs, dtype=np.uint64).reshape(-1)
    diag, conn, amps = connected_batch(op.spec, xs)
    b, k = conn.shape
    logs = np.asarray(logpsi(np.concatenate([xs, conn.reshape(-1)])), dtype=np.float64)
    log_x, log_conn = logs[:b], logs[b:].reshape(b, k)
    coeff = np.concatenate([(op.shift - diag)[:, None], -amps], axis=1)
    terms = np.concatenate([log_x[:, None], log_conn], axis=1)
    invalid = np.isnan(terms) | (terms == np.inf)
    if np.any(invalid):
        bad = int(np.nonzero(invalid.any(axis=1))[0][0])
        raise SignViolationError(
            f"invalid log-amplitude next to config {xs[bad]:#x}", config=int(xs[bad]))
    active = np.where(coeff != 0.0, terms, -np.inf)
    m = active.max(axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(invalid="ignore"):
        scaled = np.where(np.isfinite(terms), np.exp(terms - m[:, None]), 0.0)
    total = (coeff * scaled).sum(axis=1)
    bad = total <= 0.0
    if np.any(bad):
        if sign_policy == "error":
            i = int(np.nonzero(bad)[0][0])
            cfg = SpinConfig(int(xs[i]), op.spec.n_sites)
            raise SignViolationError(
                f"<x|Λ-H|ψ> = {total[i] * np.exp(m[i]):.6g} is not positive at {cfg}; "
                f"the Hamiltonian is not stoquastic in this basis or Λ={op.shift} is too small",
                config=cfg, value=float(total[i]))
        if sign_policy != "abs":
            raise ValueError(f"unknown sign policy {sign_policy!r}")
        total = np.abs(total)
        zero = total == 0.0
        if np.any(zero):
            # an exact cancellation has no logarithm; clip it to the smallest label in the batch
            total[zero] = np.exp(np.min(np.log(total[~zero]) + m[~zero]) - m[zero]) if np.any(~zero) else 1.0
    return m + np.log(total), log_x


def apply_shifted_log(op: ShiftedOperator, x: SpinConfig, logpsi: LogPsi) -> float:
    _check_length(op.spec, x.n_sites)
    y, _ = shifted_log_batch(op, np.array([x.bits], dtype=np.uint64), logpsi)
    return float(y[0])


def local_energy_batch(spec: HamiltonianSpec, xs, logpsi: LogPsi) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.uint64).reshape(-1)
    diag, conn, amps = connected_batch(spec, xs)
    b, k = conn.shape
    logs = np.asarray(logpsi(np.concatenate([xs, conn.reshape(-1)])), dtype=np.float64)
    log_x, log_conn = logs[:b], logs[b:].reshape(b, k)
    if not np.all(np.isfinite(log_x)):
        raise AmplitudeOverflowError("log ψ(x) must be finite for the local energy")
    ratio = np.where(amps != 0.0, log_conn - log_x[:, None], -np.inf)
    if np.any(ratio > MAX_LOG_RATIO):
        i = int(np.nonzero(np.any(ratio > MAX_LOG_RATIO, axis=1))[0][0])
        raise AmplitudeOverflowError(
            f"amplitude ratio exp({ratio[i].max():.1f}) at config {xs[i]:#x} exceeds exp({MAX_LOG_RATIO})")
    return diag + np.where(amps != 0.0, amps * np.exp(ratio), 0.0).sum(axis=1)


def local_energy(spec: HamiltonianSpec, x: SpinConfig, logpsi: LogPsi) -> float:
    _check_length(spec, x.n_sites)
    return float(local_energy_batch(spec, np.array([x.bits], dtype=np.uint64), logpsi)[0])


def check_shift(shift: float, e0: float, e1: float, emax: float, warn: bool = True) -> str:
    """Classify ``Λ`` against the spectrum; warn when the ground state is not dominant.

    Returns ``"gap"`` if ``Λ ≥ (E1+Emax)/2`` (convergence rate set by the gap),
    ``"edge"`` if only ``Λ > (E0+Emax)/2`` holds, else ``"not-dominant"``.
    """
    if shift >= 0.5 * (e1 + emax):
        return "gap"
    if shift > 0.5 * (e0 + emax):
        return "edge"
    if warn:
        warnings.warn(
            f"Λ={shift} ≤ (E0+Emax)/2={0.5 * (e0 + emax):.6g}: the ground state is not dominant",
            RuntimeWarning, stacklevel=2)
    return "not-dominant"
