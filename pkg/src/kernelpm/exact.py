"""Dense-vector ground truth: matrix-free ``Λ − H``, power iterations and overlaps.

Vectors live on a :class:`~kernelpm.basis.Basis`; for the full Hilbert space
entry ``i`` is the amplitude of packed configuration ``i``.  Heisenberg
problems may use the zero-magnetization sector, which the Hamiltonian
conserves.

The binary dump format is a little-endian ``uint64`` length followed by that
many little-endian ``float64`` amplitudes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numba as nb
import numpy as np

from .basis import Basis, basis_for, full_basis, orbit_index
from .errors import ConfigLengthError, ConvergenceError
from .hamiltonian import HamiltonianSpec, LogPsi, diagonal
from .lattice import popcount64

log = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-10
SMALL_DENSE_DIM = 64
DEFAULT_DENSE_CAP = 20


@dataclass(frozen=True, eq=False)
class DenseState:
    amplitudes: np.ndarray
    basis: Basis

    def __post_init__(self):
        a = self.amplitudes
        if a.ndim != 1 or a.shape[0] != self.basis.dim:
            raise ConfigLengthError(f"vector of length {a.shape} does not match basis dimension {self.basis.dim}")
        if not np.all(np.isfinite(a)):
            raise ValueError("dense state has non-finite entries")

    @property
    def n_sites(self) -> int:
        return self.basis.n_sites

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "DenseState":
        n = self.norm
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return DenseState(self.amplitudes / n, self.basis)

    def __add__(self, other: "DenseState") -> "DenseState":
        return DenseState(self.amplitudes + _vec(other, self.basis.dim), self.basis)

    def __sub__(self, other: "DenseState") -> "DenseState":
        return DenseState(self.amplitudes - _vec(other, self.basis.dim), self.basis)

    def __mul__(self, c: float) -> "DenseState":
        return DenseState(self.amplitudes * c, self.basis)

    __rmul__ = __mul__


@dataclass(frozen=True)
class SpectrumInfo:
    E0: float
    E1: float
    Emax: float
    degenerate: bool = False

    @property
    def gap(self) -> float:
        return 0.0 if self.degenerate else self.E1 - self.E0

    def ratio(self, shift: float) -> float:
        """Power-method contraction ``(Λ − E1)/(Λ − E0)``."""
        return (shift - self.E1) / (shift - self.E0)


def default_basis(spec: HamiltonianSpec) -> Basis:
    if spec.model == "AFH" and spec.n_sites % 2 == 0:
        return basis_for(spec.n_sites, "zero_magnetization")
    return full_basis(spec.n_sites)


class DenseOperator:
    """Row generator for ``Λ − H`` on a basis; no matrix is stored."""

    def __init__(self, spec: HamiltonianSpec, basis: Basis | None = None):
        if basis is None:
            basis = default_basis(spec)
        if basis.n_sites != spec.n_sites:
            raise ConfigLengthError("basis and Hamiltonian disagree on the number of sites")
        if spec.model == "TFI" and basis.sector != "full" and spec.h != 0.0:
            raise ValueError("the transverse field does not conserve magnetization; use the full basis")
        self.spec = spec
        self.basis = basis
        one = np.uint64(1)
        if spec.model == "TFI":
            self.masks = np.left_shift(one, np.arange(spec.n_sites, dtype=np.uint64))
            self.amp = -float(spec.h)
            self.conditional = False
        else:
            b = spec.lattice.bond_array.astype(np.uint64)
            self.masks = (one << b[:, 0]) | (one << b[:, 1])
            self.amp = spec.exchange_amplitude
            self.conditional = True

    @cached_property
    def diag(self) -> np.ndarray:
        return diagonal(self.spec, self.basis.configs)

    @cached_property
    def gershgorin(self) -> tuple[float, float]:
        """Bounds ``(lo, hi)`` enclosing the whole spectrum of ``H``."""
        if self.conditional:
            offsum = np.zeros(self.basis.dim)
            for m in self.masks:
                offsum += (np.bitwise_count(self.basis.configs & m) == 1) * abs(self.amp)
        else:
            offsum = np.full(self.basis.dim, abs(self.amp) * len(self.masks))
        return float(np.min(self.diag - offsum)), float(np.max(self.diag + offsum))

    def apply(self, v: np.ndarray, shift: float) -> np.ndarray:
        """``(Λ − H) v`` on raw amplitude arrays."""
        v = np.ascontiguousarray(v, dtype=np.float64)
        if v.shape != (self.basis.dim,):
            raise ConfigLengthError(f"vector of length {v.shape} does not match basis dimension {self.basis.dim}")
        return _apply(v, self.basis.configs, self.basis.index_map, self.diag, float(shift),
                      self.masks, self.amp, self.conditional)


@lru_cache(maxsize=16)
def operator_for(spec: HamiltonianSpec, sector: str | None = None) -> DenseOperator:
    basis = default_basis(spec) if sector is None else basis_for(spec.n_sites, None if sector == "full" else sector)
    return DenseOperator(spec, basis)


@nb.njit(cache=True, nogil=True)
def _apply(v, configs, index_map, diag, shift, masks, amp, conditional):
    out = np.empty_like(v)
    for a in range(configs.shape[0]):
        x = configs[a]
        s = (shift - diag[a]) * v[a]
        for m in masks:
            if conditional and popcount64(x & m) != 1:
                continue
            s -= amp * v[index_map[x ^ m]]
        out[a] = s
    return out


def _vec(v, dim=None) -> np.ndarray:
    a = v.amplitudes if isinstance(v, DenseState) else np.asarray(v, dtype=np.float64)
    if dim is not None and a.shape != (dim,):
        raise ConfigLengthError(f"vector of length {a.shape} does not match dimension {dim}")
    return a


def dense_apply(spec: HamiltonianSpec, shift: float, v: DenseState) -> DenseState:
    op = operator_for(spec, v.basis.sector)
    return DenseState(op.apply(v.amplitudes, shift), v.basis)


def _power(step, v0, tol, max_iters, project=None):
    """Dominant eigenpair of a symmetric linear map by max-norm power iteration.

    Stops when the relative residual ``‖A v − μ v‖ / (|μ| ‖v‖)`` drops below
    ``tol``.  Unlike a test on the change of ``μ``, this bounds the error of
    the vector as well and does not stall when the ratio is close to one.
    """
    v = v0 / np.max(np.abs(v0))
    res = np.inf
    for it in range(1, max_iters + 1):
        if project is not None:
            v = project(v)
        w = step(v)
        vv = float(v @ v)
        mu = float(v @ w) / vv
        nrm = np.max(np.abs(w))
        if nrm == 0.0:
            raise ConvergenceError("power iteration collapsed onto the zero vector")
        r = w - mu * v
        res = np.sqrt(float(r @ r) / vv) / max(abs(mu), 1e-300)
        v = w / nrm
        if res < tol:
            if project is not None:
                v = project(v)
            return mu, v / np.linalg.norm(v), it
    raise ConvergenceError(f"power iteration did not converge in {max_iters} steps (relative residual {res:.3g})")


def _start_vector(spec: HamiltonianSpec, basis: Basis, seed: int = 0) -> np.ndarray:
    # the stoquastic cases have a positive ground state, so the uniform vector overlaps it
    if spec.model == "TFI" or spec.marshall:
        return np.ones(basis.dim)
    return np.random.default_rng(seed).standard_normal(basis.dim)


def dense_power_method(spec: HamiltonianSpec, shift: float, tol: float = 1e-11, max_iters: int = 200_000,
                       basis: Basis | None = None, v0=None) -> tuple[float, DenseState]:
    """Iterate ``Λ − H`` to its dominant eigenvector.

    Returns ``E = Λ − μ`` with ``μ`` the dominant eigenvalue, and the
    normalized vector.  ``E`` is the ground energy when the ground state
    dominates, i.e. for ``Λ > (E0 + Emax)/2``.
    """
    op = operator_for(spec, None if basis is None else basis.sector)
    start = _start_vector(spec, op.basis) if v0 is None else _vec(v0, op.basis.dim).copy()
    mu, v, it = _power(lambda u: op.apply(u, shift), start, tol, max_iters)
    log.debug("power method converged in %d steps", it)
    return shift - mu, DenseState(v, op.basis)


def safe_shift(spec: HamiltonianSpec, basis: Basis | None = None) -> float:
    """The Gershgorin upper bound, which always makes the ground state dominant."""
    op = operator_for(spec, None if basis is None else basis.sector)
    return op.gershgorin[1]


@lru_cache(maxsize=16)
def ground_state(spec: HamiltonianSpec, sector: str | None = None, tol: float = 1e-11) -> tuple[float, DenseState]:
    """Cached ground energy and normalized ground vector.

    ``sector`` selects the basis (``"full"`` or ``"zero_magnetization"``);
    the default is the smallest basis holding the ground state.
    """
    basis = operator_for(spec, sector).basis
    e0, v = dense_power_method(spec, safe_shift(spec, basis), tol=tol, basis=basis)
    if spec.model == "TFI" or spec.marshall:
        v = DenseState(v.amplitudes * np.sign(v.amplitudes.sum()), v.basis)
    return e0, v


def extremal_eigs(spec: HamiltonianSpec, tol: float = 1e-13, method: str = "power",
                  basis: Basis | None = None, seed: int = 0) -> SpectrumInfo:
    """``E0``, ``E1`` and ``Emax`` of ``H``.

    ``method="power"`` uses shifted power iterations, with ``E1`` from the
    power iteration deflated against the ground vector.  ``method="lanczos"``
    hands the same matrix-free operator to ARPACK, which converges far
    faster near critical points.  A gap below ``1e-10`` is flagged as a
    degeneracy.
    """
    op = operator_for(spec, None if basis is None else basis.sector)
    lo, hi = op.gershgorin
    if method == "lanczos":
        e0, e1, emax = _lanczos(op, tol, seed)
    elif method == "power":
        mu, g, _ = _power(lambda u: op.apply(u, hi), _start_vector(spec, op.basis, seed), tol, 1_000_000)
        e0 = hi - mu
        rng = np.random.default_rng(seed + 1)
        mu, _, _ = _power(lambda u: -op.apply(u, lo), rng.standard_normal(op.basis.dim), tol, 1_000_000)
        emax = lo + mu

        def deflate(u):
            return u - (g @ u) * g

        mu, _, _ = _power(lambda u: op.apply(u, hi), rng.standard_normal(op.basis.dim), tol, 1_000_000, deflate)
        e1 = hi - mu
    else:
        raise ValueError(f"unknown method {method!r}")
    degenerate = e1 - e0 < DEGENERACY_TOL
    return SpectrumInfo(e0, max(e1, e0), emax, degenerate)


def _lanczos(op: DenseOperator, tol, seed):
    import scipy.sparse.linalg as sla

    dim = op.basis.dim
    if dim <= SMALL_DENSE_DIM:
        # ARPACK needs k < dim; tiny bases are diagonalized directly
        mat = np.stack([-op.apply(col, 0.0) for col in np.eye(dim)], axis=1)
        evals = np.linalg.eigvalsh(mat)
        return float(evals[0]), float(evals[min(1, dim - 1)]), float(evals[-1])
    lin = sla.LinearOperator((dim, dim), matvec=lambda u: -op.apply(np.ravel(u), 0.0), dtype=np.float64)
    v0 = np.random.default_rng(seed).standard_normal(dim)
    low = np.sort(sla.eigsh(lin, k=2, which="SA", tol=tol, v0=v0, return_eigenvectors=False))
    top = sla.eigsh(lin, k=1, which="LA", tol=tol, v0=v0, return_eigenvectors=False)
    return float(low[0]), float(low[1]), float(top[0])


@lru_cache(maxsize=16)
def spectrum(spec: HamiltonianSpec, sector: str | None = None, method: str = "lanczos") -> SpectrumInfo:
    """Cached :func:`extremal_eigs` on the basis selected by ``sector``."""
    return extremal_eigs(spec, tol=1e-10, method=method, basis=operator_for(spec, sector).basis)


def fidelity(u, v) -> float:
    a, b = _vec(u), _vec(v)
    if a.shape != b.shape:
        raise ConfigLengthError("fidelity needs vectors of equal length")
    na, nb_ = float(a @ a), float(b @ b)
    if na == 0.0 or nb_ == 0.0:
        raise ValueError("fidelity is undefined for the zero vector")
    return float(min(1.0, (a @ b) ** 2 / (na * nb_)))


def infidelity(u, v) -> float:
    """``1 − F`` computed from the orthogonal residual to keep precision near 0."""
    a, b = _vec(u), _vec(v)
    if a.shape != b.shape:
        raise ConfigLengthError("fidelity needs vectors of equal length")
    na, nb_ = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb_ == 0.0:
        raise ValueError("fidelity is undefined for the zero vector")
    a, b = a / na, b / nb_
    r = b - (a @ b) * a
    return float(min(1.0, r @ r))


def fubini_study(u, v) -> float:
    return float(np.arccos(np.sqrt(fidelity(u, v))))


def tan_angle(u, v) -> float:
    """``tan θ(u, v) = sqrt((1 − F)/F)``."""
    i = infidelity(u, v)
    return float(np.sqrt(i / (1.0 - i))) if i < 1.0 else np.inf


def materialize(logpsi: LogPsi, basis: Basis, group=None) -> DenseState:
    """Normalized dense vector ``exp(log ψ)`` over a basis.

    When ``group`` is given, ``logpsi`` must be invariant under it and is
    evaluated once per orbit.  The maximum log-amplitude is subtracted
    before exponentiating.
    """
    if group is not None:
        idx = orbit_index(group)
        values = np.asarray(logpsi(idx.reps), dtype=np.float64)[idx.orbit_of[basis.configs.astype(np.int64)]]
    else:
        values = np.asarray(logpsi(basis.configs), dtype=np.float64)
    return from_log(values, basis)


def from_log(values: np.ndarray, basis: Basis) -> DenseState:
    if not np.all(np.isfinite(values)):
        raise ValueError("non-finite log-amplitude while materializing a dense state")
    a = np.exp(values - values.max())
    return DenseState(a / np.linalg.norm(a), basis)


def materialize_model(model, basis: Basis | None = None) -> DenseState:
    """Dense vector of a :class:`~kernelpm.krr.KrrModel`, one evaluation per orbit."""
    from .evaluator import tabulate

    if basis is None:
        basis = full_basis(model.n_sites)
    if len(model.support) == 0:
        return from_log(np.zeros(basis.dim), basis)
    return from_log(tabulate(model).dense_log(basis), basis)


def step_infidelity(model_before, model_after, spec: HamiltonianSpec, shift: float,
                    basis: Basis | None = None) -> float:
    """``1 − F(Ψ⁽ⁿ⁺¹⁾, (Λ − H) Ψ⁽ⁿ⁾)`` for two fitted models."""
    if basis is None:
        basis = full_basis(spec.n_sites)
    before = materialize_model(model_before, basis)
    after = materialize_model(model_after, basis)
    return infidelity(after, dense_apply(spec, shift, before))


def rayleigh_quotient(spec: HamiltonianSpec, v: DenseState) -> float:
    """``<v|H|v>/<v|v>``."""
    a = v.amplitudes
    return float(-(a @ dense_apply(spec, 0.0, v).amplitudes) / (a @ a))


def dump_dense(state: DenseState, path) -> None:
    a = np.ascontiguousarray(state.amplitudes, dtype="<f8")
    with open(Path(path), "wb") as f:
        f.write(np.array([a.shape[0]], dtype="<u8").tobytes())
        f.write(a.tobytes())


def load_dense(path, basis: Basis) -> DenseState:
    raw = Path(path).read_bytes()
    n = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    a = np.frombuffer(raw[8:], dtype="<f8")
    if a.shape[0] != n:
        raise ValueError(f"file declares {n} amplitudes but holds {a.shape[0]}")
    return DenseState(a.astype(np.float64), basis)
