"""Kernel ridge regression of log-amplitudes.

A fitted model represents ``log ψ(x) = Σ_i w_i k(x, x_i) + log_shift``.  The
weights solve ``(K + R) w = y`` with ``R = λ·I`` or, when repeated samples
are merged and their counts kept, ``R = λ·diag(1/c_i)``.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import ConfigLengthError, FactorizationError, InconsistentDatasetError
from .kernel import KernelParams, gram_matrix, weighted_sum
from .lattice import SpinConfig, SymmetryGroup, orbit_images, orbit_keys

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-8
LABEL_TOL = 1e-8
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    counts: np.ndarray
    n_sites: int

    def __post_init__(self):
        if not (len(self.samples) == len(self.labels) == len(self.counts)):
            raise ValueError("samples, labels and counts must have equal length")
        if np.any(self.counts < 1):
            raise ValueError("counts must be positive")

    def __len__(self):
        return len(self.samples)

    def configs(self) -> list[SpinConfig]:
        return [SpinConfig(int(b), self.n_sites) for b in self.samples]


def _as_packed(samples) -> np.ndarray:
    if len(samples) and isinstance(samples[0], SpinConfig):
        return np.array([s.bits for s in samples], dtype=np.uint64)
    return np.asarray(samples, dtype=np.uint64).reshape(-1)


def group_orbits(samples, group: SymmetryGroup):
    """Group samples by orbit, keeping first occurrences in input order.

    Returns ``(first, inverse, counts)``: indices of the first member of each
    orbit, the orbit slot of every input sample and the orbit sizes.
    """
    keys = orbit_keys(_as_packed(samples), group)
    _, first, inverse, counts = np.unique(keys, return_index=True, return_inverse=True, return_counts=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return first[order], rank[inverse], counts[order]


def dedup(raw_samples, raw_labels, group: SymmetryGroup, tol: float = LABEL_TOL) -> Dataset:
    samples = _as_packed(raw_samples)
    labels = np.asarray(raw_labels, dtype=np.float64).reshape(-1)
    if samples.shape != labels.shape:
        raise ValueError("samples and labels must have equal length")
    first, inverse, counts = group_orbits(samples, group)
    kept = labels[first]
    spread = np.abs(labels - kept[inverse])
    if spread.size and spread.max() > tol:
        i = int(np.argmax(spread))
        raise InconsistentDatasetError(
            f"sample {samples[i]:#x} has label {labels[i]!r} but its orbit was labelled {kept[inverse[i]]!r}")
    return Dataset(samples[first], kept, counts.astype(np.int64), group.n_sites)


def normalize_labels(ds: Dataset) -> tuple[Dataset, float]:
    if len(ds) == 0:
        raise ValueError("cannot normalize an empty dataset")
    shift = float(ds.labels.max())
    return replace(ds, labels=ds.labels - shift), shift


@dataclass(frozen=True, eq=False)
class KrrModel:
    support: np.ndarray
    weights: np.ndarray
    lam: float
    kernel: KernelParams
    log_shift: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.support.shape != self.weights.shape:
            raise ValueError("support and weights must have equal length")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("model weights must be finite")

    @property
    def n_sites(self) -> int:
        return self.kernel.n_sites

    @cached_property
    def _images(self) -> np.ndarray:
        return orbit_images(self.support, self.kernel.group)

    @cached_property
    def _table(self) -> np.ndarray:
        return self.kernel.table()

    def log_psi(self, xs) -> np.ndarray:
        """Batch ``log ψ`` on packed configurations."""
        xs = np.ascontiguousarray(xs, dtype=np.uint64).reshape(-1)
        if len(self.support) == 0:
            return np.full(xs.shape, self.log_shift)
        return weighted_sum(xs, self._images, self.weights, self._table) + self.log_shift

    __call__ = log_psi


def empty_model(kernel: KernelParams, lam: float = DEFAULT_LAMBDA) -> KrrModel:
    return KrrModel(np.zeros(0, np.uint64), np.zeros(0), lam, kernel, 0.0)


def _solve(k, reg, y):
    a = k + np.diag(reg)
    c, low = scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    w = scipy.linalg.cho_solve((c, low), y, check_finite=False)
    if not np.all(np.isfinite(w)):
        raise np.linalg.LinAlgError("non-finite weights")
    resid = np.max(np.abs(a @ w - y)) if y.size else 0.0
    if resid > 1e-6 * (1.0 + np.max(np.abs(y))):
        raise np.linalg.LinAlgError(f"residual {resid:.3g} above tolerance")
    return w


def fit(ds: Dataset, p: KernelParams, lam: float = DEFAULT_LAMBDA, count_reg: bool = False,
        log_shift: float = 0.0, gram: np.ndarray | None = None) -> KrrModel:
    """Solve the ridge system by Cholesky factorization.

    On failure the solve is retried once with ``10·λ``.
    """
    if lam <= 0:
        raise ValueError("the ridge parameter must be positive")
    if len(ds) == 0:
        raise ValueError("cannot fit an empty dataset")
    if ds.n_sites != p.n_sites:
        raise ConfigLengthError("dataset and kernel disagree on the number of sites")
    k = gram if gram is not None else gram_matrix(ds.samples, p).entries
    y = ds.labels.astype(np.float64)
    scale = 1.0 / ds.counts if count_reg else np.ones(len(ds))
    tried = []
    for attempt in (lam, 10.0 * lam):
        tried.append(attempt)
        try:
            w = _solve(k, attempt * scale, y)
        except (np.linalg.LinAlgError, ValueError) as exc:
            log.warning("ridge solve failed at lambda=%g: %s", attempt, exc)
            continue
        return KrrModel(ds.samples.copy(), w, attempt, p, log_shift)
    raise FactorizationError(f"Cholesky solve failed for lambda in {tried}", lambdas=tried)


def predict_log(m: KrrModel, x: SpinConfig) -> float:
    if x.n_sites != m.n_sites:
        raise ConfigLengthError(f"configuration has {x.n_sites} sites, model expects {m.n_sites}")
    return float(m.log_psi(np.array([x.bits], dtype=np.uint64))[0])


def save_model(m: KrrModel, path) -> None:
    """Write a model as ``.npz``; every array round-trips bit-exactly."""
    np.savez(
        path,
        version=np.int64(MODEL_FORMAT_VERSION),
        support=m.support,
        weights=m.weights,
        lam=np.float64(m.lam),
        log_shift=np.float64(m.log_shift),
        gamma=np.float64(m.kernel.gamma),
        z2_even=np.bool_(m.kernel.z2_even),
        perms=m.kernel.group.array,
        group_z2=np.bool_(m.kernel.group.z2_even),
    )


def load_model(path) -> KrrModel:
    with np.load(path) as f:
        version = int(f["version"])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        perms = tuple(tuple(int(v) for v in row) for row in f["perms"])
        group = SymmetryGroup(perms, bool(f["group_z2"]))
        kernel = KernelParams(group, float(f["gamma"]), bool(f["z2_even"]))
        return KrrModel(f["support"].astype(np.uint64), f["weights"].astype(np.float64),
                        float(f["lam"]), kernel, float(f["log_shift"]))


def model_bytes(m: KrrModel) -> bytes:
    buf = io.BytesIO()
    save_model(m, buf)
    return buf.getvalue()
