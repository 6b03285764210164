"""Fast log-amplitude evaluators for fitted models.

A fitted model is invariant under its translation group and, because σ is
even, under global spin inversion.  For systems small enough to enumerate,
the model is evaluated once on every orbit representative and served by
table lookup afterwards.  Sampling and dense diagnostics then cost O(1) per
configuration instead of O(|support|·|G|).
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np

from .basis import Basis, OrbitIndex, orbit_index
from .hamiltonian import LogPsi
from .krr import KrrModel

_TABLES: "weakref.WeakKeyDictionary[KrrModel, TabulatedLogPsi]" = weakref.WeakKeyDictionary()


@dataclass(frozen=True, eq=False)
class TabulatedLogPsi:
    values: np.ndarray
    index: OrbitIndex

    def __call__(self, xs) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.uint64)
        return self.values[self.index.orbit_of[xs.astype(np.int64)]]

    def dense_log(self, basis: Basis) -> np.ndarray:
        return self(basis.configs)


def symmetry_of(model: KrrModel):
    return model.kernel.group.with_z2(True)


def tabulate(model: KrrModel) -> TabulatedLogPsi:
    """Cached per-orbit table of ``model``; requires an enumerable system."""
    table = _TABLES.get(model)
    if table is None:
        idx = orbit_index(symmetry_of(model))
        table = TabulatedLogPsi(model.log_psi(idx.reps), idx)
        _TABLES[model] = table
    return table


def evaluator_for(model: KrrModel, dense_cap: int = 20) -> LogPsi:
    """Tabulated evaluator up to ``dense_cap`` sites, direct evaluation beyond."""
    if model.n_sites <= dense_cap and len(model.support) > 0:
        return tabulate(model)
    return model.log_psi


def dense_evaluator(values: np.ndarray, basis: Basis, floor: float = -np.inf) -> LogPsi:
    """Evaluator for ``log|v|`` of a dense vector; configurations outside the basis get ``floor``."""
    logs = np.log(np.abs(np.asarray(values, dtype=np.float64)))
    index_map = basis.index_map

    def logpsi(xs):
        idx = index_map[np.asarray(xs, dtype=np.int64)]
        return np.where(idx >= 0, logs[np.maximum(idx, 0)], floor)

    return logpsi
