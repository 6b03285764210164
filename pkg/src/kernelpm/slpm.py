"""The self-learning power method: propagate, sample, label, learn.

Each step draws configurations from ``|Ψ⁽ⁿ⁾|²``, labels them with
``log <x|Λ−H|Ψ⁽ⁿ⁾>``, merges symmetry-equivalent samples, and fits the
next log-amplitude by kernel ridge regression.  With ``track_exact`` the
learned states are also materialized densely and compared with the exact
power-method step and the ground state.

Random streams are derived from ``SeedSequence(seed, spawn_key=(n, phase))``
so each iteration's randomness does not depend on how many iterations run.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .basis import basis_for
from .errors import KernelPMError, StepFailedError
from .evaluator import evaluator_for, symmetry_of
from .exact import (DenseState, from_log, ground_state, infidelity, materialize_model, operator_for,
                    rayleigh_quotient, spectrum)
from .hamiltonian import DEFAULT_SHIFT, HamiltonianSpec, LogPsi, ShiftedOperator, local_energy_batch, shifted_log_batch
from .kernel import KernelParams
from .krr import DEFAULT_LAMBDA, Dataset, KrrModel, empty_model, fit, group_orbits, normalize_labels
from .sampler import SamplerConfig, mh_sample

log = logging.getLogger(__name__)

PHASE_SAMPLE = 0
PHASE_ENERGY = 1


@dataclass(frozen=True)
class SlpmConfig:
    hamiltonian: HamiltonianSpec
    kernel: KernelParams
    shift: float | None = None
    n_iters: int = 300
    n_samples: int = 4096
    lambda_ridge: float = DEFAULT_LAMBDA
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    energy_eval_samples: int = 4096
    seed: int = 0
    track_exact: bool = False
    dense_cap: int = 20
    count_reg: bool = False
    full_basis_dataset: bool = False
    sign_policy: str = "error"

    def __post_init__(self):
        if self.n_iters < 0:
            raise ValueError("n_iters must be non-negative")
        if self.n_samples < 1 or self.energy_eval_samples < 1:
            raise ValueError("sample counts must be positive")
        if self.kernel.n_sites != self.hamiltonian.n_sites:
            raise ValueError("kernel and Hamiltonian disagree on the number of sites")
        if (self.track_exact or self.full_basis_dataset) and self.hamiltonian.n_sites > self.dense_cap:
            raise ValueError(f"exact tracking needs N ≤ dense_cap={self.dense_cap}, got N={self.hamiltonian.n_sites}")
        if self.sign_policy not in ("error", "abs"):
            raise ValueError(f"unknown sign policy {self.sign_policy!r}")

    @property
    def shift_value(self) -> float:
        return DEFAULT_SHIFT[self.hamiltonian.model] if self.shift is None else float(self.shift)

    @property
    def n_sites(self) -> int:
        return self.hamiltonian.n_sites


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    energy_mean: float
    energy_stderr: float
    acceptance: float
    n_unique: int
    log_shift: float
    step_infid: float | None = None
    infid: float | None = None
    rel_err: float | None = None


@dataclass
class RunResult:
    records: list[IterationRecord]
    final_model: KrrModel
    config: SlpmConfig
    timings: dict[str, float]
    final_energy: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)


def stream(seed: int, iteration: int, phase: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=(int(iteration), int(phase)))


def init_uniform_model(cfg: SlpmConfig) -> KrrModel:
    """``log Ψ⁽⁰⁾ ≡ 0``; the sampler restricts it to the constrained sector if any."""
    return empty_model(cfg.kernel, cfg.lambda_ridge)


def chain_blocked_stats(values: np.ndarray, n_chains: int) -> tuple[float, float]:
    """Mean and standard error from the spread of per-chain means."""
    values = np.asarray(values, dtype=np.float64).reshape(n_chains, -1)
    mean = float(values.mean())
    if n_chains < 2:
        return mean, float("nan")
    return mean, float(values.mean(axis=1).std(ddof=1) / np.sqrt(n_chains))


def estimate_energy(logpsi: LogPsi | KrrModel, spec: HamiltonianSpec, sampler: SamplerConfig, n: int,
                    seeds=None, dense_cap: int = 20) -> tuple[float, float]:
    """Born-sampled mean local energy and its chain-blocked standard error."""
    if n < 1:
        raise ValueError("need at least one sample")
    if isinstance(logpsi, KrrModel):
        logpsi = evaluator_for(logpsi, dense_cap)
    batch = mh_sample(logpsi, sampler, n, spec.n_sites, seeds=seeds)
    uniq, inverse = np.unique(batch.pooled, return_inverse=True)
    e_loc = local_energy_batch(spec, uniq, logpsi)[inverse]
    return chain_blocked_stats(e_loc, sampler.n_chains)


@dataclass
class _Exact:
    """Dense references shared by every step of a tracked run."""

    basis: object
    e0: float
    ground: DenseState | None
    op: object


def _exact_context(cfg: SlpmConfig) -> _Exact:
    sector = cfg.sampler.constraint or "full"
    e0, g = ground_state(cfg.hamiltonian, sector)
    degenerate = spectrum(cfg.hamiltonian, sector).degenerate if cfg.track_exact else False
    op = operator_for(cfg.hamiltonian, sector)
    return _Exact(op.basis, e0, None if degenerate else g, op)


def _dense(model: KrrModel, evaluator, basis) -> DenseState:
    if len(model.support) == 0:
        return from_log(np.zeros(basis.dim), basis)
    return from_log(evaluator.dense_log(basis), basis) if hasattr(evaluator, "dense_log") else materialize_model(model, basis)


def full_basis_dataset(cfg: SlpmConfig) -> np.ndarray:
    """One representative per orbit of the sampled sector."""
    basis = basis_for(cfg.n_sites, cfg.sampler.constraint)
    first, _, _ = group_orbits(basis.configs, symmetry_of(empty_model(cfg.kernel)))
    return basis.configs[first]


def slpm_step(model: KrrModel, cfg: SlpmConfig, iteration: int = 0, init: np.ndarray | None = None,
              exact: _Exact | None = None, timings: dict | None = None):
    """One learned power-method step.

    Returns ``(new_model, record, last_chain_states)``.
    """
    t = timings if timings is not None else {}
    shift = cfg.shift_value
    op = ShiftedOperator(cfg.hamiltonian, shift)
    evaluator = evaluator_for(model, cfg.dense_cap)

    t0 = time.perf_counter()
    if cfg.full_basis_dataset:
        samples = full_basis_dataset(cfg)
        inverse = np.arange(samples.size)
        counts = np.ones(samples.size, dtype=np.int64)
        uniq = samples
        acceptance, last = float("nan"), None
        n_chains = 1
    else:
        batch = mh_sample(evaluator, cfg.sampler, cfg.n_samples, cfg.n_sites, init=init,
                          seeds=stream(cfg.seed, iteration, PHASE_SAMPLE))
        samples = batch.pooled
        first, inverse, counts = group_orbits(samples, symmetry_of(model))
        uniq = samples[first]
        acceptance, last = batch.acceptance_rate, batch.last
        n_chains = cfg.sampler.n_chains
    t1 = time.perf_counter()
    t["sample"] = t.get("sample", 0.0) + t1 - t0

    labels, log_x = shifted_log_batch(op, uniq, evaluator, cfg.sign_policy)
    e_loc = shift - np.exp(labels - log_x)
    if cfg.full_basis_dataset:
        energy, stderr = float("nan"), float("nan")
    else:
        energy, stderr = chain_blocked_stats(e_loc[inverse], n_chains)
    ds, top = normalize_labels(Dataset(uniq, labels, counts.astype(np.int64), cfg.n_sites))
    t2 = time.perf_counter()
    t["label"] = t.get("label", 0.0) + t2 - t1

    new = fit(ds, cfg.kernel, cfg.lambda_ridge, count_reg=cfg.count_reg, log_shift=top)
    t3 = time.perf_counter()
    t["fit"] = t.get("fit", 0.0) + t3 - t2

    record = IterationRecord(iteration, energy, stderr, acceptance, int(uniq.size), top)
    if cfg.track_exact:
        exact = exact or _exact_context(cfg)
        before = _dense(model, evaluator, exact.basis)
        after = _dense(new, evaluator_for(new, cfg.dense_cap), exact.basis)
        propagated = exact.op.apply(before.amplitudes, shift)
        e = rayleigh_quotient(cfg.hamiltonian, after)
        record = replace(record,
                         step_infid=infidelity(after, propagated),
                         infid=None if exact.ground is None else infidelity(exact.ground, after),
                         rel_err=abs(e - exact.e0) / abs(exact.e0))
        t["exact"] = t.get("exact", 0.0) + time.perf_counter() - t3
    return new, record, last


def run(cfg: SlpmConfig, on_record: Callable[[IterationRecord], None] | None = None,
        model: KrrModel | None = None) -> RunResult:
    """Run ``cfg.n_iters`` steps from the uniform state (or ``model``).

    The chains of each iteration start where the previous iteration's
    chains stopped.  The final energy is estimated from fresh samples.  A
    failing step raises :class:`StepFailedError` carrying the partial result.
    """
    timings: dict[str, float] = {}
    model = init_uniform_model(cfg) if model is None else model
    result = RunResult([], model, cfg, timings, meta={"warm_start": True, "shift": cfg.shift_value})
    exact = _exact_context(cfg) if cfg.track_exact else None
    last = None
    for n in range(cfg.n_iters):
        try:
            model, record, last = slpm_step(model, cfg, n, init=last, exact=exact, timings=timings)
        except (KernelPMError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            result.final_model = model
            raise StepFailedError(f"step {n} failed: {exc}", partial=result) from exc
        result.records.append(record)
        result.final_model = model
        if on_record is not None:
            on_record(record)
        log.debug("iter %d: E=%.8g ± %.2g, unique=%d", n, record.energy_mean, record.energy_stderr, record.n_unique)
    t0 = time.perf_counter()
    try:
        result.final_energy = estimate_energy(model, cfg.hamiltonian, cfg.sampler, cfg.energy_eval_samples,
                                              seeds=stream(cfg.seed, cfg.n_iters, PHASE_ENERGY),
                                              dense_cap=cfg.dense_cap)
    except (KernelPMError, ArithmeticError, ValueError) as exc:
        raise StepFailedError(f"final energy estimate failed: {exc}", partial=result) from exc
    timings["energy"] = time.perf_counter() - t0
    return result


def record_dict(r: IterationRecord) -> dict:
    return asdict(r)
