"""Power iteration with synthetic noise, checked against its convergence theorem.

Each noisy step is ``Ψ⁽ⁿ⁺¹⁾ = γ⁽ⁿ⁾ [(Λ − H) Ψ⁽ⁿ⁾ + Δ⁽ⁿ⁾]`` with ``Δ⁽ⁿ⁾``
orthogonal to the propagated state.  The theorem asks for

* ``|<Υ0|Δ>| / ‖Ψ⁽ⁿ⁾‖ ≤ (δ/5) · cos θ(Ψ⁽⁰⁾, Υ0)``  (parallel budget)
* ``‖Δ‖ / ‖Ψ⁽ⁿ⁾‖ ≤ (δ/5) · ε``  with ``ε < 1/2``  (total budget)

and then guarantees ``tan θ⁽ⁿ⁺¹⁾ ≤ max(ε, ω tan θ⁽ⁿ⁾)`` with
``ω = max(((Λ−E1)/(Λ−E0))^¼, ε)``, a step count to reach ``tan θ ≤ ε``
logarithmic in the initial overlap, and a final infidelity at most ``ε²``.

Noise is built inside the orthogonal complement of the propagated state
from two unit directions: the part of ``Υ0`` orthogonal to it, which
carries the whole ground-state component, and a Gaussian direction
orthogonal to both.  Their weights put the noise on the budget boundary.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import SingularNoiseError
from .exact import DenseState, SpectrumInfo, _vec, ground_state, infidelity, operator_for, spectrum, tan_angle
from .hamiltonian import HamiltonianSpec

# relative slack when comparing inequalities that hold with equality at the boundary
CHECK_RTOL = 1e-9


@dataclass(frozen=True)
class NoiseSpec:
    """Noise budgets relative to the theorem's assumptions.

    ``eps_scale`` multiplies the total budget ``(δ/5)·ε`` and
    ``parallel_fraction`` the parallel budget; values above 1 break the
    assumptions on purpose.  With ``at_boundary=False`` each step's total
    norm is drawn uniformly below the budget.
    """

    epsilon: float
    eps_scale: float = 1.0
    parallel_fraction: float = 1.0
    seed: int = 0
    at_boundary: bool = True

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.eps_scale < 0 or self.parallel_fraction < 0:
            raise ValueError("noise budgets must be non-negative")

    @property
    def compliant(self) -> bool:
        return self.epsilon < 0.5 and self.eps_scale <= 1.0 and self.parallel_fraction <= 1.0


@dataclass
class TheoremCheckReport:
    tan_theta: list[float]
    contraction_ok: list[bool]
    noise_bound_ok: list[bool]
    step_infid: list[float]
    noise_norm: list[float]
    parallel_norm: list[float]
    omega: float
    epsilon: float
    eps_star: float
    ratio: float
    M_bound: float
    M_observed: int | None
    final_infid: float
    assumptions_held: bool
    degenerate: bool = False
    notes: list[str] = field(default_factory=list)

    @property
    def all_contractions_hold(self) -> bool:
        return all(self.contraction_ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["all_contractions_hold"] = self.all_contractions_hold
        return d


def orthogonalize_noise(delta, propagated) -> np.ndarray:
    """Replace ``Δ`` by ``Δ⊥ ⟂ Ψ̃`` with ``Ψ̃ + Δ⊥ ∝ Ψ̃ + Δ``.

    ``Δ⊥ = (<Ψ̃|Ψ̃> Δ − <Ψ̃|Δ> Ψ̃) / (<Ψ̃|Ψ̃> + <Ψ̃|Δ>)``.
    """
    d, p = _vec(delta), _vec(propagated)
    pp = float(p @ p)
    if pp == 0.0:
        raise ValueError("the propagated state must be nonzero")
    pd = float(p @ d)
    denom = pp + pd
    if abs(denom) <= 1e-14 * pp:
        raise SingularNoiseError("the noise cancels the propagated state's own direction")
    return (pp * d - pd * p) / denom


def stepcount_bound(f0: float, eps: float, ratio: float) -> float:
    """``4/(1 − ratio) · log(ε⁻¹ · sqrt((1 − F0)/F0))``, clipped at 0."""
    if ratio >= 1.0:
        return np.inf
    if f0 <= 0.0:
        return np.inf
    return max(0.0, 4.0 / (1.0 - ratio) * np.log(np.sqrt((1.0 - f0) / f0) / eps))


def epsilon_star(step_infids, ratio: float) -> float:
    """Smallest ε the measured step infidelities guarantee."""
    i = np.asarray(step_infids, dtype=np.float64)
    return float(5.0 / (1.0 - ratio) * np.max(np.sqrt(i / (1.0 - i)))) if i.size else 0.0


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v * 0.0


def build_noise(propagated: np.ndarray, ground: np.ndarray, total: float, parallel: float,
                rng: np.random.Generator) -> np.ndarray:
    """Noise ``⟂ propagated`` with norm ``total`` and ``|<Υ0|Δ>| ≤ parallel``.

    The ground-state component is pushed to ``min(parallel, total·sin θ)``,
    which is the largest value reachable orthogonally to ``propagated``.
    """
    p = _unit(propagated)
    q = ground - (p @ ground) * p
    sin_t = np.linalg.norm(q)
    q = _unit(q)
    r = rng.standard_normal(p.shape)
    r -= (p @ r) * p
    r -= (q @ r) * q
    r = _unit(r)
    a = min(total, parallel / sin_t) if sin_t > 0 else 0.0
    a *= rng.choice((-1.0, 1.0))
    b = np.sqrt(max(total**2 - a**2, 0.0))
    return a * q + b * r


def noisy_pm_run(spec: HamiltonianSpec, shift: float, psi0, noise: NoiseSpec, steps: int,
                 info: SpectrumInfo | None = None, sector: str | None = None) -> TheoremCheckReport:
    """Run ``steps`` noisy power-method steps and check every theorem inequality."""
    op = operator_for(spec, sector if sector is not None else (psi0.basis.sector if isinstance(psi0, DenseState) else None))
    sector = op.basis.sector
    info = info or spectrum(spec, sector)
    if shift < 0.5 * (info.E1 + info.Emax) - CHECK_RTOL * max(1.0, abs(shift)):
        raise ValueError(f"Λ={shift} is below (E1+Emax)/2={0.5 * (info.E1 + info.Emax):.8g}; outside the theorem regime")
    _, ground = ground_state(spec, sector)
    g = ground.amplitudes
    psi = _vec(psi0, op.basis.dim).astype(np.float64)
    psi = psi / np.linalg.norm(psi)
    rng = np.random.default_rng(noise.seed)
    ratio = info.ratio(shift) if not info.degenerate else 1.0
    eps = noise.epsilon
    omega = float(max(ratio**0.25, eps))
    delta_gap = info.gap
    cos0 = abs(g @ psi)
    f0 = cos0**2
    notes = []
    if not noise.compliant:
        notes.append("noise budgets or ε outside the theorem premise")
    if info.degenerate:
        notes.append("degenerate ground state: gap is zero and the step-count bound is infinite")

    tans = [tan_angle(g, psi)]
    contraction, noise_ok, step_i, norms, pars = [], [], [], [], []
    held = noise.compliant and not info.degenerate
    for _ in range(steps):
        prop = op.apply(psi, shift)
        norm_psi = np.linalg.norm(psi)
        total = noise.eps_scale * delta_gap / 5.0 * eps * norm_psi
        if not noise.at_boundary:
            total *= rng.random()
        parallel = noise.parallel_fraction * delta_gap / 5.0 * cos0 * norm_psi
        d = build_noise(prop, g, total, parallel, rng) if total > 0 else np.zeros_like(psi)
        nd, pd = float(np.linalg.norm(d)), float(abs(g @ d))
        norms.append(nd / norm_psi)
        pars.append(pd / norm_psi)
        budget_ok = (nd / norm_psi <= delta_gap / 5.0 * eps * (1 + CHECK_RTOL)
                     and pd / norm_psi <= delta_gap / 5.0 * cos0 * (1 + CHECK_RTOL) + 1e-15)
        held = held and bool(budget_ok)
        nxt = prop + d
        i_step = infidelity(nxt, prop)
        step_i.append(i_step)
        bound = (shift - info.E0) * np.sqrt(i_step / (1.0 - i_step))
        noise_ok.append(bool(nd / norm_psi <= bound * (1 + CHECK_RTOL) + 1e-14))
        psi = nxt / np.linalg.norm(nxt)
        t_new = tan_angle(g, psi)
        contraction.append(bool(t_new <= max(eps, omega * tans[-1]) * (1 + CHECK_RTOL) + 1e-14))
        tans.append(t_new)

    reached = [n for n, t in enumerate(tans) if t <= eps * (1 + CHECK_RTOL)]
    return TheoremCheckReport(
        tan_theta=tans, contraction_ok=contraction, noise_bound_ok=noise_ok, step_infid=step_i,
        noise_norm=norms, parallel_norm=pars, omega=omega, epsilon=eps,
        eps_star=epsilon_star(step_i, ratio) if ratio < 1 else np.inf, ratio=ratio,
        M_bound=float(stepcount_bound(f0, eps, ratio)), M_observed=reached[0] if reached else None,
        final_infid=infidelity(g, psi), assumptions_held=bool(held), degenerate=bool(info.degenerate), notes=notes)


def verify_stepcount_bound(report: TheoremCheckReport, f0: float, eps: float, info: SpectrumInfo,
                           shift: float) -> bool:
    """Whether the observed step count respects the theorem's bound.

    A degenerate spectrum makes the bound infinite, so the check passes
    vacuously; ``report.degenerate`` records that case.
    """
    if info.degenerate:
        return True
    if report.M_observed is None:
        return False
    return report.M_observed <= stepcount_bound(f0, eps, info.ratio(shift))
