import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernelpm.errors import SingularNoiseError
from kernelpm.exact import ground_state, infidelity, operator_for, spectrum
from kernelpm.hamiltonian import HamiltonianSpec
from kernelpm.kernel import KernelParams
from kernelpm.lattice import build_lattice, translation_group
from kernelpm.noisy_pm import (
    NoiseSpec,
    build_noise,
    epsilon_star,
    noisy_pm_run,
    orthogonalize_noise,
    stepcount_bound,
    verify_stepcount_bound,
)
from kernelpm.slpm import SlpmConfig, run


def _tfi(n, h):
    return HamiltonianSpec("TFI", build_lattice([n]), h=h)


def _start_with_fidelity(ground, f0, seed=0):
    g = ground.amplitudes
    q = np.random.default_rng(seed).normal(size=g.size)
    q -= (g @ q) * g
    q /= np.linalg.norm(q)
    return np.sqrt(f0) * g + np.sqrt(1.0 - f0) * q


class TestOrthogonalize:
    def test_already_orthogonal(self):
        p = np.array([1.0, 0.0, 0.0])
        d = np.array([0.0, 0.3, -0.2])
        np.testing.assert_allclose(orthogonalize_noise(d, p), d, atol=1e-12)

    def test_parallel_noise_is_absorbed(self):
        p = np.array([1.0, 2.0, -1.0])
        np.testing.assert_allclose(orthogonalize_noise(0.37 * p, p), 0.0, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 40), st.integers(0, 2**32 - 1))
    def test_random_noise(self, dim, seed):
        rng = np.random.default_rng(seed)
        p = rng.normal(size=dim)
        d = 0.3 * rng.normal(size=dim)
        if abs(p @ p + p @ d) < 1e-3 * (p @ p):
            return
        dp = orthogonalize_noise(d, p)
        assert abs(dp @ p) <= 1e-10 * np.linalg.norm(p) * (1 + np.linalg.norm(dp))
        a, b = p + dp, p + d
        cos = (a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))
        assert abs(abs(cos) - 1.0) <= 1e-10

    def test_total_cancellation(self):
        p = np.array([1.0, 1.0])
        with pytest.raises(SingularNoiseError):
            orthogonalize_noise(-p, p)


class TestBuildNoise:
    def test_budgets_met_exactly(self):
        rng = np.random.default_rng(0)
        prop = rng.normal(size=64)
        g = rng.normal(size=64)
        g /= np.linalg.norm(g)
        d = build_noise(prop, g, total=0.2, parallel=0.01, rng=rng)
        assert abs(d @ prop) <= 1e-12 * np.linalg.norm(prop)
        assert np.linalg.norm(d) == pytest.approx(0.2, rel=1e-12)
        assert abs(g @ d) == pytest.approx(0.01, rel=1e-10)

    def test_parallel_budget_above_reach(self):
        rng = np.random.default_rng(1)
        prop = rng.normal(size=16)
        g = rng.normal(size=16)
        g /= np.linalg.norm(g)
        d = build_noise(prop, g, total=0.1, parallel=10.0, rng=rng)
        assert np.linalg.norm(d) == pytest.approx(0.1, rel=1e-12)
        assert abs(g @ d) <= 0.1 + 1e-12


class TestBounds:
    def test_stepcount_formula(self):
        assert stepcount_bound(0.5, 0.1, 0.9) == pytest.approx(40.0 * np.log(10.0))
        assert stepcount_bound(0.999, 0.5, 0.5) == 0.0
        assert stepcount_bound(0.5, 0.1, 1.0) == np.inf
        assert stepcount_bound(0.0, 0.1, 0.5) == np.inf

    def test_epsilon_star(self):
        assert epsilon_star([1e-4, 4e-4], 0.5) == pytest.approx(10.0 * np.sqrt(4e-4 / (1 - 4e-4)))
        assert epsilon_star([], 0.5) == 0.0

    def test_noise_spec_validation(self):
        with pytest.raises(ValueError):
            NoiseSpec(0.0)
        with pytest.raises(ValueError):
            NoiseSpec(0.1, eps_scale=-1.0)
        assert not NoiseSpec(0.6).compliant
        assert not NoiseSpec(0.2, parallel_fraction=1.5).compliant
        assert NoiseSpec(0.2).compliant


class TestNoisyRun:
    def test_zero_noise_is_exact_power_method(self):
        spec = _tfi(8, 2.0)
        info = spectrum(spec, "full")
        shift = 0.5 * (info.E1 + info.Emax)
        _, g = ground_state(spec, "full")
        psi0 = _start_with_fidelity(g, 0.5)
        rep = noisy_pm_run(spec, shift, psi0, NoiseSpec(0.1, eps_scale=0.0, parallel_fraction=0.0), 80)
        rate = info.ratio(shift)
        t = np.array(rep.tan_theta)
        assert np.all(t[1:] <= rate * t[:-1] * (1 + 1e-9) + 1e-14)
        assert rep.all_contractions_hold
        assert max(rep.noise_norm) == 0.0
        assert rep.M_observed is not None
        assert verify_stepcount_bound(rep, 0.5, 0.1, info, shift)
        assert rep.M_observed <= stepcount_bound(0.5, 0.1, rate)

    @pytest.mark.parametrize("seed", range(10))
    def test_full_budget_contraction(self, seed):
        spec = _tfi(10, 2.0)
        info = spectrum(spec, "full")
        shift = 0.5 * (info.E1 + info.Emax)
        psi0 = np.abs(np.random.default_rng(seed).normal(size=1024))
        eps = 0.3
        _, g = ground_state(spec, "full")
        f0 = float((g.amplitudes @ psi0) ** 2 / (psi0 @ psi0))
        steps = int(np.ceil(stepcount_bound(f0, eps, info.ratio(shift)))) + 20
        rep = noisy_pm_run(spec, shift, psi0, NoiseSpec(eps, seed=seed), steps)
        assert rep.assumptions_held
        assert rep.all_contractions_hold
        assert all(rep.noise_bound_ok)
        assert rep.tan_theta[-1] <= eps * (1 + 1e-9)
        assert verify_stepcount_bound(rep, f0, eps, info, shift)
        assert rep.final_infid <= eps**2
        # the envelope max(ε, tan θ) never grows
        env = np.maximum(eps, rep.tan_theta)
        assert np.all(np.diff(env) <= 1e-9 * env[:-1])
        # the noise sits on the budget boundary
        np.testing.assert_allclose(rep.noise_norm, info.gap / 5 * eps, rtol=1e-9)

    def test_near_orthogonal_start(self):
        spec = _tfi(8, 2.0)
        info = spectrum(spec, "full")
        shift = 0.5 * (info.E1 + info.Emax)
        _, g = ground_state(spec, "full")
        psi0 = _start_with_fidelity(g, 1e-4, seed=3)
        eps = 0.49
        bound = stepcount_bound(1e-4, eps, info.ratio(shift))
        rep = noisy_pm_run(spec, shift, psi0, NoiseSpec(eps, seed=3), int(np.ceil(bound)) + 5)
        assert rep.assumptions_held
        assert verify_stepcount_bound(rep, 1e-4, eps, info, shift)
        assert rep.all_contractions_hold

    def test_degenerate_instance(self):
        spec = _tfi(6, 0.0)
        info = spectrum(spec, "full")
        assert info.degenerate
        psi0 = np.ones(64)
        rep = noisy_pm_run(spec, 0.5 * (info.E1 + info.Emax), psi0, NoiseSpec(0.2), 5, info=info)
        assert rep.degenerate
        assert not rep.assumptions_held
        assert rep.M_bound == np.inf or rep.ratio == 1.0
        assert verify_stepcount_bound(rep, 0.5, 0.2, info, 0.0)
        assert any("degenerate" in n for n in rep.notes)

    def test_noncompliant_noise_is_flagged(self):
        spec = _tfi(8, 2.0)
        info = spectrum(spec, "full")
        shift = 0.5 * (info.E1 + info.Emax)
        rep = noisy_pm_run(spec, shift, np.ones(256), NoiseSpec(0.3, eps_scale=20.0), 30)
        assert not rep.assumptions_held
        assert rep.notes
        assert len(rep.contraction_ok) == 30

    def test_shift_below_theorem_regime(self):
        spec = _tfi(6, 1.0)
        with pytest.raises(ValueError):
            noisy_pm_run(spec, -5.0, np.ones(64), NoiseSpec(0.1), 3)

    def test_report_serializable(self):
        import json
        spec = _tfi(6, 2.0)
        info = spectrum(spec, "full")
        rep = noisy_pm_run(spec, 0.5 * (info.E1 + info.Emax), np.ones(64), NoiseSpec(0.2), 4)
        d = rep.to_dict()
        assert d["all_contractions_hold"] == rep.all_contractions_hold
        json.dumps(d)


class TestNoiseNormBound:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 8), st.floats(0.0, 3.0), st.floats(0.0, 2.0), st.integers(0, 2**32 - 1),
           st.floats(1e-6, 1.0))
    def test_bound_on_random_pairs(self, n, h, extra, seed, scale):
        spec = _tfi(n, h)
        op = operator_for(spec, "full")
        mat_e = np.linalg.eigvalsh(_dense_matrix(op))
        e0, emax = mat_e[0], mat_e[-1]
        shift = 0.5 * (e0 + emax) + extra
        rng = np.random.default_rng(seed)
        psi = rng.normal(size=op.basis.dim)
        prop = op.apply(psi, shift)
        if np.linalg.norm(prop) < 1e-12:
            return
        d = orthogonalize_noise(scale * rng.normal(size=psi.size) * np.linalg.norm(psi), prop)
        i_step = infidelity(prop + d, prop)
        lhs = np.linalg.norm(d) / np.linalg.norm(psi)
        rhs = (shift - e0) * np.sqrt(i_step / (1.0 - i_step)) if i_step < 1 else np.inf
        assert lhs <= rhs * (1 + 1e-10) + 1e-10


def _dense_matrix(op):
    eye = np.eye(op.basis.dim)
    return -np.stack([op.apply(eye[:, k], 0.0) for k in range(op.basis.dim)], axis=1)


class TestMeasuredStepInfidelity:
    def test_final_infidelity_bounded_by_measured_epsilon(self):
        spec = _tfi(10, 2.0)
        cfg = SlpmConfig(spec, KernelParams(translation_group(spec.lattice)), shift=1.0, n_iters=100,
                         n_samples=2048, track_exact=True, seed=3)
        res = run(cfg)
        info = spectrum(spec, "full")
        ratio = info.ratio(1.0)
        eps = epsilon_star([r.step_infid for r in res.records], ratio)
        assert eps < 0.5
        assert res.records[-1].infid <= eps**2
