import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernelpm.basis import full_basis
from kernelpm.errors import ConfigLengthError, SignViolationError
from kernelpm.exact import ground_state
from kernelpm.evaluator import dense_evaluator
from kernelpm.hamiltonian import (
    HamiltonianSpec,
    ShiftedOperator,
    apply_shifted_log,
    check_shift,
    connected_elements,
    local_energy,
    local_energy_batch,
    shifted_log_batch,
)
from kernelpm.lattice import SpinConfig, apply_perm, build_lattice, orbit_keys, translation_group

from oracles import afh_matrix, tfi_matrix


def uniform(xs):
    return np.zeros(np.asarray(xs).shape)


def _spec(model, dims, **kw):
    return HamiltonianSpec(model, build_lattice(dims), **kw)


def assembled_matrix(spec):
    n = spec.n_sites
    mat = np.zeros((2**n, 2**n))
    for b in range(2**n):
        row = connected_elements(spec, SpinConfig(b, n))
        mat[b, b] = row.diag
        for y, amp in row.offdiag:
            mat[b, y.bits] += amp
    return mat


class TestConnectedElements:
    def test_tfi_all_up(self):
        row = connected_elements(_spec("TFI", [3], h=1.0), SpinConfig.from_spins([1, 1, 1]))
        assert row.diag == 3.0
        assert sorted(y.bits for y, _ in row.offdiag) == [3, 5, 6]
        assert all(a == -1.0 for _, a in row.offdiag)

    def test_afh_neel(self):
        row = connected_elements(_spec("AFH", [4]), SpinConfig.from_spins([1, -1, 1, -1]))
        assert row.diag == -4.0
        assert len(row.offdiag) == 4
        assert all(a == 2.0 for _, a in row.offdiag)

    def test_afh_marshall_neel(self):
        row = connected_elements(_spec("AFH", [4], marshall=True), SpinConfig.from_spins([1, -1, 1, -1]))
        assert row.diag == -4.0
        assert all(a == -2.0 for _, a in row.offdiag)

    def test_length_mismatch(self):
        with pytest.raises(ConfigLengthError):
            connected_elements(_spec("TFI", [3], h=1.0), SpinConfig(0, 4))

    @pytest.mark.parametrize("model, dims, kw", [
        ("TFI", (6,), {"h": 0.7}),
        ("TFI", (2, 3), {"h": 2.0}),
        ("AFH", (6,), {}),
        ("AFH", (2, 4), {}),
        ("AFH", (2, 4), {"marshall": True}),
    ])
    def test_matches_pauli_oracle(self, model, dims, kw):
        spec = _spec(model, dims, **kw)
        oracle = tfi_matrix(dims, kw["h"]) if model == "TFI" else afh_matrix(dims, kw.get("marshall", False))
        np.testing.assert_allclose(assembled_matrix(spec), oracle, atol=1e-12)

    @pytest.mark.parametrize("model, dims, kw", [
        ("TFI", (12,), {"h": 1.3}),
        ("TFI", (3, 4), {"h": 0.5}),
        ("AFH", (12,), {}),
        ("AFH", (2, 6), {"marshall": True}),
    ])
    def test_hermitian(self, model, dims, kw):
        mat = assembled_matrix(_spec(model, dims, **kw))
        np.testing.assert_array_equal(mat, mat.T)


class TestMarshall:
    @pytest.mark.parametrize("dims", [(4,), (8,), (12,), (2, 4), (4, 2)])
    def test_spectrum_invariant(self, dims):
        plain = np.linalg.eigvalsh(assembled_matrix(_spec("AFH", dims))) if np.prod(dims) <= 8 else None
        if plain is None:
            from kernelpm.exact import spectrum
            a = spectrum(_spec("AFH", dims), "zero_magnetization")
            b = spectrum(_spec("AFH", dims, marshall=True), "zero_magnetization")
            np.testing.assert_allclose([a.E0, a.E1, a.Emax], [b.E0, b.E1, b.Emax], atol=1e-10)
            return
        rotated = np.linalg.eigvalsh(assembled_matrix(_spec("AFH", dims, marshall=True)))
        np.testing.assert_allclose(plain, rotated, atol=1e-10)

    def test_rotated_offdiagonal_is_nonpositive(self):
        mat = assembled_matrix(_spec("AFH", (6,), marshall=True))
        off = mat - np.diag(np.diag(mat))
        assert off.max() <= 0.0

    def test_requires_bipartite(self):
        with pytest.raises(ValueError):
            _spec("AFH", (5,), marshall=True)

    def test_only_for_heisenberg(self):
        with pytest.raises(ValueError):
            _spec("TFI", (4,), h=1.0, marshall=True)


class TestShiftedLog:
    def test_uniform_all_up_is_zero(self):
        op = ShiftedOperator(_spec("TFI", [3], h=1.0), 1.0)
        assert apply_shifted_log(op, SpinConfig.from_spins([1, 1, 1]), uniform) == pytest.approx(0.0, abs=1e-14)

    def test_uniform_one_domain_wall_pair(self):
        op = ShiftedOperator(_spec("TFI", [3], h=1.0), 1.0)
        val = apply_shifted_log(op, SpinConfig.from_spins([1, 1, -1]), uniform)
        assert val == pytest.approx(np.log(5.0), abs=1e-14)

    def test_uniform_afh_marshall_neel(self):
        op = ShiftedOperator(_spec("AFH", [4], marshall=True), 0.0)
        val = apply_shifted_log(op, SpinConfig.from_spins([1, -1, 1, -1]), uniform)
        assert val == pytest.approx(np.log(12.0), abs=1e-14)

    def test_matches_dense_product(self):
        spec = _spec("TFI", (8,), h=1.5)
        rng = np.random.default_rng(3)
        logv = rng.normal(size=256)
        lp = dense_evaluator(np.exp(logv), full_basis(8))
        labels, log_x = shifted_log_batch(ShiftedOperator(spec, 9.0), np.arange(256, dtype=np.uint64), lp)
        w = (9.0 * np.eye(256) - tfi_matrix((8,), 1.5)) @ np.exp(logv)
        np.testing.assert_allclose(labels, np.log(w), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(log_x, logv)

    def test_stable_for_large_log_amplitudes(self):
        op = ShiftedOperator(_spec("TFI", [3], h=1.0), 1.0)
        val = apply_shifted_log(op, SpinConfig.from_spins([1, 1, 1]), lambda xs: np.full(np.shape(xs), 800.0))
        assert val == pytest.approx(800.0, abs=1e-12)

    def test_sign_violation_names_config(self):
        # Λ below the diagonal makes the total negative for a uniform state
        op = ShiftedOperator(_spec("AFH", [4]), 0.0)
        x = SpinConfig.from_spins([1, -1, 1, -1])
        with pytest.raises(SignViolationError) as err:
            apply_shifted_log(op, x, uniform)
        assert err.value.config == x

    def test_sign_policy_abs(self):
        op = ShiftedOperator(_spec("AFH", [4]), 0.0)
        x = np.array([SpinConfig.from_spins([1, -1, 1, -1]).bits], dtype=np.uint64)
        labels, _ = shifted_log_batch(op, x, uniform, sign_policy="abs")
        assert labels[0] == pytest.approx(np.log(4.0))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**8 - 1), st.integers(0, 7))
    def test_translation_covariant(self, bits, shift):
        spec = _spec("TFI", (8,), h=0.9)
        g = translation_group(spec.lattice)
        # a translation-invariant log-amplitude: function of the orbit key
        def logpsi(xs):
            return np.log1p(orbit_keys(np.asarray(xs, np.uint64), g).astype(float))
        # Λ above the largest diagonal element keeps every label positive for any ψ
        op = ShiftedOperator(spec, 9.0)
        x = SpinConfig(bits, 8)
        y = apply_perm(g.perms[shift], x)
        assert apply_shifted_log(op, x, logpsi) == pytest.approx(apply_shifted_log(op, y, logpsi), abs=1e-12)


class TestLocalEnergy:
    def test_uniform_tfi(self):
        assert local_energy(_spec("TFI", [3], h=1.0), SpinConfig.from_spins([1, 1, 1]), uniform) == pytest.approx(0.0)

    def test_uniform_afh(self):
        assert local_energy(_spec("AFH", [4]), SpinConfig.from_spins([1, -1, 1, -1]), uniform) == pytest.approx(4.0)

    @pytest.mark.parametrize("model, dims, kw, sector", [
        ("TFI", (10,), {"h": 1.0}, "full"),
        ("TFI", (3, 4), {"h": 3.0}, "full"),
        ("AFH", (12,), {"marshall": True}, "zero_magnetization"),
    ])
    def test_constant_on_ground_state(self, model, dims, kw, sector):
        spec = _spec(model, dims, **kw)
        e0, g = ground_state(spec, sector)
        lp = dense_evaluator(g.amplitudes, g.basis)
        e_loc = local_energy_batch(spec, g.basis.configs, lp)
        np.testing.assert_allclose(e_loc, e0, atol=1e-8)
        assert np.var(e_loc) < 1e-12


class TestCheckShift:
    def test_categories(self):
        assert check_shift(3.0, -5.0, -4.0, 5.0) == "gap"
        assert check_shift(0.2, -5.0, -4.0, 5.0) == "edge"
        with pytest.warns(RuntimeWarning):
            assert check_shift(-1.0, -5.0, -4.0, 5.0) == "not-dominant"

    def test_silent_when_asked(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert check_shift(-1.0, -5.0, -4.0, 5.0, warn=False) == "not-dominant"

    def test_invalid_spec(self):
        with pytest.raises(ValueError):
            _spec("XXZ", [4])
        with pytest.raises(ValueError):
            _spec("TFI", [4], h=-1.0)
