import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernelpm.errors import ConfigLengthError, InvalidLatticeError
from kernelpm.lattice import (
    SpinConfig,
    SymmetryGroup,
    apply_perm,
    build_lattice,
    canonical_orbit_key,
    compose,
    orbit_keys,
    pack,
    single_site,
    translation_group,
    trivial_group,
    unpack,
)

from oracles import ring_bonds


def _config(spins):
    return SpinConfig.from_spins(spins)


class TestSpinConfig:
    def test_pack_unpack_round_trip(self):
        rng = np.random.default_rng(0)
        spins = rng.choice([-1, 1], size=(50, 13))
        np.testing.assert_array_equal(unpack(pack(spins), 13), spins)

    def test_bit_convention(self):
        x = _config([1, -1, -1])
        assert x.bits == 1
        np.testing.assert_array_equal(x.spins, [1, -1, -1])

    def test_magnetization_and_flip(self):
        x = _config([1, 1, -1, 1])
        assert x.magnetization == 2
        np.testing.assert_array_equal(x.flipped().spins, [-1, -1, 1, -1])

    def test_rejects_bad_spin_values(self):
        with pytest.raises(ValueError):
            _config([1, 0, -1])
        with pytest.raises(ValueError):
            pack([[1, 2]])

    def test_rejects_oversized_bits(self):
        with pytest.raises(ConfigLengthError):
            SpinConfig(8, 3)

    def test_pack_limit(self):
        with pytest.raises(ConfigLengthError):
            pack(np.ones((1, 65), dtype=int))


class TestBuildLattice:
    def test_chain_of_three(self):
        lat = build_lattice([3])
        assert lat.n_sites == 3
        assert set(lat.bonds) == {(0, 1), (1, 2), (2, 0)}

    def test_two_by_two_keeps_wrap_duplicates(self):
        lat = build_lattice([2, 2])
        assert lat.n_sites == 4
        assert len(lat.bonds) == 8

    def test_four_by_four(self):
        lat = build_lattice([4, 4])
        assert lat.n_sites == 16
        assert len(lat.bonds) == 32

    @pytest.mark.parametrize("dims", [(5,), (3, 4), (4, 4), (6, 2)])
    def test_bonds_match_independent_construction(self, dims):
        assert list(build_lattice(dims).bonds) == ring_bonds(dims)

    def test_row_major_coordinates(self):
        lat = build_lattice([3, 4])
        assert lat.index((1, 2)) == 6
        assert lat.coords(6) == (1, 2)

    @pytest.mark.parametrize("dims", [[1], [0], [1, 4], [2, 2, 2]])
    def test_rejects_invalid_dims(self, dims):
        with pytest.raises(InvalidLatticeError):
            build_lattice(dims)

    def test_rejects_open_boundaries(self):
        with pytest.raises(InvalidLatticeError):
            build_lattice([4], pbc=False)

    def test_single_site_has_no_bonds(self):
        lat = single_site()
        assert lat.n_sites == 1
        assert lat.bonds == ()

    def test_bipartite(self):
        assert build_lattice([4, 4]).is_bipartite()
        assert not build_lattice([3]).is_bipartite()
        np.testing.assert_array_equal(build_lattice([2, 2]).sublattice(), [0, 1, 1, 0])


class TestTranslationGroup:
    def test_chain_of_four(self):
        g = translation_group(build_lattice([4]))
        assert len(g) == 4
        assert g.perms[1] == tuple((i + 1) % 4 for i in range(4))

    def test_three_by_three(self):
        assert len(translation_group(build_lattice([3, 3]))) == 9

    def test_identity_first(self):
        g = translation_group(build_lattice([3, 2]))
        assert g.perms[0] == tuple(range(6))

    @pytest.mark.parametrize("dims", [(6,), (2, 3), (4, 4), (6, 6)])
    def test_closed_under_composition(self, dims):
        g = translation_group(build_lattice(dims))
        elements = set(g.perms)
        for a, b in itertools.product(g.perms, repeat=2):
            assert compose(a, b) in elements

    def test_rejects_non_permutation(self):
        with pytest.raises(ValueError):
            SymmetryGroup(((0, 1, 2), (0, 0, 1)))
        with pytest.raises(ValueError):
            SymmetryGroup(((1, 0),))


class TestApplyPerm:
    def test_identity(self):
        x = _config([1, -1, -1, 1])
        assert apply_perm(tuple(range(4)), x) == x

    def test_shift_by_one(self):
        g = translation_group(build_lattice([3]))
        out = apply_perm(g.perms[1], _config([1, -1, -1]))
        np.testing.assert_array_equal(out.spins, [-1, 1, -1])

    def test_four_shifts_return_original(self):
        g = translation_group(build_lattice([4]))
        x = _config([1, 1, -1, 1])
        y = x
        for _ in range(4):
            y = apply_perm(g.perms[1], y)
        assert y == x

    def test_length_mismatch(self):
        with pytest.raises(ConfigLengthError):
            apply_perm((0, 1, 2), _config([1, -1]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.sampled_from([-1, 1]), min_size=2, max_size=12), st.randoms())
    def test_preserves_spin_multiset(self, spins, rnd):
        perm = list(range(len(spins)))
        rnd.shuffle(perm)
        out = apply_perm(perm, _config(spins)).spins
        assert sorted(out) == sorted(spins)


class TestOrbitKeys:
    def test_constant_on_orbit(self):
        g = translation_group(build_lattice([5]))
        x = _config([1, -1, -1, 1, 1])
        key = canonical_orbit_key(x, g)
        assert all(canonical_orbit_key(apply_perm(p, x), g) == key for p in g.perms)

    def test_z2_identifies_inverted_configs(self):
        g = translation_group(build_lattice([4]), z2_even=True)
        x = _config([1, 1, -1, 1])
        assert canonical_orbit_key(x, g) == canonical_orbit_key(x.flipped(), g)

    def test_shift_related_ring_configs(self):
        g = translation_group(build_lattice([4]))
        assert canonical_orbit_key(_config([1, 1, -1, -1]), g) == canonical_orbit_key(_config([1, -1, -1, 1]), g)

    def test_trivial_group_is_identity(self):
        xs = np.arange(16, dtype=np.uint64)
        np.testing.assert_array_equal(orbit_keys(xs, trivial_group(4)), xs)

    @pytest.mark.parametrize("dims, z2", [((6,), False), ((8,), True), ((3, 3), False), ((12,), False), ((3, 4), True)])
    def test_keys_separate_orbits_exhaustively(self, dims, z2):
        n = int(np.prod(dims))
        g = translation_group(build_lattice(dims), z2_even=z2)
        keys = orbit_keys(np.arange(2**n, dtype=np.uint64), g)
        # brute-force orbits by flood fill over explicit ±1 permutations
        label = -np.ones(2**n, dtype=np.int64)
        weights = 1 << np.arange(n)
        perms = [np.asarray(p) for p in g.perms]
        n_orbits = 0
        for start in range(2**n):
            if label[start] >= 0:
                continue
            s = np.array([(start >> i) & 1 for i in range(n)])
            members = set()
            for p in perms:
                t = np.empty(n, dtype=np.int64)
                t[p] = s
                members.add(int(t @ weights))
                if z2:
                    members.add(int((1 - t) @ weights))
            label[list(members)] = n_orbits
            n_orbits += 1
        _, key_labels = np.unique(keys, return_inverse=True)
        # same partition: the two labelings are related by a bijection
        pairs = set(zip(label.tolist(), key_labels.tolist()))
        assert len(pairs) == n_orbits == key_labels.max() + 1
        # keys are the orbit minima
        for orbit in range(n_orbits):
            members = np.nonzero(label == orbit)[0]
            assert keys[members[0]] == members.min()
