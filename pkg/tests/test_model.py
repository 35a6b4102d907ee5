import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from crosspnp.model import (
    EntropyPoint,
    InfeasibleStateError,
    PhysicalParams,
    ReferenceState,
    SimplexPoint,
    SpeciesSpec,
    degenerate_identity_sides,
    entropy_variables,
    free_energy,
    gajewski_semimetric,
    invert_entropy_variables,
    mixing_energy,
    solvent_fraction,
)

RNG = np.random.default_rng(101)


def species_of(valences, diffusivities=None):
    diffusivities = diffusivities or [1.0] * len(valences)
    return tuple(
        SpeciesSpec(f"s{i}", d, z) for i, (d, z) in enumerate(zip(diffusivities, valences))
    )


def random_interior(rng, n, immobile=0.0):
    raw = rng.uniform(0.05, 1.0, n + 1)
    u = raw[:n] / raw.sum() * (1.0 - immobile) * rng.uniform(0.2, 0.98)
    return SimplexPoint(u, immobile)


class TestSimplexPoint:
    def test_solvent_subtraction(self):
        assert solvent_fraction(SimplexPoint([0.2, 0.3, 0.1])) == pytest.approx(0.4)

    def test_solvent_with_immobile_hits_zero(self):
        p = SimplexPoint([0.05, 0.05, 0.01], immobile_fraction=0.89)
        assert solvent_fraction(p) == pytest.approx(0.0, abs=1e-15)

    def test_sum_above_one_rejected(self):
        with pytest.raises(InfeasibleStateError):
            SimplexPoint([0.6, 0.6])

    def test_negative_rejected(self):
        with pytest.raises(InfeasibleStateError):
            SimplexPoint([-0.1, 0.3])

    def test_supplied_solvent_must_agree(self):
        with pytest.raises(InfeasibleStateError):
            SimplexPoint([0.25], solvent=0.5)


class TestEntropyVariables:
    def test_symmetric_point_is_zero(self):
        p = SimplexPoint([0.5])
        w = entropy_variables(p, 0.0, PhysicalParams(1.0, 1.0, 1), species_of([1.0]))
        assert w.w[0] == pytest.approx(0.0, abs=1e-15)

    def test_two_species_values(self):
        p = SimplexPoint([0.2, 0.3])
        w = entropy_variables(p, 0.0, PhysicalParams(1.0, 1.0, 2), species_of([1.0, -1.0]))
        assert w.w == pytest.approx([np.log(0.2 / 0.5), np.log(0.3 / 0.5)], rel=1e-14)

    def test_drift_term(self):
        p = SimplexPoint([0.5])
        w = entropy_variables(p, 1.0, PhysicalParams(1.0, 1.0, 1), species_of([2.0]))
        assert w.w[0] == pytest.approx(2.0, rel=1e-14)

    def test_boundary_state_rejected(self):
        with pytest.raises(ValueError):
            entropy_variables(
                SimplexPoint([0.0, 0.3]), 0.0, PhysicalParams(1.0, 1.0, 2),
                species_of([1.0, 1.0]),
            )


class TestInversion:
    params1 = PhysicalParams(1.0, 1.0, 1)

    def test_zero_maps_to_half(self):
        u = invert_entropy_variables(EntropyPoint([0.0]), 0.0, self.params1, species_of([0.0]))
        assert u.concentrations[0] == pytest.approx(0.5, rel=1e-15)

    def test_symmetry_two_species(self):
        u = invert_entropy_variables(
            EntropyPoint([0.0, 0.0]), 0.0, PhysicalParams(1.0, 1.0, 2), species_of([0.0, 0.0])
        )
        assert u.concentrations == pytest.approx([1 / 3, 1 / 3], rel=1e-15)

    def test_log_three_maps_to_three_quarters(self):
        u = invert_entropy_variables(
            EntropyPoint([np.log(3.0)]), 0.0, self.params1, species_of([0.0])
        )
        assert u.concentrations[0] == pytest.approx(0.75, rel=1e-15)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_roundtrip_u_w_u(self, n):
        params = PhysicalParams(1.4, 1.0, n)
        species = species_of(range(1, n + 1))
        for _ in range(200):
            p = random_interior(RNG, n)
            phi = float(RNG.normal(0, 2))
            w = entropy_variables(p, phi, params, species)
            back = invert_entropy_variables(w, phi, params, species)
            np.testing.assert_allclose(back.concentrations, p.concentrations, rtol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_roundtrip_w_u_w_extreme(self, n):
        params = PhysicalParams(1.0, 1.0, n)
        species = species_of([0.0] * n)
        for _ in range(200):
            sign = 1.0 if RNG.random() < 0.5 else -1.0
            w = EntropyPoint(sign * RNG.uniform(0.0, 700.0, n))
            u = invert_entropy_variables(w, 0.0, params, species)
            assert np.all(u.concentrations > 0.0)
            assert np.all(u.concentrations < 1.0)
            assert u.solvent > 0.0
            back = entropy_variables(u, 0.0, params, species)
            np.testing.assert_allclose(back.w, w.w, rtol=1e-12, atol=1e-12)

    def test_overflow_scale_input_stays_interior(self):
        u = invert_entropy_variables(
            EntropyPoint([700.0, -700.0]), 0.0, PhysicalParams(1.0, 1.0, 2),
            species_of([0.0, 0.0]),
        )
        assert np.all(u.concentrations > 0.0)
        assert np.all(u.concentrations < 1.0)
        assert float(u.concentrations.sum()) < 1.0

    @given(
        st.lists(st.floats(-30, 30), min_size=1, max_size=4),
        st.floats(-3, 3),
    )
    @settings(max_examples=200, deadline=None)
    def test_roundtrip_property(self, w_values, phi):
        n = len(w_values)
        params = PhysicalParams(1.0, 1.0, n)
        species = species_of([(-1.0) ** i for i in range(n)])
        w = EntropyPoint(np.array(w_values))
        u = invert_entropy_variables(w, phi, params, species)
        assert float(u.concentrations.sum()) < 1.0
        back = entropy_variables(u, phi, params, species)
        np.testing.assert_allclose(back.w, w.w, rtol=1e-12, atol=1e-10)


class TestDegenerateIdentity:
    def test_zero_gradient(self):
        lhs, rhs = degenerate_identity_sides(SimplexPoint([0.2, 0.3]), [0.0, 0.0])
        assert lhs == 0.0 and rhs == 0.0

    def test_hand_computed_single_species(self):
        # u=1/4, u0=3/4, du=1: lhs = (3/16)(4 + 4/3)^2, rhs = 3 + 1 + 4/3.
        lhs, rhs = degenerate_identity_sides(SimplexPoint([0.25]), [1.0])
        assert lhs == pytest.approx(16.0 / 3.0, rel=1e-13)
        assert rhs == pytest.approx(16.0 / 3.0, rel=1e-13)

    def test_random_sweep(self):
        for _ in range(1000):
            n = int(RNG.integers(1, 4))
            p = random_interior(RNG, n)
            grad = RNG.normal(0, 3, n)
            lhs, rhs = degenerate_identity_sides(p, grad)
            assert abs(lhs - rhs) <= 1e-12 * (1.0 + abs(lhs))

    def test_immobile_rejected(self):
        with pytest.raises(ValueError):
            degenerate_identity_sides(SimplexPoint([0.1], immobile_fraction=0.5), [1.0])


def _quad_mixing(u, c):
    value, _ = quad(lambda s: np.log(s / c), c, u)
    return value


class TestFreeEnergy:
    def make_ref(self, u, phi):
        return ReferenceState(np.atleast_2d(u), np.atleast_1d(phi))

    def test_zero_at_reference(self):
        u = np.array([[0.2, 0.1], [0.3, 0.2]])
        phi = np.array([0.4, -0.1])
        ref = self.make_ref(u, phi)
        value = free_energy(
            u, phi, ref, [0.5, 0.5], PhysicalParams(1.0, 1.0, 2), species_of([1.0, -1.0]),
            edge_coeffs=[1.0, 1.0, 1.0],
        )
        assert value == pytest.approx(0.0, abs=1e-15)

    def test_single_cell_against_quadrature(self):
        # One cell of measure 1, matching potentials: mixing terms only.
        expected = _quad_mixing(0.5, 0.25) + _quad_mixing(0.5, 0.75)
        value = free_energy(
            [[0.5]], None, self.make_ref([[0.25]], [0.0]), [1.0],
            PhysicalParams(1.0, 1.0, 1), species_of([1.0]),
        )
        assert value == pytest.approx(expected, rel=1e-10)
        assert value == pytest.approx(0.14384103622589042, rel=1e-12)

    def test_nonnegative_with_matching_potential(self):
        params = PhysicalParams(1.0, 1.0, 2)
        species = species_of([1.0, -1.0])
        for _ in range(200):
            m = int(RNG.integers(1, 5))
            u = np.column_stack([RNG.uniform(0.01, 0.4, m), RNG.uniform(0.01, 0.4, m)])
            ref_u = np.column_stack([RNG.uniform(0.01, 0.4, m), RNG.uniform(0.01, 0.4, m)])
            phi = RNG.normal(0, 1, m)
            value = free_energy(
                u, phi, self.make_ref(ref_u, phi), RNG.uniform(0.1, 1.0, m),
                params, species, edge_coeffs=np.zeros(m + 1),
            )
            assert value >= -1e-14

    def test_boundary_state_allowed(self):
        value = free_energy(
            [[0.0]], None, self.make_ref([[0.25]], [0.0]), [1.0],
            PhysicalParams(1.0, 1.0, 1), species_of([1.0]),
        )
        assert value == pytest.approx(_quad_mixing(1e-300, 0.25) + _quad_mixing(0.75, 0.75), rel=1e-6)

    def test_zero_reference_rejected(self):
        with pytest.raises(ValueError):
            free_energy(
                [[0.2]], None, self.make_ref([[0.0]], [0.0]), [1.0],
                PhysicalParams(1.0, 1.0, 1), species_of([1.0]),
            )

    def test_mixing_convexity_minimum(self):
        for _ in range(300):
            c = RNG.uniform(0.01, 0.9)
            u = RNG.uniform(0.0, 0.95)
            value = mixing_energy(u, c)
            assert value >= -1e-15
            if abs(u - c) > 1e-3:
                assert value > 0.0
        assert mixing_energy(0.37, 0.37) == pytest.approx(0.0, abs=1e-15)


class TestSemimetric:
    def test_identical_states(self):
        u = RNG.uniform(0, 0.5, (4, 2))
        assert gajewski_semimetric(u, u, 0.0, np.ones(4)) == 0.0

    def test_single_cell_value(self):
        # h(s) = s(log s - 1) + 1 evaluated at 0.8, 0.2, and their mean.
        def h(s):
            return s * (np.log(s) - 1.0) + 1.0

        expected = h(0.8) + h(0.2) - 2 * h(0.5)
        value = gajewski_semimetric([[0.8]], [[0.2]], 0.0, [1.0])
        assert value == pytest.approx(expected, rel=1e-13)
        assert value == pytest.approx(0.19274475702175753, rel=1e-12)

    def test_quadratic_lower_bound_example(self):
        value = gajewski_semimetric([[0.8]], [[0.2]], 0.0, [1.0])
        assert value >= 0.125 * 0.6**2

    def test_properties_random_sweep(self):
        for _ in range(1000):
            m, n = int(RNG.integers(1, 6)), int(RNG.integers(1, 4))
            u = RNG.uniform(0, 0.6, (m, n))
            v = RNG.uniform(0, 0.6, (m, n))
            w = RNG.uniform(0.05, 2.0, m)
            eps = float(RNG.choice([0.0, 1e-6, 1e-2]))
            d = gajewski_semimetric(u, v, eps, w)
            assert d >= -1e-15
            assert d == pytest.approx(gajewski_semimetric(v, u, eps, w), rel=1e-12, abs=1e-15)
            lower = 0.125 * float((w[:, None] * (u - v) ** 2).sum())
            assert d >= lower - 1e-12 * (1 + lower)

    def test_identity_of_indiscernibles(self):
        u = RNG.uniform(0.01, 0.5, (3, 2))
        v = u + 1e-4
        assert gajewski_semimetric(u, v, 0.0, np.ones(3)) > 0.0

    def test_grid_mismatch(self):
        with pytest.raises(ValueError):
            gajewski_semimetric(np.zeros((2, 1)), np.zeros((3, 1)), 0.0, np.ones(2))

    def test_negative_entries_need_eps(self):
        with pytest.raises(ValueError):
            gajewski_semimetric([[-0.1]], [[0.2]], 0.0, [1.0])

    @given(st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.floats(0.0, 0.5))
    @settings(max_examples=300, deadline=None)
    def test_lower_bound_property(self, a, b, eps):
        d = gajewski_semimetric([[a]], [[b]], eps, [1.0])
        assert d >= 0.125 * (a - b) ** 2 - 1e-12
