import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relaxed_mpc import (BarrierSpec, Polytope, RelaxingFunction, barrier_boundary_level,
                         barrier_eval, barrier_value, make_weight_vector, nonrelaxed_eval,
                         quadratic_upper_bound, relax_eval)
from relaxed_mpc.errors import DimensionMismatch, DomainViolation, Infeasible, WrongRelaxing

from conftest import U_BOX, X_BOX

RELAXINGS = [("polynomial", 2), ("polynomial", 4), ("polynomial", 6), ("exponential", 2)]


def fd_grad(f, z, h=1e-6):
    g = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (f(z + e) - f(z - e)) / (2 * h)
    return g


class TestPolytope:
    def test_box_rows(self):
        P = Polytope.box(*X_BOX)
        np.testing.assert_allclose(P.C, [[1, 0], [-1, 0], [0, 1], [0, -1]])
        np.testing.assert_allclose(P.d, [3, 2, 0.8, 0.8])

    def test_origin_must_be_interior(self):
        with pytest.raises(DomainViolation):
            Polytope([[1.0]], [0.0])

    def test_row_count_mismatch(self):
        with pytest.raises(DimensionMismatch):
            Polytope(np.eye(2), [1.0])

    def test_violation(self):
        P = Polytope.box(*U_BOX)
        np.testing.assert_allclose(P.violation([1.5]), [0.5, 0.0])
        assert P.contains([0.5]) and not P.contains([-2.1])


class TestRelaxingFunction:
    @pytest.mark.parametrize("kind,k", RELAXINGS)
    def test_matches_log_to_second_order_at_delta(self, kind, k):
        delta = 0.3
        rf = RelaxingFunction(kind, delta, k)
        v, d1, d2 = rf.penalty(delta)
        np.testing.assert_allclose([v, d1, d2], [-np.log(delta), -1 / delta, 1 / delta ** 2],
                                   rtol=1e-12)

    @pytest.mark.parametrize("kind,k", RELAXINGS)
    def test_continuous_across_delta(self, kind, k):
        rf = RelaxingFunction(kind, 0.1, k)
        lo, hi = relax_eval(rf, 0.1 - 1e-9), relax_eval(rf, 0.1 + 1e-9)
        np.testing.assert_allclose(lo, hi, rtol=1e-6)

    @pytest.mark.parametrize("kind,k", RELAXINGS)
    def test_derivatives_match_finite_differences(self, kind, k):
        rf = RelaxingFunction(kind, 0.5, k)
        for z in [-2.0, 0.1, 0.49, 0.51, 3.0]:
            v, d1, d2 = relax_eval(rf, z)
            h = 1e-6
            np.testing.assert_allclose(d1, (rf(z + h)[0] - rf(z - h)[0]) / (2 * h), rtol=1e-6)
            np.testing.assert_allclose(d2, (rf(z + h)[1] - rf(z - h)[1]) / (2 * h), rtol=1e-5)

    @pytest.mark.parametrize("kind,k", RELAXINGS)
    def test_lower_bounds_log(self, kind, k):
        rf = RelaxingFunction(kind, 0.2, k)
        z = np.linspace(1e-4, 2, 500)
        assert np.all(relax_eval(rf, z)[0] <= -np.log(z) + 1e-12)

    @pytest.mark.parametrize("kind,k", RELAXINGS)
    def test_convex_everywhere(self, kind, k):
        rf = RelaxingFunction(kind, 0.2, k)
        assert np.all(relax_eval(rf, np.linspace(-5, 5, 1001))[2] > 0)

    def test_quadratic_value(self):
        # 0.5 ((0 - 2 delta) / delta)^2 - 0.5 - ln delta at z = 0
        np.testing.assert_allclose(relax_eval(RelaxingFunction("polynomial", 0.1, 2), 0.0)[0],
                                   1.5 - np.log(0.1))

    def test_exponential_value(self):
        np.testing.assert_allclose(relax_eval(RelaxingFunction("exponential", 0.1), 0.0)[0],
                                   np.e - 1 - np.log(0.1))

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            RelaxingFunction("cubic", 0.1)
        with pytest.raises(ValueError):
            RelaxingFunction("polynomial", 0.1, 3)
        with pytest.raises(ValueError):
            RelaxingFunction("polynomial", 0.0)


class TestWeights:
    def test_state_box_weights(self):
        np.testing.assert_allclose(make_weight_vector(Polytope.box(*X_BOX)),
                                   [0.5, 0, 0, 0], atol=1e-9)

    def test_input_box_weights(self):
        np.testing.assert_allclose(make_weight_vector(Polytope.box(*U_BOX)), [0, 1], atol=1e-9)

    def test_random_polytope_recenters(self, rng):
        # the +-e_i rows make the polytope bounded, so weights exist
        C = np.vstack([rng.standard_normal((4, 3)), np.eye(3), -np.eye(3)])
        P = Polytope(C, rng.uniform(0.5, 2.0, 10))
        w = make_weight_vector(P)
        assert np.all(w >= 0)
        np.testing.assert_allclose(((1 + w) / P.d) @ P.C, 0, atol=1e-9)

    def test_unbounded_polytope_has_no_weights(self):
        with pytest.raises(Infeasible):
            make_weight_vector(Polytope([[1.0, 0.0], [0.0, 1.0]], [1.0, 1.0]))

    def test_bad_weights_rejected(self):
        with pytest.raises(ValueError):
            BarrierSpec(Polytope.box(*U_BOX), "weight", weights=[0.0, 0.0])


class TestBarrier:
    @pytest.mark.parametrize("recentering", ["weight", "gradient"])
    @pytest.mark.parametrize("kind,k", RELAXINGS)
    def test_zero_at_origin_with_zero_gradient(self, recentering, kind, k):
        spec = BarrierSpec(Polytope.box(*X_BOX), recentering, RelaxingFunction(kind, 0.1, k))
        v, g, _ = barrier_eval(spec, np.zeros(2))
        assert abs(v) < 1e-14
        np.testing.assert_allclose(g, 0, atol=1e-14)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(-4, 4), st.floats(-2, 2), st.sampled_from(["weight", "gradient"]),
           st.sampled_from(RELAXINGS))
    def test_gradient_and_hessian_match_fd(self, a, b, recentering, relaxing):
        kind, k = relaxing
        spec = BarrierSpec(Polytope.box(*X_BOX), recentering, RelaxingFunction(kind, 0.2, k))
        z = np.array([a, b])
        _, g, H = barrier_eval(spec, z)
        np.testing.assert_allclose(g, fd_grad(lambda y: barrier_eval(spec, y)[0], z),
                                   rtol=1e-5, atol=1e-5)
        H_fd = np.array([fd_grad(lambda y: barrier_eval(spec, y)[1][i], z) for i in range(2)])
        np.testing.assert_allclose(H, H_fd, rtol=1e-4, atol=1e-4)

    def test_nonnegative(self, rng):
        spec = BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("polynomial", 0.1))
        assert np.all(barrier_value(spec, rng.uniform(-5, 5, (500, 2))) >= -1e-12)

    def test_relaxed_below_exact_inside(self, rng):
        spec = BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("polynomial", 0.3))
        Z = rng.uniform([-1.99, -0.79], [2.99, 0.79], (500, 2))
        assert np.all(barrier_value(spec, Z) <= barrier_value(spec, Z, exact=True) + 1e-12)

    def test_equals_exact_away_from_boundary(self):
        spec = BarrierSpec(Polytope.box(*X_BOX), "gradient", RelaxingFunction("polynomial", 0.1))
        z = np.array([0.5, -0.2])
        np.testing.assert_allclose(barrier_eval(spec, z)[0], nonrelaxed_eval(spec, z)[0])

    def test_exact_value_by_hand(self):
        spec = BarrierSpec(Polytope.box(*U_BOX), "weight")
        u = 0.5
        ref = -np.log(0.5 / 1.0) - 2 * np.log(2.5 / 2.0)
        np.testing.assert_allclose(nonrelaxed_eval(spec, [u])[0], ref)

    def test_exact_outside_domain(self):
        spec = BarrierSpec(Polytope.box(*U_BOX))
        with pytest.raises(DomainViolation):
            nonrelaxed_eval(spec, [1.0])
        assert barrier_value(spec, [[1.5]], exact=True)[0] == np.inf

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            barrier_eval(BarrierSpec(Polytope.box(*U_BOX)), np.zeros(2))

    def test_delta_above_min_d_rejected(self):
        with pytest.raises(ValueError):
            BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("polynomial", 1.0))


class TestBoundaryLevel:
    def test_input_level(self):
        # u = 1: beta(0) + 2 ln(2/3) with beta(0) = 1.5 - ln 0.1
        spec = BarrierSpec(Polytope.box(*U_BOX), "weight", RelaxingFunction("polynomial", 0.1))
        lvl = barrier_boundary_level(spec)
        np.testing.assert_allclose(lvl.value, 1.5 - np.log(0.1) + 2 * np.log(2 / 3), rtol=1e-10)
        np.testing.assert_allclose(lvl.value, 2.99165, atol=1e-5)
        np.testing.assert_allclose(lvl.point, [1.0])

    def test_state_level_against_grid(self):
        spec = BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("polynomial", 0.1))
        lvl = barrier_boundary_level(spec)
        t = np.linspace(0, 1, 20001)
        edges = np.concatenate([
            np.c_[np.full_like(t, 3.0), -0.8 + 1.6 * t], np.c_[np.full_like(t, -2.0), -0.8 + 1.6 * t],
            np.c_[-2 + 5 * t, np.full_like(t, 0.8)], np.c_[-2 + 5 * t, np.full_like(t, -0.8)]])
        grid_min = barrier_value(spec, edges).min()
        assert lvl.value <= grid_min + 1e-12
        np.testing.assert_allclose(lvl.value, grid_min, rtol=1e-7)
        np.testing.assert_allclose(barrier_eval(spec, lvl.point)[0], lvl.value)


class TestQuadraticBound:
    def test_dominates_barrier(self, rng):
        spec = BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("polynomial", 0.1))
        M = quadratic_upper_bound(spec)
        for z in rng.uniform(-6, 6, (500, 2)):
            assert barrier_eval(spec, z)[0] <= z @ M @ z + 1e-12

    def test_formula(self):
        spec = BarrierSpec(Polytope.box(*U_BOX), "weight", RelaxingFunction("polynomial", 0.1))
        np.testing.assert_allclose(quadratic_upper_bound(spec), [[(1 + 2) / (2 * 0.01)]])

    def test_wrong_relaxing(self):
        for rf in [RelaxingFunction("exponential", 0.1), RelaxingFunction("polynomial", 0.1, 4)]:
            with pytest.raises(WrongRelaxing):
                quadratic_upper_bound(BarrierSpec(Polytope.box(*U_BOX), "weight", rf))


class TestWorkedExamples:
    def test_symmetric_box_needs_no_weights(self):
        np.testing.assert_allclose(make_weight_vector(Polytope.box([-1, -1], [1, 1])), 0,
                                   atol=1e-12)

    def test_gradient_recentered_input_bound(self):
        # (1 / (2 delta^2)) * (1 + 1)
        spec = BarrierSpec(Polytope.box(*U_BOX), "gradient", RelaxingFunction("polynomial", 0.1))
        np.testing.assert_allclose(quadratic_upper_bound(spec), [[100.0]])

    def test_bound_tight_at_origin(self):
        spec = BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("polynomial", 0.1))
        assert barrier_eval(spec, np.zeros(2))[0] == 0.0
        assert np.zeros(2) @ quadratic_upper_bound(spec) @ np.zeros(2) == 0.0

    def test_penalty_ordering(self):
        delta = 0.1
        z = np.linspace(-3, delta, 400)
        b2, b4, b6 = (relax_eval(RelaxingFunction("polynomial", delta, k), z)[0]
                      for k in (2, 4, 6))
        be = relax_eval(RelaxingFunction("exponential", delta), z)[0]
        assert np.all(b2 <= b4 + 1e-12) and np.all(b4 <= b6 + 1e-12)
        assert np.all(b6 <= be + 1e-12)

    def test_sublevel_set_inside_constraints(self, rng):
        spec = BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("polynomial", 0.1))
        level = barrier_boundary_level(spec).value
        Z = rng.uniform(-5, 5, (20000, 2))
        inside = Z[barrier_value(spec, Z) <= level]
        assert inside.shape[0] >= 1000
        assert np.all(inside @ spec.polytope.C.T <= spec.polytope.d)

    def test_exact_barrier_blows_up_at_facet(self):
        spec = BarrierSpec(Polytope.box(*U_BOX), "weight")
        vals = [nonrelaxed_eval(spec, [1.0 - s])[0] for s in (1e-2, 1e-4, 1e-6)]
        assert vals[0] < vals[1] < vals[2]

    def test_gradient_recentered_input_level_vs_grid(self):
        # a 1-d facet is a single point; compare with the lower value of the two
        spec = BarrierSpec(Polytope.box(*U_BOX), "gradient", RelaxingFunction("polynomial", 1e-3))
        ref = barrier_value(spec, [[1.0], [-2.0]]).min()
        np.testing.assert_allclose(barrier_boundary_level(spec).value, ref, rtol=1e-12)

    def test_scalar_gradient_recentered_at_origin(self):
        spec = BarrierSpec(Polytope([[1.0]], [1.0]), "gradient", RelaxingFunction("polynomial", 0.5))
        v, g, H = barrier_eval(spec, [0.0])
        assert v == 0.0 and g[0] == 0.0 and H[0, 0] > 0

    def test_hessian_psd(self, rng):
        spec = BarrierSpec(Polytope.box(*X_BOX), "weight", RelaxingFunction("exponential", 0.1))
        for z in rng.uniform(-5, 5, (100, 2)):
            assert np.linalg.eigvalsh(barrier_eval(spec, z)[2]).min() >= -1e-10
