import numpy as np
import pytest

from knapopt import (CgState, Equality, Interval, KnapsackSet, ProjectionObjective,
                     QuadraticObjective, RcgdConfig, cg_direction, lift,
                     lift_direction, make_random_qp, make_reduced_space, partition,
                     rcgd_solve, reduce_gradient, rng_from_seed, step_cap_box,
                     wolfe_linesearch)
from knapopt.rcgd import LinearState

from oracles import oracle_qp


def face_space(x, kset):
    return make_reduced_space(np.asarray(x, dtype=float), kset)


class TestReducedSpace:
    def setup_method(self):
        self.ks = KnapsackSet([0, 0, 0, 0], [1, 1, 1, 1], [1.0, 2.0, -1.0, 0.5],
                              Equality(1.0))
        self.x = np.array([0.0, 0.4, 0.3, 1.0])  # indices 0 and 3 bound-active

    def test_anchor_and_dim(self):
        rs = face_space(self.x, self.ks)
        assert rs.linear_state is LinearState.EQUALITY
        np.testing.assert_array_equal(rs.x_anchor, self.x)
        assert rs.dim == 1  # two free coordinates minus the active row

    def test_lift_at_zero_is_anchor(self):
        rs = face_space(self.x, self.ks)
        np.testing.assert_array_equal(lift(rs, np.zeros(rs.dim)), rs.x_anchor)

    def test_lift_preserves_row_value(self):
        rs = face_space(self.x, self.ks)
        rng = rng_from_seed(1)
        t0 = float(self.ks.a @ rs.x_anchor)
        for _ in range(10):
            v = rng.standard_normal(rs.dim)
            x = lift(rs, v)
            assert float(self.ks.a @ x) == pytest.approx(t0, abs=1e-12)
            np.testing.assert_array_equal(x[rs.part.active], rs.x_anchor[rs.part.active])

    def test_adjoint_identity(self):
        rs = face_space(self.x, self.ks)
        rng = rng_from_seed(2)
        for _ in range(10):
            d = rng.standard_normal(rs.dim)
            g = rng.standard_normal(4)
            lhs = float(lift_direction(rs, d) @ g)
            rhs = float(d @ reduce_gradient(rs, g))
            assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_constraint_normal_annihilated(self):
        rs = face_space(self.x, self.ks)
        g = self.ks.a.copy()
        np.testing.assert_allclose(reduce_gradient(rs, g), np.zeros(rs.dim), atol=1e-12)

    def test_box_only_reduction_is_shrink(self):
        ks = KnapsackSet([0, 0, 0], [1, 1, 1], [1, 1, 1], None)
        rs = face_space(np.array([0.0, 0.5, 0.6]), ks)
        assert rs.linear_state is LinearState.NONE
        assert rs.ns is None
        g = np.array([3.0, 4.0, 5.0])
        np.testing.assert_array_equal(reduce_gradient(rs, g), [4.0, 5.0])

    def test_interval_states(self):
        ks = KnapsackSet([0, 0], [1, 1], [1, 1], Interval(0.5, 1.5))
        assert face_space(np.array([0.2, 0.3]), ks).linear_state is LinearState.INTERVAL_LOWER
        assert face_space(np.array([0.7, 0.8]), ks).linear_state is LinearState.INTERVAL_UPPER
        assert face_space(np.array([0.4, 0.45]), ks).linear_state is LinearState.INTERVAL_INACTIVE

    def test_anchor_snaps_near_bound_coordinates(self):
        ks = KnapsackSet([0.0, 0.0], [1.0, 1.0], [1.0, 1.0], None)
        rs = face_space(np.array([1e-14, 0.5]), ks)
        assert rs.x_anchor[0] == 0.0


class TestStepCapBox:
    def test_example(self):
        ks = KnapsackSet([0.0], [1.0], [1.0], None)
        part = partition(np.array([0.5]), ks)
        assert step_cap_box(np.array([0.5]), np.array([1.0]), ks, part) == pytest.approx(0.5)

    def test_zero_direction_unbounded(self):
        ks = KnapsackSet([0.0], [1.0], [1.0], None)
        part = partition(np.array([0.5]), ks)
        assert step_cap_box(np.array([0.5]), np.array([0.0]), ks, part) == np.inf

    def test_random_lands_on_bound(self):
        rng = rng_from_seed(3)
        for _ in range(30):
            n = int(rng.integers(1, 10))
            l = rng.uniform(-2, 0, n)
            u = rng.uniform(0.5, 2, n)
            ks = KnapsackSet(l, u, np.ones(n), None)
            x = rng.uniform(l + 0.05, u - 0.05)
            p = rng.standard_normal(n)
            part = partition(x, ks)
            cap = step_cap_box(x, p, ks, part)
            if not np.isfinite(cap):
                continue
            land = x + cap * p
            on_bound = (np.abs(land - l) <= 1e-10) | (np.abs(land - u) <= 1e-10)
            assert on_bound.any()
            inside = x + 0.999 * cap * p
            assert np.all(inside > l - 1e-12) and np.all(inside < u + 1e-12)


class TestCgDirection:
    def test_first_iteration_steepest(self):
        g = np.array([1.0, -2.0])
        np.testing.assert_array_equal(cg_direction(CgState(g=g)), -g)

    def test_restart_flag(self):
        g = np.array([1.0, -2.0])
        st = CgState(g=g, g_prev=np.array([2.0, 0.0]), d_prev=np.array([-2.0, 0.0]),
                     restart=True)
        np.testing.assert_array_equal(cg_direction(st), -g)

    def test_always_descent(self):
        rng = rng_from_seed(4)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            st = CgState(g=rng.standard_normal(n), g_prev=rng.standard_normal(n),
                         d_prev=rng.standard_normal(n))
            d = cg_direction(st)
            assert float(st.g @ d) < 0.0 or not np.any(st.g)


class TestWolfeLinesearch:
    @staticmethod
    def quad(alpha):
        return (alpha - 1.0) ** 2, 2.0 * (alpha - 1.0)

    def test_near_one_on_quadratic(self):
        alpha, f, g, evals, cap_hit = wolfe_linesearch(self.quad, 1.0, np.inf)
        assert not cap_hit
        assert f <= 1.0 + 0.1 * alpha * (-2.0)
        assert g >= 0.9 * (-2.0)
        assert 0.1 <= alpha <= 1.5

    def test_cap_binds(self):
        alpha, f, g, evals, cap_hit = wolfe_linesearch(self.quad, 1.0, 0.3)
        assert alpha == 0.3
        assert cap_hit
        assert f < 1.0

    def test_increasing_phi_rejected(self):
        with pytest.raises(ValueError):
            wolfe_linesearch(lambda a: (a, 1.0), 1.0, np.inf)

    def test_expands_to_find_flat_slope(self):
        # minimizer far beyond the unit initial step
        phi = lambda a: ((a - 40.0) ** 2, 2.0 * (a - 40.0))
        alpha, f, g, evals, cap_hit = wolfe_linesearch(phi, 1.0, np.inf)
        assert g >= 0.9 * (-80.0)
        assert f < 1600.0


class TestRcgdSolve:
    def test_converges_on_interior_face(self):
        qp = make_random_qp(6, 31, "dense_spd", "equality")
        obj = qp.objective()
        # start on the all-free face at a feasible interior point
        from knapopt.projection import project
        x0 = project(0.5 * (qp.kset.l + qp.kset.u), qp.kset)
        rs = make_reduced_space(x0, qp.kset)
        if rs.part.dim_active:
            pytest.skip("seeded start unexpectedly touched a bound")
        res = rcgd_solve(obj, qp.kset, x0, rs, RcgdConfig(tol=1e-10))
        if res.status == "converged":
            xo = oracle_qp(qp.hess, qp.c, qp.kset)
            interior = np.all(xo > qp.kset.l + 1e-9) and np.all(xo < qp.kset.u - 1e-9)
            if interior:
                np.testing.assert_allclose(res.x, xo, atol=1e-7)
        else:
            assert res.status in ("bound_hit",)

    def test_finite_termination_on_reduced_quadratic(self):
        # equality row with a huge box: pure CG on the reduced quadratic
        rng = rng_from_seed(5)
        n = 12
        m = rng.standard_normal((n, n))
        hess = m.T @ m + 0.5 * np.eye(n)
        c = rng.standard_normal(n)
        ks = KnapsackSet(-50 * np.ones(n), 50 * np.ones(n), rng.standard_normal(n),
                         Equality(0.5))
        obj = QuadraticObjective(c, hess=hess)
        from knapopt.projection import project
        x0 = project(np.zeros(n), ks)
        rs = make_reduced_space(x0, ks)
        res = rcgd_solve(obj, ks, x0, rs, RcgdConfig(tol=1e-8, max_iter=3 * n))
        assert res.status == "converged"
        assert res.iterations <= rs.dim + 15  # near-exact CG termination

    def test_bound_hit_lands_exactly(self):
        ks = KnapsackSet([0.0, 0.0], [1.0, 1.0], [1.0, 1.0], None)
        obj = ProjectionObjective(np.array([3.0, 0.5]))  # pulls x0 out the top
        x0 = np.array([0.4, 0.5])
        rs = make_reduced_space(x0, ks)
        res = rcgd_solve(obj, ks, x0, rs)
        assert res.status == "bound_hit"
        assert res.x[res.binding[0]] in (0.0, 1.0)
        assert res.x[0] == 1.0  # exactly on the bound, bitwise

    def test_linear_hit_on_interval(self):
        ks = KnapsackSet([0.0, 0.0], [1.0, 1.0], [1.0, 1.0], Interval(0.2, 1.0))
        obj = ProjectionObjective(np.array([0.9, 0.9]))  # target violates a'x <= 1
        x0 = np.array([0.3, 0.3])
        rs = make_reduced_space(x0, ks)
        assert rs.linear_state is LinearState.INTERVAL_INACTIVE
        res = rcgd_solve(obj, ks, x0, rs)
        assert res.status == "linear_hit_upper"
        assert float(ks.a @ res.x) == pytest.approx(1.0, abs=1e-12)

    def test_monotone_decrease(self):
        qp = make_random_qp(8, 33, "dense_spd", "equality")
        obj = qp.objective()
        from knapopt.projection import project
        x0 = project(0.5 * (qp.kset.l + qp.kset.u), qp.kset)
        rs = make_reduced_space(x0, qp.kset)
        res = rcgd_solve(obj, qp.kset, x0, rs, RcgdConfig(max_iter=50))
        fs = [r.f for r in res.trace]
        assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(fs, fs[1:]))

    def test_fixed_variables_bitwise_unchanged(self):
        rng = rng_from_seed(6)
        n = 10
        ks = KnapsackSet(np.zeros(n), np.ones(n), rng.uniform(0.5, 1, n), Equality(2.0))
        x0 = rng.uniform(0.2, 0.8, n)
        x0[[1, 4]] = [0.0, 1.0]
        from knapopt.projection import project
        x0[np.setdiff1d(np.arange(n), [1, 4])] += 0.0
        x0 = np.where((np.arange(n) == 1) | (np.arange(n) == 4), x0, project(x0, ks))
        # build the face from a feasible point with indices 1, 4 active
        x0 = project(x0, ks)
        x0[1], x0[4] = 0.0, 1.0
        rs = make_reduced_space(x0, ks)
        res = rcgd_solve(obj := make_random_qp(n, 34, "diagonal").objective(),
                         ks, x0, rs, RcgdConfig(max_iter=15))
        assert res.x[1] == 0.0 and res.x[4] == 1.0

    def test_two_dimensional_reduced_quadratic(self):
        # equality row on n=3 gives a 2-d reduced space: classical CG ends in
        # two steps with exact line minimizers
        rng = rng_from_seed(77)
        hess = np.diag([1.0, 3.0, 7.0])
        c = rng.standard_normal(3)
        ks = KnapsackSet(-90 * np.ones(3), 90 * np.ones(3), np.array([1.0, 1.0, 2.0]),
                         Equality(1.0))
        from knapopt.projection import project
        x0 = project(np.zeros(3), ks)
        rs = make_reduced_space(x0, ks)
        assert rs.dim == 2
        res = rcgd_solve(QuadraticObjective(c, hess=hess), ks, x0, rs,
                         RcgdConfig(tol=1e-8))
        assert res.status == "converged"
        assert res.iterations <= 3

    def test_trace_csv_columns(self, tmp_path):
        qp = make_random_qp(5, 36, "dense_spd", "equality")
        from knapopt.projection import project
        from knapopt.rcgd import write_trace_csv
        x0 = project(0.5 * (qp.kset.l + qp.kset.u), qp.kset)
        rs = make_reduced_space(x0, qp.kset)
        res = rcgd_solve(qp.objective(), qp.kset, x0, rs, RcgdConfig(max_iter=10))
        path = tmp_path / "t.csv"
        write_trace_csv(res.trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "iter,f,norm_gred,alpha,cap_kind"
        assert len(lines) == len(res.trace) + 1

    def test_restart_test_hook(self):
        qp = make_random_qp(6, 35, "dense_spd", "equality")
        from knapopt.projection import project
        x0 = project(0.5 * (qp.kset.l + qp.kset.u), qp.kset)
        rs = make_reduced_space(x0, qp.kset)
        res = rcgd_solve(qp.objective(), qp.kset, x0, rs,
                         restart_test=lambda *a: "restart")
        assert res.status == "restart_requested"
        res = rcgd_solve(qp.objective(), qp.kset, x0, rs,
                         restart_test=lambda *a: "converged")
        assert res.status == "global_converged"
