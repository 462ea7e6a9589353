"""
Comprehensive tests for the radial harmonic map heat flow solver core:
grid and norms, operator assembly, tridiagonal solves, time stepping and
energy / blow-up diagnostics.
"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from radial_hmhf.diagnostics import (
    blowup_indicator,
    discrete_energy,
    dissipation_allowance,
    dissipation_step_limit,
    energy_trace,
    weighted_trace,
)
from radial_hmhf.errors import GridError, ParameterError, SingularMatrixError, SingularPivotError
from radial_hmhf.grid import (
    StateVector,
    make_grid,
    make_time_grid,
    norm_2h,
    norm_Dh,
    norm_inf,
    norm_inf_weighted,
    sample_initial,
    time_grid_from_step,
    zero_state,
)
from radial_hmhf.linsolve import dense_invert, dense_solve, thomas_solve, thomas_solve_values
from radial_hmhf.operators import (
    G_LOWER_BOUND,
    TridiagonalOperator,
    assemble_C,
    assemble_D,
    assemble_F,
    assemble_G,
    c_alpha,
    g,
    similarity_transform,
    stability_params,
    system_matrix,
)
from radial_hmhf.stepper import (
    Scheme,
    SchemeConfig,
    bdf2_step,
    euler_step,
    evolve,
    is_nonincreasing,
    max_norm_monitor,
)


def smooth(x):
    return math.pi * (1.0 - x) * x


def random_dominant_system(rng, n):
    grid = make_grid(n)
    sub = rng.uniform(-1.0, 1.0, n - 1)
    sup = rng.uniform(-1.0, 1.0, n - 1)
    off = np.zeros(n)
    off[:-1] += np.abs(sup)
    off[1:] += np.abs(sub)
    main = off + rng.uniform(0.5, 2.0, n)
    return TridiagonalOperator(sub=sub, main=main, sup=sup, grid=grid)


# ===== GRID AND NORMS =====

class TestGrid:
    """Test grid construction and state vectors."""

    def test_three_interior_nodes(self):
        """Test N=3 gives h=0.25 and nodes at quarter points."""
        grid = make_grid(3)
        assert grid.spacing == 0.25
        np.testing.assert_allclose(grid.nodes, [0.25, 0.5, 0.75])

    def test_single_node(self):
        """Test N=1 has its only node at the midpoint."""
        grid = make_grid(1)
        assert grid.spacing == 0.5
        np.testing.assert_allclose(grid.nodes, [0.5])

    def test_fine_grid_spacing(self):
        """Test N=999 gives h = 1e-3 within roundoff."""
        grid = make_grid(999)
        assert len(grid) == 999
        assert grid.spacing == pytest.approx(1e-3, rel=1e-14)
        assert grid.spacing * (grid.n_interior + 1) == pytest.approx(1.0, abs=4e-16)

    @pytest.mark.parametrize("bad", [0, -3, 2.5, True])
    def test_invalid_sizes_rejected(self, bad):
        """Test that non-positive or non-integer N raises GridError."""
        with pytest.raises(GridError):
            make_grid(bad)

    def test_sample_smooth_profile(self):
        """Test sampling pi(1-x)x on N=3."""
        u = sample_initial(smooth, make_grid(3))
        np.testing.assert_allclose(u.values, [math.pi * 0.1875, math.pi * 0.25, math.pi * 0.1875])

    def test_sample_blowup_profile_single_node(self):
        """Test 9pi(1-x)x on N=1 gives 9pi/4."""
        u = sample_initial(lambda x: 9.0 * smooth(x), make_grid(1))
        assert u.values[0] == pytest.approx(9.0 * math.pi / 4.0)

    def test_sample_rejects_non_finite(self):
        """Test that a non-finite initial value is reported."""
        with pytest.raises(GridError, match="not finite"):
            sample_initial(lambda x: math.inf, make_grid(2))

    def test_state_is_immutable(self):
        """Test that state values cannot be written."""
        u = zero_state(make_grid(4))
        with pytest.raises(ValueError):
            u.values[0] = 1.0

    def test_cross_grid_arithmetic_rejected(self):
        """Test that adding states on different grids raises GridError."""
        a = zero_state(make_grid(3))
        b = zero_state(make_grid(4))
        with pytest.raises(GridError):
            a + b

    def test_arithmetic_on_same_grid(self):
        """Test linear combinations on one grid."""
        grid = make_grid(2)
        a = StateVector([1.0, 2.0], grid)
        b = StateVector([0.5, -1.0], grid)
        np.testing.assert_allclose((2.0 * a - b).values, [1.5, 5.0])
        np.testing.assert_allclose((-a).values, [-1.0, -2.0])

    def test_overflowing_arithmetic_marks_divergence(self):
        """Test that a non-finite result is flagged instead of raising."""
        grid = make_grid(1)
        big = StateVector([1e308], grid)
        with np.errstate(over="ignore"):
            assert (big * 10.0).diverged

    def test_wrong_length_rejected(self):
        """Test that a state must match the node count."""
        with pytest.raises(GridError):
            StateVector([1.0, 2.0], make_grid(3))


class TestTimeGrid:
    """Test time grid construction."""

    def test_step_from_count(self):
        """Test dt = T/M."""
        tg = make_time_grid(0.1, 10)
        assert tg.step == pytest.approx(0.01)
        assert tg.time_at(10) == pytest.approx(0.1)

    def test_step_must_divide_final_time(self):
        """Test that dt not dividing T is rejected."""
        with pytest.raises(ParameterError, match="does not divide"):
            time_grid_from_step(0.1, 0.03)

    def test_step_from_dt(self):
        """Test M is recovered from T/dt."""
        assert time_grid_from_step(0.1, 6.25e-4).step_count == 160

    @pytest.mark.parametrize("dt", [0.0, -1e-3, math.nan])
    def test_bad_step_rejected(self, dt):
        """Test non-positive or NaN steps are rejected."""
        with pytest.raises(ParameterError):
            time_grid_from_step(0.1, dt)


class TestNorms:
    """Test the discrete norms."""

    def test_max_norm(self):
        """Test the max norm of a small vector."""
        assert norm_inf(StateVector([1.0, -2.0, 0.5], make_grid(3))) == 2.0

    def test_zero_vector_norms(self):
        """Test that every norm of the zero vector is 0."""
        u = zero_state(make_grid(5))
        assert norm_inf(u) == 0.0
        assert norm_2h(u) == 0.0
        assert norm_Dh(u) == 0.0
        assert norm_inf_weighted(u, 0.5) == 0.0

    def test_scaled_euclidean_norm(self):
        """Test ||1||_{2,h} on N=3 and ||(2)||_{2,h} on N=1."""
        assert norm_2h(StateVector(np.ones(3), make_grid(3))) == pytest.approx(math.sqrt(0.75))
        assert norm_2h(StateVector([2.0], make_grid(1))) == pytest.approx(math.sqrt(2.0))

    def test_weighted_euclidean_norm(self):
        """Test ||1||_{D,h} on N=1 and N=3."""
        assert norm_Dh(StateVector([1.0], make_grid(1))) == pytest.approx(0.5)
        assert norm_Dh(StateVector(np.ones(3), make_grid(3))) == pytest.approx(0.612372, abs=1e-6)

    def test_norm_ordering(self):
        """Test ||v||_{D,h} <= ||v||_{2,h} <= ||v||_inf sqrt(hN)."""
        rng = np.random.default_rng(7)
        grid = make_grid(40)
        for _ in range(20):
            v = StateVector(rng.normal(size=40), grid)
            assert norm_Dh(v) <= norm_2h(v) + 1e-15
            assert norm_2h(v) <= norm_inf(v) * math.sqrt(grid.spacing * 40) + 1e-15

    def test_parabola_max_norm(self):
        """Test the sampled parabola peaks near pi/4."""
        u = sample_initial(smooth, make_grid(999))
        assert norm_inf(u) == pytest.approx(math.pi / 4.0, abs=1e-6)

    def test_weighted_norm_limits(self):
        """Test alpha=0 is the max norm and alpha=1 of the nodes is 1."""
        grid = make_grid(9)
        u = sample_initial(smooth, grid)
        assert norm_inf_weighted(u, 0.0) == norm_inf(u)
        assert norm_inf_weighted(StateVector(grid.nodes, grid), 1.0) == pytest.approx(1.0)

    def test_weighted_norm_smooth_profile(self):
        """Test ||D^-alpha u||_inf for alpha = sqrt(2/pi) against the analytic maximum."""
        alpha = math.sqrt(2.0 / math.pi)
        u = sample_initial(smooth, make_grid(999))
        x_star = (1.0 - alpha) / (2.0 - alpha)
        expected = math.pi * x_star ** (1.0 - alpha) * (1.0 - x_star)
        assert norm_inf_weighted(u, alpha) == pytest.approx(expected, rel=1e-4)
        assert norm_inf_weighted(u, alpha) == pytest.approx(1.82, abs=0.01)

    def test_weighted_norm_alpha_range(self):
        """Test that alpha outside [0, 1] is rejected."""
        with pytest.raises(ParameterError):
            norm_inf_weighted(zero_state(make_grid(2)), 1.5)


# ===== OPERATOR ASSEMBLY =====

class TestOperators:
    """Test g, the assembled matrices and c_alpha."""

    def test_g_values(self):
        """Test g at 0, pi/2 and pi/4."""
        assert g(0.0) == 1.0
        assert g(math.pi / 2.0) == pytest.approx(0.0, abs=1e-16)
        assert g(math.pi / 4.0) == pytest.approx(2.0 / math.pi)

    def test_g_small_arguments_continuous(self):
        """Test the series branch agrees with the quotient near the cutoff."""
        y = 9.999e-5
        assert g(y) == pytest.approx(math.sin(2 * y) / (2 * y), rel=1e-12)

    def test_g_is_even_on_arrays(self):
        """Test g(-y) = g(y) elementwise."""
        y = np.linspace(-5.0, 5.0, 41)
        np.testing.assert_allclose(g(y), g(-y))

    def test_g_lower_bound(self):
        """Test g never drops below its tabulated minimum and gets within 1e-4 of it."""
        values = g(np.linspace(-50.0, 50.0, 200001))
        assert values.min() >= G_LOWER_BOUND
        assert values.min() < G_LOWER_BOUND + 1e-4

    def test_C_bands_three_nodes(self):
        """Test the C bands on N=3."""
        C = assemble_C(make_grid(3))
        np.testing.assert_allclose(C.main, [32.0, 32.0, 32.0])
        np.testing.assert_allclose(C.sup, [-24.0, -20.0])
        np.testing.assert_allclose(C.sub, [-12.0, -40.0 / 3.0])

    def test_C_single_node(self):
        """Test C on N=1 is the scalar 8."""
        C = assemble_C(make_grid(1))
        np.testing.assert_allclose(C.main, [8.0])
        assert C.sub.size == 0 and C.sup.size == 0

    @pytest.mark.parametrize("n", [3, 10, 257])
    def test_C_interior_row_sums_vanish(self, n):
        """Test C applied to ones is zero on interior rows."""
        sums = assemble_C(make_grid(n)).row_sums()
        assert np.max(np.abs(sums[1:-1])) <= 1e-9 * (n + 1) ** 2
        assert sums[0] > 0 and sums[-1] > 0

    @pytest.mark.parametrize("n", [1, 2, 5, 64, 2047])
    def test_C_is_dominant_z_matrix(self, n):
        """Test the Z-matrix sign pattern and weak diagonal dominance."""
        C = assemble_C(make_grid(n))
        assert C.is_z_matrix()
        assert C.is_weakly_diagonally_dominant()

    def test_G_and_F(self):
        """Test the nonlinear coefficients and the sine vector."""
        grid = make_grid(2)
        np.testing.assert_allclose(assemble_G(zero_state(grid)).entries, [1.0, 1.0])
        np.testing.assert_allclose(
            assemble_G(StateVector([math.pi / 2, -math.pi / 2], grid)).entries, [0.0, 0.0], atol=1e-16
        )
        F = assemble_F(StateVector([math.pi / 6, math.pi / 4], grid))
        np.testing.assert_allclose(F.values, [0.5, math.sqrt(2) / 2])

    def test_system_matrix_scalar(self):
        """Test I + dt (C + G D^-2) on N=1."""
        grid = make_grid(1)
        C = assemble_C(grid)
        T0 = system_matrix(C, assemble_G(zero_state(grid)), grid, 0.1)
        assert T0.main[0] == pytest.approx(2.2)
        T1 = system_matrix(C, assemble_G(StateVector([math.pi / 4], grid)), grid, 0.1)
        assert T1.main[0] == pytest.approx(2.054648, abs=1e-6)

    def test_system_matrix_tends_to_identity(self):
        """Test the matrix approaches I as dt -> 0."""
        grid = make_grid(6)
        T = system_matrix(assemble_C(grid), assemble_G(zero_state(grid)), grid, 1e-14)
        np.testing.assert_allclose(T.to_dense(), np.eye(6), atol=1e-9)

    def test_system_matrix_rejects_bad_dt(self):
        """Test dt <= 0 is rejected."""
        grid = make_grid(2)
        with pytest.raises(ParameterError):
            system_matrix(assemble_C(grid), assemble_G(zero_state(grid)), grid, 0.0)

    def test_DC_is_symmetric(self):
        """Test D C is symmetric with off-diagonals -(i + 1/2)/h."""
        grid = make_grid(3)
        DC = assemble_D(grid).to_dense() @ assemble_C(grid).to_dense()
        np.testing.assert_allclose(DC, DC.T, atol=1e-12)
        np.testing.assert_allclose([DC[0, 1], DC[1, 2]], [-6.0, -10.0])

    def test_similarity_transform_matches_dense(self):
        """Test D^-alpha C D^alpha in banded form against dense products."""
        grid = make_grid(7)
        C = assemble_C(grid)
        alpha = 0.6
        D = np.diag(grid.nodes)
        expected = np.linalg.inv(D ** alpha) @ C.to_dense() @ (D ** alpha)
        np.testing.assert_allclose(similarity_transform(C, alpha).to_dense(), expected, rtol=1e-12, atol=1e-9)

    def test_c_alpha_values(self):
        """Test c_0 = pi/2 and c_sqrt(2/pi) = pi/4."""
        assert c_alpha(0.0) == pytest.approx(math.pi / 2.0)
        assert c_alpha(math.sqrt(2.0 / math.pi)) == pytest.approx(math.pi / 4.0, abs=1e-10)

    def test_c_alpha_near_one(self):
        """Test the bisection residual for alpha = 0.99."""
        c = c_alpha(0.99)
        assert 0.0 < c < 0.5
        assert abs(g(c) - 0.9801) <= 1e-12

    def test_c_alpha_domain(self):
        """Test alpha = 1 is outside the domain."""
        with pytest.raises(ParameterError):
            c_alpha(1.0)

    def test_stability_params(self):
        """Test the (alpha, c_alpha, d_alpha) bundle."""
        u0 = sample_initial(smooth, make_grid(99))
        params = stability_params(0.5, u0)
        assert params.c_alpha == pytest.approx(c_alpha(0.5))
        assert params.d_alpha == pytest.approx(norm_inf_weighted(u0, 0.5))


# ===== LINEAR SOLVERS =====

class TestLinearSolvers:
    """Test the Thomas solver against the dense oracle."""

    def test_identity_solve(self):
        """Test that the identity returns the right-hand side."""
        grid = make_grid(5)
        eye = TridiagonalOperator(sub=np.zeros(4), main=np.ones(5), sup=np.zeros(4), grid=grid)
        rhs = StateVector(np.arange(5.0), grid)
        np.testing.assert_array_equal(thomas_solve(eye, rhs).values, rhs.values)

    def test_scalar_solve(self):
        """Test the N=1 scalar division."""
        grid = make_grid(1)
        T = TridiagonalOperator(sub=np.zeros(0), main=np.array([2.054648]), sup=np.zeros(0), grid=grid)
        x = thomas_solve_values(T, np.array([math.pi / 4]))
        assert x[0] == pytest.approx(0.382255, abs=1e-6)

    def test_random_systems_match_dense_oracle(self):
        """Test 100 random dominant systems, N in 1..64, within 1e-10 relative."""
        rng = np.random.default_rng(20250601)
        for _ in range(100):
            n = int(rng.integers(1, 65))
            T = random_dominant_system(rng, n)
            rhs = rng.normal(size=n)
            fast = thomas_solve_values(T, rhs)
            ref = dense_solve(T, rhs)
            assert np.max(np.abs(fast - ref)) <= 1e-10 * max(np.max(np.abs(ref)), 1e-300)

    def test_zero_pivot_raises(self):
        """Test a zero pivot is reported with its row."""
        grid = make_grid(2)
        T = TridiagonalOperator(sub=np.array([1.0]), main=np.array([0.0, 1.0]), sup=np.array([1.0]), grid=grid)
        with pytest.raises(SingularPivotError) as exc:
            thomas_solve_values(T, np.ones(2))
        assert exc.value.row == 1

    def test_dense_invert_small(self):
        """Test the inverse of identity and of the scalar 2."""
        grid = make_grid(1)
        T = TridiagonalOperator(sub=np.zeros(0), main=np.array([2.0]), sup=np.zeros(0), grid=grid)
        assert dense_invert(T).values[0, 0] == pytest.approx(0.5)

    def test_resolvent_inverse_is_substochastic(self):
        """Test (I + 0.01 C)^-1 on N=8 is nonnegative with row sums <= 1."""
        grid = make_grid(8)
        C = assemble_C(grid)
        T = TridiagonalOperator(sub=0.01 * C.sub, main=1.0 + 0.01 * C.main, sup=0.01 * C.sup, grid=grid)
        inverse = dense_invert(T)
        assert np.min(inverse.values) >= -1e-12
        assert inverse.inf_norm() <= 1.0 + 1e-12

    def test_dense_oracle_cap(self):
        """Test the dense oracle refuses N > 64."""
        T = assemble_C(make_grid(65))
        with pytest.raises(SingularMatrixError):
            dense_invert(T)

    def test_singular_dense_matrix(self):
        """Test a singular matrix is reported by the oracle."""
        grid = make_grid(2)
        T = TridiagonalOperator(sub=np.array([1.0]), main=np.array([1.0, 1.0]), sup=np.array([1.0]), grid=grid)
        with pytest.raises(SingularMatrixError):
            dense_solve(T, np.ones(2))


# ===== TIME STEPPING =====

class TestStepper:
    """Test single steps and the evolution driver."""

    def test_zero_is_fixed_point(self):
        """Test both schemes keep the zero state."""
        grid = make_grid(10)
        C = assemble_C(grid)
        u = zero_state(grid)
        assert norm_inf(euler_step(u, 0.01, grid, C)) == 0.0
        assert norm_inf(bdf2_step(u, u, 0.01, grid, C)) == 0.0

    def test_euler_scalar_step(self):
        """Test one Euler step on N=1 from pi/4."""
        grid = make_grid(1)
        nxt = euler_step(StateVector([math.pi / 4], grid), 0.1, grid, assemble_C(grid))
        expected = (math.pi / 4) / (1.0 + 0.1 * (8.0 + 8.0 / math.pi))
        assert nxt.values[0] == pytest.approx(expected, rel=1e-13)
        assert nxt.values[0] == pytest.approx(0.382255, abs=1e-6)

    def test_bdf2_scalar_step(self):
        """Test one BDF2 step on N=1 with equal history."""
        grid = make_grid(1)
        u = StateVector([math.pi / 4], grid)
        nxt = bdf2_step(u, u, 0.1, grid, assemble_C(grid))
        assert nxt.values[0] == pytest.approx(0.461158, abs=1e-6)

    def test_bdf2_second_order_on_frozen_coefficients(self):
        """Test the BDF2 error ratio between dt and dt/2 is about 4 with G frozen at I."""
        grid = make_grid(15)
        C = assemble_C(grid)
        frozen = assemble_G(zero_state(grid))
        u0 = sample_initial(smooth, grid)
        final_time = 0.05

        def run(dt, scheme):
            steps = int(round(final_time / dt))
            prev, cur = None, u0
            for _ in range(steps):
                if scheme == "bdf2" and prev is not None:
                    nxt = bdf2_step(cur, prev, dt, grid, C, frozen_G=frozen)
                else:
                    nxt = euler_step(cur, dt, grid, C, frozen_G=frozen)
                prev, cur = cur, nxt
            return cur.values

        reference = run(final_time / 4000, "bdf2")
        e1 = np.max(np.abs(run(final_time / 50, "bdf2") - reference))
        e2 = np.max(np.abs(run(final_time / 100, "bdf2") - reference))
        assert 3.0 < e1 / e2 < 5.0

    def test_evolve_zero_trajectory(self):
        """Test every recorded state stays zero."""
        grid = make_grid(7)
        config = SchemeConfig(Scheme.BDF2, make_time_grid(0.01, 10), monitor_stride=2)
        traj = evolve(zero_state(grid), config, grid)
        assert traj.times == pytest.approx([0.0, 0.002, 0.004, 0.006, 0.008, 0.01])
        assert all(norm_inf(s) == 0.0 for s in traj.states)
        assert traj.steps_taken == 10 and not traj.diverged

    def test_evolve_records_final_step_off_stride(self):
        """Test n = M is recorded even when M is not a multiple of the stride."""
        grid = make_grid(3)
        config = SchemeConfig(Scheme.EULER_SI, make_time_grid(0.07, 7), monitor_stride=3)
        traj = evolve(sample_initial(smooth, grid), config, grid)
        assert len(traj.times) == 4
        assert traj.times[-1] == pytest.approx(0.07)

    def test_stride_larger_than_steps_rejected(self):
        """Test an oversized monitor stride is a parameter error."""
        with pytest.raises(ParameterError):
            SchemeConfig(Scheme.EULER_SI, make_time_grid(0.1, 5), monitor_stride=6)

    def test_initial_state_grid_mismatch(self):
        """Test evolving a state that lives on another grid."""
        config = SchemeConfig(Scheme.EULER_SI, make_time_grid(0.1, 5))
        with pytest.raises(ParameterError):
            evolve(zero_state(make_grid(3)), config, make_grid(4))

    def test_max_norm_nonincreasing_smooth(self):
        """Test the max norm never grows for pi(1-x)x on N=15, dt=1e-3."""
        grid = make_grid(15)
        sink = []
        config = SchemeConfig(Scheme.EULER_SI, time_grid_from_step(0.1, 1e-3))
        evolve(sample_initial(smooth, grid), config, grid, monitors=[max_norm_monitor(sink)])
        assert len(sink) == 101
        assert is_nonincreasing(sink)
        assert sink[-1] < sink[0]

    @pytest.mark.parametrize("n", [1, 15, 99])
    @pytest.mark.parametrize("dt", [1e-2, 1e-4])
    def test_max_norm_stability_random_states(self, n, dt):
        """Test max-norm monotonicity from random states bounded by pi/2."""
        rng = np.random.default_rng(n * 1000 + int(1 / dt))
        grid = make_grid(n)
        for _ in range(5):
            u0 = StateVector(rng.uniform(-math.pi / 2, math.pi / 2, n), grid)
            sink = []
            config = SchemeConfig(Scheme.EULER_SI, make_time_grid(50 * dt, 50))
            evolve(u0, config, grid, monitors=[max_norm_monitor(sink)])
            assert is_nonincreasing(sink, ulps=2)

    def test_pivot_failure_marks_divergence(self):
        """Test a solver breakdown ends the run as diverged instead of raising."""
        grid = make_grid(3)
        config = SchemeConfig(Scheme.EULER_SI, make_time_grid(0.01, 4))
        with patch("radial_hmhf.stepper.thomas_solve_values", side_effect=SingularPivotError(2, 0.0, 1e-14)):
            traj = evolve(sample_initial(smooth, grid), config, grid)
        assert traj.diverged
        assert "row 2" in traj.divergence_reason
        assert traj.steps_taken == 0

    def test_divergence_guard(self):
        """Test the max-norm guard stops the run and records the bad state."""
        grid = make_grid(2)
        config = SchemeConfig(Scheme.EULER_SI, make_time_grid(0.01, 5))
        with patch("radial_hmhf.stepper.thomas_solve_values", return_value=np.array([1e13, 0.0])):
            traj = evolve(zero_state(grid), config, grid)
        assert traj.diverged
        assert traj.steps_taken == 1
        assert "1e+12" in traj.divergence_reason

    @pytest.mark.parametrize("scheme", [Scheme.EULER_SI, Scheme.BDF2])
    def test_evolve_is_deterministic(self, scheme):
        """Test two identical runs give bit-identical trajectories."""
        grid = make_grid(31)
        config = SchemeConfig(scheme, time_grid_from_step(0.05, 1e-3), monitor_stride=5)
        first = evolve(sample_initial(smooth, grid), config, grid)
        second = evolve(sample_initial(smooth, grid), config, grid)
        assert first.times == second.times
        assert len(first.states) == len(second.states) == 11
        for a, b in zip(first.states, second.states):
            np.testing.assert_array_equal(a.values, b.values)

    @pytest.mark.parametrize("factor", [0.5, 2.0, -3.0])
    def test_step_is_linear_with_frozen_coefficients(self, factor):
        """Test scaling u^n by c scales both step outputs by c when G is frozen from u^n."""
        grid = make_grid(15)
        C = assemble_C(grid)
        u = sample_initial(smooth, grid)
        u_prev = sample_initial(lambda x: 1.1 * smooth(x), grid)
        frozen = assemble_G(u)
        base = euler_step(u, 1e-3, grid, C, frozen_G=frozen)
        scaled = euler_step(u * factor, 1e-3, grid, C, frozen_G=frozen)
        np.testing.assert_allclose(scaled.values, factor * base.values, rtol=1e-13, atol=0.0)
        base2 = bdf2_step(u, u_prev, 1e-3, grid, C, frozen_G=frozen)
        scaled2 = bdf2_step(u * factor, u_prev * factor, 1e-3, grid, C, frozen_G=frozen)
        np.testing.assert_allclose(scaled2.values, factor * base2.values, rtol=1e-12, atol=0.0)

    @pytest.mark.parametrize("alpha", [0.25, 0.5])
    def test_weighted_norm_nonincreasing_below_c_alpha(self, alpha):
        """Test ||D^-alpha u^n||_inf never grows when ||u^0||_inf <= c_alpha."""
        limit = c_alpha(alpha)
        grid = make_grid(31)
        u0 = sample_initial(lambda x: 4.0 * limit * (1.0 - x) * x, grid)
        assert norm_inf(u0) <= limit
        for dt in (1e-2, 1e-4):
            config = SchemeConfig(Scheme.EULER_SI, make_time_grid(50 * dt, 50))
            traj = evolve(u0, config, grid)
            trace = weighted_trace(traj, alpha)
            assert len(trace) == 51
            assert is_nonincreasing(trace, ulps=2)
            assert trace[-1] < trace[0]

    def test_is_nonincreasing_tolerance(self):
        """Test the ulp slack of the monotonicity check."""
        assert is_nonincreasing([1.0, 1.0, 0.5])
        assert is_nonincreasing([1.0, 1.0 + math.ulp(1.0)])
        assert not is_nonincreasing([1.0, 1.0 + 1e-10])


# ===== DIAGNOSTICS =====

class TestDiagnostics:
    """Test energy, weighted traces and the blow-up indicator."""

    def test_energy_of_zero(self):
        """Test E_h(0) = 0."""
        grid = make_grid(5)
        assert discrete_energy(zero_state(grid), grid, assemble_C(grid)) == 0.0

    def test_energy_scalar(self):
        """Test E_h on N=1 at pi/4."""
        grid = make_grid(1)
        energy = discrete_energy(StateVector([math.pi / 4], grid), grid, assemble_C(grid))
        assert energy == pytest.approx(1.733701, abs=1e-6)

    def test_energy_matches_dense_quadratic_form(self):
        """Test E_h against h u^T (DC) u + h sum sin^2(u_i)/x_i on random states."""
        rng = np.random.default_rng(3)
        grid = make_grid(32)
        C = assemble_C(grid)
        DC = assemble_D(grid).to_dense() @ C.to_dense()
        for _ in range(10):
            u = rng.uniform(-3.0, 3.0, 32)
            expected = grid.spacing * (u @ DC @ u + np.sum(np.sin(u) ** 2 / grid.nodes))
            value = discrete_energy(StateVector(u, grid), grid, C)
            assert value >= 0.0
            assert value == pytest.approx(expected, rel=1e-12)

    def test_energy_trace_smooth_run_dissipates(self):
        """Test energy decreases along a coarse smooth run."""
        grid = make_grid(31)
        C = assemble_C(grid)
        config = SchemeConfig(Scheme.EULER_SI, time_grid_from_step(0.05, 1e-4), monitor_stride=10)
        traj = evolve(sample_initial(smooth, grid), config, grid, C=C)
        trace = energy_trace(traj, grid, C)
        assert trace.dissipative
        assert trace.energies[-1] < trace.energies[0]

    @pytest.mark.parametrize("alpha", [0.0, 0.5, math.sqrt(2.0 / math.pi)])
    def test_energy_dissipates_below_step_limit(self, alpha):
        """Test no energy increase at any step when dt is below the dissipation step limit."""
        grid = make_grid(31)
        C = assemble_C(grid)
        u0 = sample_initial(smooth, grid)
        assert norm_inf(u0) <= min(math.pi / 4, c_alpha(alpha))
        params = stability_params(alpha, u0)
        dt = 1e-3
        assert dt <= dissipation_step_limit(params.d_alpha, grid.spacing, alpha)
        config = SchemeConfig(Scheme.EULER_SI, time_grid_from_step(0.05, dt))
        trace = energy_trace(evolve(u0, config, grid, C=C), grid, C)
        assert len(trace.energies) == 51
        assert trace.dissipative
        assert trace.violations == []

    def test_energy_trace_allowance(self):
        """Test the perturbed-dissipation allowance absorbs a small increase that is flagged without it."""
        grid = make_grid(15)
        C = assemble_C(grid)
        u0 = sample_initial(smooth, grid)
        traj = evolve(u0, SchemeConfig(Scheme.EULER_SI, make_time_grid(3e-3, 3)), grid, C=C)
        traj.states[-1] = traj.states[-2] * 1.0001
        alpha = 0.8
        dt = 1e-3
        allowance = dissipation_allowance(1.0, stability_params(alpha, u0).d_alpha, grid.spacing, dt, alpha)
        increase = discrete_energy(traj.states[-1], grid, C) - discrete_energy(traj.states[-2], grid, C)
        assert 0.0 < increase < allowance
        assert energy_trace(traj, grid, C).violations[0][0] == 3
        assert energy_trace(traj, grid, C, allowance=allowance).dissipative

    def test_energy_trace_flags_increase(self):
        """Test an artificial increase is reported as a violation."""
        grid = make_grid(3)
        C = assemble_C(grid)
        traj = evolve(zero_state(grid), SchemeConfig(Scheme.EULER_SI, make_time_grid(0.01, 1)), grid)
        traj.states[-1] = sample_initial(smooth, grid)
        trace = energy_trace(traj, grid, C)
        assert not trace.dissipative
        assert trace.violations[0][0] == 1

    def test_weighted_trace_zero(self):
        """Test the weighted trace of a zero run."""
        grid = make_grid(4)
        traj = evolve(zero_state(grid), SchemeConfig(Scheme.EULER_SI, make_time_grid(0.01, 3)), grid)
        assert weighted_trace(traj, 0.5) == [0.0, 0.0, 0.0, 0.0]

    def test_weighted_trace_smooth_nonincreasing(self):
        """Test ||D^-alpha u^n||_inf decreases for the smooth profile at alpha = sqrt(2/pi)."""
        grid = make_grid(63)
        config = SchemeConfig(Scheme.EULER_SI, time_grid_from_step(0.02, 1e-4), monitor_stride=5)
        traj = evolve(sample_initial(smooth, grid), config, grid)
        assert is_nonincreasing(weighted_trace(traj, math.sqrt(2.0 / math.pi)))

    def test_blowup_constant_trace(self):
        """Test a constant trace does not trigger."""
        report = blowup_indicator([2.0, 2.0, 2.0], [0.0, 0.1, 0.2])
        assert not report.triggered
        assert report.growth_ratio == 1.0
        assert report.steepest_rise_time is None

    def test_blowup_jump_triggers(self):
        """Test a jump above 50% triggers and locates the steepest interval."""
        report = blowup_indicator([1.0, 1.1, 2.0, 2.1], [0.0, 1.0, 2.0, 3.0])
        assert report.triggered
        assert report.steepest_rise_time == pytest.approx(1.5)
        assert report.max_relative_jump == pytest.approx(0.9 / 1.1)

    def test_blowup_ratio_triggers(self):
        """Test slow growth past the ratio threshold triggers."""
        values = [1.4 ** k for k in range(8)]
        report = blowup_indicator(values, list(range(8)))
        assert report.growth_ratio > 10.0
        assert report.triggered

    def test_blowup_rise_after_initial_relaxation(self):
        """Test a trace that dips for a few records and then grows counts as rising from its minimum."""
        values = [28.25, 28.22, 28.19, 28.18, 28.4, 40.0, 400.0, 2200.0]
        times = [k * 1e-3 for k in range(8)]
        report = blowup_indicator(values, times)
        assert report.triggered
        assert report.rise_onset_time == pytest.approx(3e-3)
        assert report.rising_after_onset
        assert report.steepest_rise_time == pytest.approx(5.5e-3)

    def test_blowup_late_drop_is_not_rising(self):
        """Test a decrease after the rise onset is reported."""
        report = blowup_indicator([2.0, 1.0, 3.0, 2.5, 4.0], [0.0, 1.0, 2.0, 3.0, 4.0])
        assert report.rise_onset_time == 1.0
        assert not report.rising_after_onset

    def test_blowup_monotone_growth_onset_at_start(self):
        """Test a trace growing from the first record has its onset at t=0."""
        report = blowup_indicator([1.0, 2.0, 4.0], [0.0, 0.5, 1.0])
        assert report.rise_onset_time == 0.0
        assert report.rising_after_onset

    def test_blowup_length_mismatch(self):
        """Test traces and times must have equal length."""
        with pytest.raises(ParameterError):
            blowup_indicator([1.0, 2.0], [0.0])

    def test_dissipation_step_limit(self):
        """Test (3/4) d^-2 h^(2(1-alpha))."""
        assert dissipation_step_limit(2.0, 0.01, 0.5) == pytest.approx(0.75 * 0.01 / 4.0)
        assert dissipation_step_limit(0.0, 0.01, 0.5) == math.inf
        with pytest.raises(ParameterError):
            dissipation_step_limit(1.0, 0.01, 1.0)

    def test_dissipation_allowance_domain(self):
        """Test the perturbed allowance needs alpha in (1/2, 1)."""
        assert dissipation_allowance(0.5, 1.0, 0.01, 1e-6, 0.8) > 0.0
        with pytest.raises(ParameterError):
            dissipation_allowance(0.5, 1.0, 0.01, 1e-6, 0.4)
