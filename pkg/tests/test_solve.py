import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.linalg import expm

from diffnash import games
from diffnash.calculus import game_form, game_jacobian
from diffnash.classify import classify_point
from diffnash.games import PolynomialCost, builtin_family, perturb
from diffnash.solve import (
    DegenerateStartError,
    NewtonOptions,
    continue_path,
    gradient_play,
    multi_start,
    newton_solve,
)


def cubic_incentive():
    """Incentive game with a small cubic term on each player's own cost."""
    base = builtin_family("incentive_game", a=1.0, tau=20.0)
    bumps = [PolynomialCost(((0.01, (3, 0)),)), PolynomialCost(((0.01, (0, 3)),))]
    return perturb(base, bumps, 1.0)


class TestNewton:
    def test_asym_converges_to_origin(self):
        game = builtin_family("betty_sue_asym", a=2.0)
        res = newton_solve(game, [1.0, 1.0])
        assert res.converged
        assert_allclose(res.point, [0.0, 0.0], atol=1e-10)
        assert res.report.verdict.is_nash and not res.report.verdict.degenerate

    def test_incentive_single_undamped_step(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        res = newton_solve(game, [0.0, 0.0])
        assert res.converged
        assert res.iterations == 1
        expected = np.linalg.solve([[2.0, -1.0], [-1.0, 2.0]], [20.0, 20.0])
        assert_allclose(res.point, expected, atol=1e-12)

    def test_perturbed_game_singular_jacobian(self):
        game = builtin_family("betty_sue_perturbed", epsilon=0.1)
        res = newton_solve(game, [1.3, -0.4])
        assert res.status == "singular_jacobian"
        assert not res.converged

    def test_quadratic_convergence_on_cubic_game(self):
        game = cubic_incentive()
        root = newton_solve(game, [20.0, 20.0]).point
        start = root + np.array([0.07, -0.0714])
        res = newton_solve(game, start)
        assert res.converged
        rs = res.residual_norms
        checked = 0
        for r, r_next in zip(rs, rs[1:]):
            if 1e-9 < r < 1e-2:
                assert r_next <= 1.0 * r**2
                checked += 1
        assert checked >= 1

    def test_options_validation(self):
        with pytest.raises(ValueError):
            NewtonOptions(damping=1.5)
        with pytest.raises(ValueError):
            NewtonOptions(max_iters=0)

    def test_respects_residual_tolerance(self):
        game = builtin_family("betty_sue_asym", a=2.0)
        res = newton_solve(game, [3.0, -1.0], NewtonOptions(residual_tol=1e-12))
        assert res.converged
        assert game_form(game, res.point).sup_norm <= 1e-12


class TestMultiStart:
    def test_asym_unique_root(self):
        game = builtin_family("betty_sue_asym", a=2.0)
        result = multi_start(game, (-5.0, 5.0), 64, seed=0)
        assert len(result.roots) == 1
        point, report = result.roots[0]
        assert_allclose(point, [0.0, 0.0], atol=1e-9)
        assert not report.verdict.degenerate
        assert result.failures == {}

    def test_incentive_unique_root(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        result = multi_start(game, (0.0, 40.0), 64, seed=1)
        assert len(result.roots) == 1
        assert_allclose(result.roots[0][0], [20.0, 20.0], atol=1e-9)

    def test_betty_sue_all_starts_fail_singular(self):
        result = multi_start(builtin_family("betty_sue"), (-5.0, 5.0), 64, seed=2)
        assert result.roots == []
        assert result.failures == {"singular_jacobian": 64}

    def test_deterministic_given_seed(self):
        game = builtin_family("betty_sue_asym", a=0.5)
        r1 = multi_start(game, (-5.0, 5.0), 32, seed=7)
        r2 = multi_start(game, (-5.0, 5.0), 32, seed=7)
        assert len(r1.roots) == len(r2.roots)
        for (p1, _), (p2, _) in zip(r1.roots, r2.roots):
            assert np.array_equal(p1, p2)

    def test_box_validation(self):
        game = builtin_family("betty_sue")
        with pytest.raises(ValueError):
            multi_start(game, (5.0, -5.0), 4)
        with pytest.raises(ValueError):
            multi_start(game, (-5.0, 5.0), 0)

    def test_per_coordinate_box(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        result = multi_start(game, [(10.0, 30.0), (15.0, 25.0)], 16, seed=0)
        assert len(result.roots) == 1


def linear_flow_oracle(J, u_star, u0, t):
    """Closed-form flow of du/dt = -J (u - u_star)."""
    return u_star + expm(-J * t) @ (np.asarray(u0, dtype=float) - u_star)


class TestGradientPlay:
    @pytest.mark.parametrize("integrator", ["rk4", "rk45"])
    def test_incentive_contracts_to_target(self, integrator):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        traj = gradient_play(
            game, [0.0, 0.0], t_max=25.0, integrator=integrator, dt=0.01
        )
        assert traj.status == "converged"
        assert np.linalg.norm(traj.final_point - [20.0, 20.0]) < 1e-6
        J = np.array([[2.0, -1.0], [-1.0, 2.0]])
        u_star = np.array([20.0, 20.0])
        for idx in range(0, len(traj.times), max(1, len(traj.times) // 7)):
            expected = linear_flow_oracle(J, u_star, [0.0, 0.0], traj.times[idx])
            assert_allclose(traj.points[idx], expected, rtol=1e-6, atol=1e-6)

    def test_betty_sue_projects_onto_diagonal(self):
        game = builtin_family("betty_sue")
        traj = gradient_play(game, [1.0, 0.0], t_max=20.0)
        assert traj.status == "converged"
        assert np.linalg.norm(traj.final_point - [0.5, 0.5]) < 1e-6
        J = np.array([[1.0, -1.0], [-1.0, 1.0]])
        for idx in range(0, len(traj.times), max(1, len(traj.times) // 5)):
            expected = linear_flow_oracle(J, np.zeros(2), [1.0, 0.0], traj.times[idx])
            assert_allclose(traj.points[idx], expected, rtol=1e-6, atol=1e-6)

    def test_saddle_diverges_along_unstable_direction(self):
        game = builtin_family("incentive_game", a=-0.5, tau=0.0)
        traj = gradient_play(
            game, [0.01, 0.01], t_max=30.0, norm_bound=1e3, integrator="rk45"
        )
        assert traj.status == "diverged"
        assert np.max(np.abs(traj.final_point)) >= 0.99e3

    def test_already_converged_start(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        traj = gradient_play(game, [20.0, 20.0], t_max=5.0)
        assert traj.status == "converged"
        assert len(traj.times) == 1

    def test_times_strictly_increasing_and_finite(self):
        game = builtin_family("betty_sue")
        traj = gradient_play(game, [2.0, -1.0], t_max=3.0, integrator="rk4", dt=0.05)
        assert np.all(np.diff(traj.times) > 0)
        assert np.all(np.isfinite(traj.omega_norms))

    def test_flow_matches_finite_difference_velocity(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        dt = 0.01
        traj = gradient_play(
            game, [0.0, 0.0], t_max=2.0, integrator="rk4", dt=dt, tol_stop=1e-14
        )
        pts, ts = traj.points, traj.times
        worst = 0.0
        for k in range(1, len(ts) - 1):
            fd_vel = (pts[k + 1] - pts[k - 1]) / (ts[k + 1] - ts[k - 1])
            resid = fd_vel + game_form(game, pts[k]).stacked
            scale = max(1.0, np.max(np.abs(fd_vel)))
            worst = max(worst, np.max(np.abs(resid)) / scale)
        # central-difference truncation of the recorded flow is O(dt^2)
        assert worst < 10.0 * dt**2

    def test_stable_equilibria_attract(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        u_star = np.array([20.0, 20.0])
        assert classify_point(game, u_star).verdict.flow_stability == "stable"
        rng = np.random.default_rng(11)
        for _ in range(10):
            d = rng.standard_normal(2)
            d *= 0.05 * rng.random() / np.linalg.norm(d)
            traj = gradient_play(game, u_star + d, t_max=30.0)
            assert traj.status == "converged"
            assert np.linalg.norm(traj.final_point - u_star) < 1e-6

    def test_input_validation(self):
        game = builtin_family("betty_sue")
        with pytest.raises(ValueError):
            gradient_play(game, [0.0, 0.0], t_max=-1.0)
        with pytest.raises(ValueError):
            gradient_play(game, [0.0, 0.0], t_max=1.0, integrator="euler")


LINEAR_ZETAS = [PolynomialCost(((1.0, (1, 0)),)), PolynomialCost(((1.0, (0, 1)),))]
ZERO_ZETAS = [PolynomialCost(((0.0, (0, 0)),)), PolynomialCost(((0.0, (0, 0)),))]


class TestContinuation:
    def test_linear_perturbation_tracks_affine_solution(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        path = continue_path(game, LINEAR_ZETAS, (0.0, 1.0), [20.0, 20.0], 0.1)
        assert path.status == "complete"
        assert_allclose(path.s_values, np.linspace(0.0, 1.0, 11), atol=1e-12)
        J = np.array([[2.0, -1.0], [-1.0, 2.0]])
        for s, point, rep in zip(path.s_values, path.points, path.reports):
            expected = np.linalg.solve(J, [20.0 - s, 20.0 - s])
            assert_allclose(point, expected, atol=1e-8)
            assert rep.verdict.is_nash and not rep.verdict.degenerate
            perturbed = perturb(game, LINEAR_ZETAS, s)
            assert game_form(perturbed, point).sup_norm <= 1e-10

    def test_zero_perturbation_constant_path(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        path = continue_path(game, ZERO_ZETAS, (0.0, 1.0), [20.0, 20.0], 0.1)
        assert path.status == "complete"
        for point in path.points:
            assert_allclose(point, [20.0, 20.0], atol=1e-10)

    def test_degenerate_start_refused(self):
        game = builtin_family("betty_sue")
        with pytest.raises(DegenerateStartError):
            continue_path(game, LINEAR_ZETAS, (0.0, 1.0), [0.0, 0.0], 0.1)

    def test_secant_converges_to_tangent_first_order(self):
        game = cubic_incentive()
        root = newton_solve(game, [20.0, 20.0]).point

        def path_with(ds):
            return continue_path(game, LINEAR_ZETAS, (0.0, 1.0), root, ds)

        # symmetric root: coordinates solve 0.03 t^2 + t - 20 + s = 0, so the
        # exact tangent component at s is -1 / (1 + 0.06 t(s))
        coarse, fine = path_with(0.2), path_with(0.1)
        assert coarse.status == fine.status == "complete"
        s_check = 0.4
        idx_c = np.argmin(np.abs(coarse.s_values - s_check))
        idx_f = np.argmin(np.abs(fine.s_values - s_check))
        t_here = coarse.points[idx_c][0]
        tangent = -1.0 / (1.0 + 0.06 * t_here)
        sec_c = (coarse.points[idx_c + 1][0] - coarse.points[idx_c][0]) / 0.2
        sec_f = (fine.points[idx_f + 1][0] - fine.points[idx_f][0]) / 0.1
        e_c, e_f = abs(sec_c - tangent), abs(sec_f - tangent)
        assert e_f <= 0.65 * e_c

    def test_path_points_classified_nondegenerate(self):
        game = cubic_incentive()
        root = newton_solve(game, [20.0, 20.0]).point
        path = continue_path(game, LINEAR_ZETAS, (0.0, 0.5), root, 0.1)
        assert path.status == "complete"
        for rep in path.reports:
            assert rep.verdict.code == "nash_nondeg_stable"

    def test_range_validation(self):
        game = builtin_family("incentive_game", a=1.0, tau=20.0)
        with pytest.raises(ValueError):
            continue_path(game, LINEAR_ZETAS, (1.0, 0.0), [20.0, 20.0], 0.1)
        with pytest.raises(ValueError):
            continue_path(game, LINEAR_ZETAS, (0.0, 1.0), [20.0, 20.0], -0.1)
