import io
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from diffnash import olgames as ol
from diffnash.classify import DimensionGuardError
from diffnash.games import (
    GameConfigError,
    NonFiniteError,
    PolynomialCost,
    QuadraticCost,
    builtin_family,
)

from oracles import (
    block_relative_error,
    fd_rollout_gradient,
    random_controls,
    random_polynomial_olg,
)


def shared_target(steps, theta=1.0):
    """d=1, rate u1+u2, both players pay 0.5*(x(T)-theta)^2."""
    term = ol.quadratic_terminal([[1.0]], [theta])
    return ol.OpenLoopGame(
        state_dim=1,
        horizon=1.0,
        steps=steps,
        x0=[0.0],
        dynamics=ol.LinearDynamics(A=[[0.0]], B=([[1.0]], [[1.0]])),
        control_dims=(1, 1),
        terminal_costs=(term, term),
    )


def leaky(steps):
    """d=1, rate -x + u1 + u2, distinct quadratic terminal costs."""
    return ol.OpenLoopGame(
        state_dim=1,
        horizon=1.0,
        steps=steps,
        x0=[1.0],
        dynamics=ol.LinearDynamics(A=[[-1.0]], B=([[1.0]], [[1.0]])),
        control_dims=(1, 1),
        terminal_costs=(
            ol.quadratic_terminal([[1.0]], [0.5]),
            ol.quadratic_terminal([[2.0]], [-0.25]),
        ),
    )


def regularized_shared_target(steps, rho, theta=1.0):
    """Shared-target game plus per-player integrators of 0.5*rho*u_i^2."""
    comps = (
        PolynomialCost(((1.0, (0, 0, 0, 1, 0)), (1.0, (0, 0, 0, 0, 1)))),
        PolynomialCost(((0.5 * rho, (0, 0, 0, 2, 0)),)),
        PolynomialCost(((0.5 * rho, (0, 0, 0, 0, 2)),)),
    )
    dyn = ol.PolynomialDynamics(components=comps, state_dim=3, control_dims=(1, 1))

    def term(i):
        A = np.zeros((3, 3))
        A[0, 0] = 1.0
        b = np.zeros(3)
        b[0] = -theta
        b[1 + i] = 1.0
        return QuadraticCost(A=A, b=b, c=0.5 * theta**2)

    return ol.OpenLoopGame(
        state_dim=3,
        horizon=1.0,
        steps=steps,
        x0=[0.0, 0.0, 0.0],
        dynamics=dyn,
        control_dims=(1, 1),
        terminal_costs=(term(0), term(1)),
    )


def constant_profile(olg, values):
    return [np.full((olg.steps, k), v) for v, k in zip(values, olg.control_dims)]


class TestSimulateState:
    def test_constant_integrand_exact(self):
        olg = shared_target(100)
        traj = ol.simulate_state(olg, constant_profile(olg, (0.5, 0.5)))
        assert traj.terminal[0] == pytest.approx(1.0, abs=1e-12)

    def test_linear_decay_closed_form(self):
        olg = ol.OpenLoopGame(
            state_dim=1,
            horizon=1.0,
            steps=200,
            x0=[1.0],
            dynamics=ol.LinearDynamics(A=[[-1.0]], B=([[0.0]], [[0.0]])),
            control_dims=(1, 1),
            terminal_costs=(ol.quadratic_terminal([[1.0]], [0.0]),) * 2,
        )
        traj = ol.simulate_state(olg, ol.zero_profile(olg))
        assert traj.terminal[0] == pytest.approx(math.exp(-1.0), abs=1e-8)

    def test_rk4_order_from_doubling(self):
        errs = []
        for steps in (25, 50, 100):
            traj = ol.simulate_state(leaky(steps), ol.zero_profile(leaky(steps)))
            errs.append(abs(traj.terminal[0] - math.exp(-1.0)))
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert min(orders) >= 3.7

    def test_nonfinite_state_raises(self):
        comps = (PolynomialCost(((1.0, (2, 0, 0)),)),)  # rate = x^2, blows up
        dyn = ol.PolynomialDynamics(components=comps, state_dim=1, control_dims=(1, 1))
        olg = ol.OpenLoopGame(
            state_dim=1,
            horizon=1.0,
            steps=50,
            x0=[5.0],
            dynamics=dyn,
            control_dims=(1, 1),
            terminal_costs=(ol.quadratic_terminal([[1.0]], [0.0]),) * 2,
        )
        with pytest.raises(NonFiniteError):
            ol.simulate_state(olg, ol.zero_profile(olg))

    def test_profile_shape_validation(self):
        olg = shared_target(10)
        with pytest.raises(ValueError):
            ol.simulate_state(olg, [np.zeros((9, 1)), np.zeros((10, 1))])


class TestSimulateCostate:
    def test_constant_when_state_decoupled(self):
        olg = shared_target(50)
        controls = ol.zero_profile(olg)
        traj = ol.simulate_state(olg, controls)
        costate = ol.simulate_costate(olg, 0, traj, controls)
        assert_allclose(costate.costates, -1.0 * np.ones((51, 1)))

    def test_exponential_closed_form(self):
        olg = leaky(200)
        controls = ol.zero_profile(olg)
        traj = ol.simulate_state(olg, controls)
        costate = ol.simulate_costate(olg, 0, traj, controls)
        pT = costate.costates[-1][0]
        # dp/dt = p backward from T, so p(t) = p(T) e^{t-T}
        assert costate.costates[0][0] == pytest.approx(pT * math.exp(-1.0), abs=1e-8)

    def test_costate_rk4_order(self):
        errs = []
        for steps in (25, 50, 100):
            olg = leaky(steps)
            controls = ol.zero_profile(olg)
            traj = ol.simulate_state(olg, controls)
            costate = ol.simulate_costate(olg, 0, traj, controls)
            pT = costate.costates[-1][0]
            errs.append(abs(costate.costates[0][0] - pT * math.exp(-1.0)))
        orders = [math.log2(a / b) for a, b in zip(errs, errs[1:])]
        assert min(orders) >= 3.7

    def test_vanishes_when_terminal_state_on_target(self):
        olg = shared_target(100, theta=1.0)
        controls = constant_profile(olg, (0.5, 0.5))
        traj = ol.simulate_state(olg, controls)
        for i in range(2):
            costate = ol.simulate_costate(olg, i, traj, controls)
            assert np.max(np.abs(costate.costates)) <= 1e-12


class TestControlGradient:
    def test_constant_gradient_value(self):
        olg = shared_target(20, theta=1.0)
        g = ol.control_gradient(olg, 0, ol.zero_profile(olg))
        assert_allclose(g, -1.0 * np.ones((20, 1)), atol=1e-13)

    def test_zero_for_constant_terminal_cost(self):
        olg = ol.OpenLoopGame(
            state_dim=1,
            horizon=1.0,
            steps=20,
            x0=[0.0],
            dynamics=ol.LinearDynamics(A=[[0.0]], B=([[1.0]], [[1.0]])),
            control_dims=(1, 1),
            terminal_costs=(QuadraticCost(A=[[0.0]], b=[0.0], c=3.0),) * 2,
        )
        g = ol.control_gradient(olg, 0, constant_profile(olg, (0.3, -0.7)))
        assert np.max(np.abs(g)) == 0.0

    def test_matches_fd_of_rollout_linear(self):
        olg = leaky(50)
        controls = random_controls(olg, seed=0, scale=0.5)
        for i in range(2):
            adj = ol.control_gradient(olg, i, controls)
            entries = [(k, 0) for k in range(olg.steps)]
            fd = fd_rollout_gradient(olg, i, controls, entries, h=1e-6)
            assert block_relative_error(adj, fd) <= 1e-4


class TestGameForm:
    def test_continuum_of_critical_profiles(self):
        olg = shared_target(40, theta=1.0)
        # any split of the integral budget theta - x0 is critical
        controls = [np.full((40, 1), 0.8), np.full((40, 1), 0.2)]
        gf = ol.ol_game_form(olg, controls)
        assert gf.sup_norm <= 1e-13

    def test_unit_gradient_when_overshooting_by_one(self):
        olg = shared_target(40, theta=1.0)
        controls = constant_profile(olg, (1.0, 1.0))  # x(T) = 2 = theta + 1
        gf = ol.ol_game_form(olg, controls)
        for block in gf.blocks:
            assert_allclose(block, np.ones((40, 1)), atol=1e-12)

    def test_single_player_reduction(self):
        olg = ol.OpenLoopGame(
            state_dim=1,
            horizon=1.0,
            steps=25,
            x0=[0.0],
            dynamics=ol.LinearDynamics(A=[[0.0]], B=([[1.0]],)),
            control_dims=(1,),
            terminal_costs=(ol.quadratic_terminal([[1.0]], [1.0]),),
        )
        controls = random_controls(olg, seed=4, scale=0.4)
        gf = ol.ol_game_form(olg, controls)
        fd = fd_rollout_gradient(olg, 0, controls, [(k, 0) for k in range(25)])
        assert block_relative_error(gf.blocks[0], fd) <= 1e-6

    def test_static_game_reduction(self):
        # pure control integrators: terminal state is the quadrature-weighted
        # control sum and every interval row equals the static own-gradient
        static = builtin_family("betty_sue")
        olg = ol.OpenLoopGame(
            state_dim=2,
            horizon=1.0,
            steps=16,
            x0=[0.0, 0.0],
            dynamics=ol.LinearDynamics(
                A=np.zeros((2, 2)), B=(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))
            ),
            control_dims=(1, 1),
            terminal_costs=(static.costs[0], static.costs[1]),
        )
        controls = random_controls(olg, seed=9, scale=1.0)
        v = ol.simulate_state(olg, controls).terminal
        gf = ol.ol_game_form(olg, controls)
        from diffnash.calculus import game_form

        static_blocks = game_form(static, v).blocks
        for i in range(2):
            expected = np.tile(static_blocks[i], (16, 1))
            assert_allclose(gf.blocks[i], expected, rtol=1e-10, atol=1e-12)


class TestGradientPlay:
    def test_converges_on_shared_target(self):
        olg = shared_target(20, theta=1.0)
        result = ol.ol_gradient_play(olg, ol.zero_profile(olg), 0.1, max_iters=500)
        assert result.status == "converged"
        assert result.sup_norms[-1] < 1e-8
        xT = ol.simulate_state(olg, result.profile).terminal[0]
        assert xT == pytest.approx(1.0, abs=1e-7)

    def test_critical_start_is_fixed_point(self):
        olg = shared_target(20, theta=1.0)
        start = constant_profile(olg, (0.5, 0.5))
        result = ol.ol_gradient_play(olg, start, 0.1, max_iters=50)
        assert result.status == "converged"
        assert result.iterations == 0
        for c0, c1 in zip(start, result.profile):
            assert np.array_equal(c0, c1)

    def test_oversized_step_reported_nonconvergent(self):
        olg = shared_target(20, theta=1.0)
        result = ol.ol_gradient_play(olg, ol.zero_profile(olg), 1e3, max_iters=5)
        assert result.status == "max_iters"
        assert result.sup_norms[-1] > 10.0 * result.sup_norms[0]

    def test_step_validation(self):
        olg = shared_target(5)
        with pytest.raises(ValueError):
            ol.ol_gradient_play(olg, ol.zero_profile(olg), -0.1)


class TestOLClassify:
    def test_continuum_profile_rank_one(self):
        olg = shared_target(10, theta=1.0)
        rep = ol.ol_classify(olg, constant_profile(olg, (0.5, 0.5)))
        sv = rep.jacobian_singular_values
        assert sv[1] < 1e-10 * sv[0]
        assert rep.jacobian_degenerate is True
        # own-block curvature has flat directions, so sufficiency cannot hold
        assert rep.verdict.kind == "necessary_only"
        kernel = int(np.sum(sv <= 1e-10 * sv[0]))
        assert kernel == 2 * 10 - 1

    def test_regularized_profile_nondegenerate(self):
        olg = regularized_shared_target(10, rho=0.1)
        play = ol.ol_gradient_play(olg, ol.zero_profile(olg), 0.3, max_iters=2000, tol=1e-11)
        assert play.status == "converged"
        rep = ol.ol_classify(olg, play.profile)
        assert rep.verdict.code == "nash_nondeg_stable"
        # curvature is dt * (all-ones) + rho * identity, so the spectrum edges
        # are 2N*dt + rho and rho
        assert rep.jacobian_singular_values[0] == pytest.approx(
            20 * olg.dt + 0.1, abs=1e-6
        )
        assert rep.jacobian_singular_values[-1] == pytest.approx(0.1, abs=1e-6)

    def test_single_player_convex_problem(self):
        comps = (
            PolynomialCost(((1.0, (0, 0, 1)),)),
            PolynomialCost(((0.05, (0, 0, 2)),)),
        )
        dyn = ol.PolynomialDynamics(components=comps, state_dim=2, control_dims=(1,))
        A = np.zeros((2, 2))
        A[0, 0] = 1.0
        term = QuadraticCost(A=A, b=np.array([-1.0, 1.0]), c=0.5)
        olg = ol.OpenLoopGame(
            state_dim=2,
            horizon=1.0,
            steps=10,
            x0=[0.0, 0.0],
            dynamics=dyn,
            control_dims=(1,),
            terminal_costs=(term,),
        )
        play = ol.ol_gradient_play(olg, ol.zero_profile(olg), 0.3, max_iters=2000, tol=1e-11)
        assert play.status == "converged"
        rep = ol.ol_classify(olg, play.profile)
        assert rep.verdict.code == "nash_nondeg_stable"

    def test_dimension_guard(self):
        olg = shared_target(250)
        with pytest.raises(DimensionGuardError):
            ol.ol_classify(olg, ol.zero_profile(olg))


class TestAdjointAccuracyRandomGames:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_rollout_fd_two_resolutions(self, seed):
        # full own-block check at N=50, seeded 20-entry subsample at N=200
        for steps, n_sample, tol in ((50, None, 1e-4), (200, 20, 1e-5)):
            olg = random_polynomial_olg(seed, steps)
            controls = random_controls(olg, seed=100 + seed)
            gf = ol.ol_game_form(olg, controls)
            rng = np.random.default_rng(100 + seed)
            for i in range(2):
                if n_sample is None:
                    entries = [(k, 0) for k in range(steps)]
                else:
                    picks = rng.choice(steps, n_sample, replace=False)
                    entries = [(int(k), 0) for k in sorted(picks)]
                fd = fd_rollout_gradient(olg, i, controls, entries)
                assert block_relative_error(gf.blocks[i], fd) <= tol


class TestConfigAndProfiles:
    def olg_doc(self):
        return {
            "state_dim": 1,
            "horizon": 1.0,
            "steps": 20,
            "x0": [1.0],
            "control_dims": [1, 1],
            "dynamics": {"linear": {"A": [[-1.0]], "B": [[[1.0]], [[1.0]]]}},
            "terminal_costs": [
                {"quadratic": {"Q": [[1.0]], "target": [0.5]}},
                {"quadratic": {"Q": [[2.0]], "target": [-0.25]}},
            ],
        }

    def test_config_round_trip(self):
        olg = ol.load_olgame(json.dumps(self.olg_doc()))
        ref = leaky(20)
        controls = random_controls(olg, seed=3)
        t1 = ol.simulate_state(olg, controls).terminal
        t2 = ol.simulate_state(ref, controls).terminal
        assert_allclose(t1, t2)

    def test_config_missing_key(self):
        doc = self.olg_doc()
        del doc["dynamics"]
        with pytest.raises(GameConfigError, match="dynamics"):
            ol.load_olgame(json.dumps(doc))

    def test_config_bad_matrix_shape(self):
        doc = self.olg_doc()
        doc["dynamics"]["linear"]["B"] = [[[1.0], [2.0]], [[1.0]]]
        with pytest.raises(GameConfigError):
            ol.load_olgame(json.dumps(doc))

    def test_profile_csv_round_trip(self):
        olg = leaky(20)
        controls = random_controls(olg, seed=8)
        buf = io.StringIO()
        ol.write_profile_csv(buf, olg, controls)
        back = ol.read_profile_csv(buf.getvalue(), olg)
        for c1, c2 in zip(controls, back):
            assert_allclose(c1, c2, rtol=0, atol=0)

    def test_profile_csv_header_checked(self):
        olg = leaky(20)
        with pytest.raises(GameConfigError, match="header"):
            ol.read_profile_csv("a,b,c\n1,2,3\n", olg)
