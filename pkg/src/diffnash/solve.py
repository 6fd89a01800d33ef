"""Finding and tracking equilibria.

Damped Newton iteration on the stacked own-gradient field (its linearization
is exactly the game's second-derivative matrix), low-discrepancy multi-start
search with deduplication, simultaneous gradient descent in continuous time
(fixed-step RK4 or adaptive RK45), and predictor-corrector tracking of a
non-degenerate equilibrium as player costs are perturbed along a
one-parameter family.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from .calculus import game_form, game_jacobian
from .classify import EquilibriumReport, Tolerances, classify_point
from .games import GameDefinition, NonFiniteError, perturb

__all__ = [
    "NewtonOptions",
    "NewtonResult",
    "newton_solve",
    "MultiStartResult",
    "multi_start",
    "FlowTrajectory",
    "gradient_play",
    "DegenerateStartError",
    "ContinuationPath",
    "continue_path",
    "DEDUP_RADIUS",
]

CONVERGED = "converged"
SINGULAR_JACOBIAN = "singular_jacobian"
MAX_ITERS = "max_iters"
NON_FINITE = "non_finite"

DEDUP_RADIUS = 1e-6


@dataclass(frozen=True)
class NewtonOptions:
    """Knobs for the damped Newton iteration.

    The step is accepted at the first backtracking length that decreases the
    residual sup-norm; ``singular_tol`` is the relative smallest-singular-value
    cutoff below which the linear solve is refused.
    """

    max_iters: int = 50
    residual_tol: float = 1e-10
    damping: float = 0.5
    max_halvings: int = 20
    singular_tol: float = 1e-12

    def __post_init__(self):
        if self.max_iters < 1 or self.max_halvings < 0:
            raise ValueError("iteration counts must be positive")
        if not (self.residual_tol > 0 and self.singular_tol > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")


@dataclass(eq=False)
class NewtonResult:
    status: str
    point: np.ndarray
    report: EquilibriumReport | None
    iterations: int
    residual_norms: list[float]

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


def newton_solve(
    game: GameDefinition,
    u0,
    options: NewtonOptions | None = None,
    method: str = "analytic",
    tolerances: Tolerances | None = None,
) -> NewtonResult:
    """Damped Newton iteration driving the stacked own-gradient to zero.

    Each step solves J(u) d = -g(u) with J the full second-derivative matrix,
    then backtracks until the residual decreases.  On success the solution is
    classified.  Failure statuses: ``singular_jacobian`` (relative smallest
    singular value below the cutoff — degeneracy, or no isolated root),
    ``max_iters``, ``non_finite``.
    """
    opts = options or NewtonOptions()
    u = game.point(u0)
    residuals: list[float] = []
    iterations = 0
    try:
        r = game_form(game, u, method).sup_norm
        residuals.append(r)
        for _ in range(opts.max_iters):
            if r <= opts.residual_tol:
                break
            J = game_jacobian(game, u, method).matrix
            svals = np.linalg.svd(J, compute_uv=False)
            if svals[-1] <= opts.singular_tol * max(svals[0], np.finfo(float).tiny):
                return NewtonResult(SINGULAR_JACOBIAN, u, None, iterations, residuals)
            delta = np.linalg.solve(J, -game_form(game, u, method).stacked)
            if not np.all(np.isfinite(delta)):
                return NewtonResult(NON_FINITE, u, None, iterations, residuals)
            step = 1.0
            accepted = False
            for _ in range(opts.max_halvings + 1):
                cand = u + step * delta
                if np.all(np.isfinite(cand)):
                    try:
                        r_new = game_form(game, cand, method).sup_norm
                    except NonFiniteError:
                        r_new = np.inf
                    if np.isfinite(r_new) and r_new < r:
                        accepted = True
                        break
                step *= opts.damping
            if not accepted:
                return NewtonResult(MAX_ITERS, u, None, iterations, residuals)
            u, r = cand, r_new
            iterations += 1
            residuals.append(r)
    except NonFiniteError:
        return NewtonResult(NON_FINITE, u, None, iterations, residuals)
    if r <= opts.residual_tol:
        report = classify_point(game, u, tolerances, method)
        return NewtonResult(CONVERGED, u, report, iterations, residuals)
    return NewtonResult(MAX_ITERS, u, None, iterations, residuals)


@dataclass(eq=False)
class MultiStartResult:
    roots: list[tuple[np.ndarray, EquilibriumReport]]
    failures: dict[str, int]
    n_starts: int

    @property
    def n_converged(self) -> int:
        return self.n_starts - sum(self.failures.values())


def _expand_box(box, m: int) -> np.ndarray:
    arr = np.asarray(box, dtype=float)
    if arr.shape == (2,):
        arr = np.tile(arr, (m, 1))
    if arr.shape != (m, 2):
        raise ValueError(f"box must be (lo, hi) or one interval per coordinate ({m})")
    if not np.all(np.isfinite(arr)) or not np.all(arr[:, 0] < arr[:, 1]):
        raise ValueError("box intervals must be finite with lo < hi")
    return arr


def multi_start(
    game: GameDefinition,
    box,
    k: int,
    seed: int = 0,
    options: NewtonOptions | None = None,
    method: str = "analytic",
    tolerances: Tolerances | None = None,
) -> MultiStartResult:
    """Newton from k scrambled-Halton samples in a box; distinct roots only.

    Converged points closer than ``DEDUP_RADIUS`` are merged; survivors are
    classified and sorted by residual norm, then lexicographically, so results
    do not depend on evaluation order.  Per-start failures are tallied.
    """
    if k < 1:
        raise ValueError("sample count k must be at least 1")
    bounds = _expand_box(box, game.total_dim)
    sampler = qmc.Halton(d=game.total_dim, scramble=True, seed=seed)
    starts = qmc.scale(sampler.random(k), bounds[:, 0], bounds[:, 1])
    failures: dict[str, int] = {}
    converged: list[tuple[np.ndarray, EquilibriumReport]] = []
    for u0 in starts:
        res = newton_solve(game, u0, options, method, tolerances)
        if res.converged:
            converged.append((res.point, res.report))
        else:
            failures[res.status] = failures.get(res.status, 0) + 1
    converged.sort(key=lambda pr: (pr[1].omega_norm, tuple(pr[0])))
    roots: list[tuple[np.ndarray, EquilibriumReport]] = []
    for point, report in converged:
        if all(np.linalg.norm(point - kept) >= DEDUP_RADIUS for kept, _ in roots):
            roots.append((point, report))
    return MultiStartResult(roots=roots, failures=failures, n_starts=k)


@dataclass(eq=False)
class FlowTrajectory:
    """Sampled states of the simultaneous gradient flow."""

    times: np.ndarray
    points: np.ndarray
    omega_norms: np.ndarray
    status: str  # "converged" | "diverged" | "max_time"

    @property
    def final_point(self) -> np.ndarray:
        return self.points[-1]


def gradient_play(
    game: GameDefinition,
    u0,
    t_max: float,
    integrator: str = "rk45",
    dt: float = 0.01,
    rtol: float = 1e-8,
    atol: float = 1e-10,
    tol_stop: float = 1e-8,
    norm_bound: float = 1e6,
    method: str = "analytic",
) -> FlowTrajectory:
    """Integrate du/dt = -(stacked own-gradient), each player descending own cost.

    Stops early when the gradient sup-norm falls below ``tol_stop``
    (converged) or the state sup-norm exceeds ``norm_bound`` (diverged);
    otherwise runs to ``t_max``.  ``integrator`` is ``"rk4"`` (fixed step
    ``dt``, bitwise reproducible) or ``"rk45"`` (adaptive).
    """
    u = game.point(u0)
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    if integrator not in ("rk4", "rk45"):
        raise ValueError(f"unknown integrator {integrator!r}")

    def omega(vec: np.ndarray) -> np.ndarray:
        return game_form(game, vec, method).stacked

    w0 = omega(u)
    if np.max(np.abs(w0)) <= tol_stop:
        return FlowTrajectory(
            times=np.array([0.0]),
            points=u[None, :].copy(),
            omega_norms=np.array([np.max(np.abs(w0))]),
            status=CONVERGED,
        )

    if integrator == "rk4":
        times = [0.0]
        points = [u.copy()]
        status = "max_time"
        t = 0.0
        n_steps = int(np.ceil(t_max / dt))
        for _ in range(n_steps):
            h = min(dt, t_max - t)
            k1 = -omega(u)
            k2 = -omega(u + 0.5 * h * k1)
            k3 = -omega(u + 0.5 * h * k2)
            k4 = -omega(u + h * k3)
            u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(u)):
                raise NonFiniteError(
                    f"flow state became non-finite; last good time {times[-1]}",
                    point=points[-1],
                )
            times.append(t)
            points.append(u.copy())
            if np.max(np.abs(u)) >= norm_bound:
                status = "diverged"
                break
            if np.max(np.abs(omega(u))) <= tol_stop:
                status = CONVERGED
                break
        ts = np.array(times)
        ps = np.array(points)
    else:
        def rhs(_t, vec):
            return -omega(vec)

        def ev_converged(_t, vec):
            return np.max(np.abs(omega(vec))) - tol_stop

        def ev_diverged(_t, vec):
            return np.max(np.abs(vec)) - norm_bound

        ev_converged.terminal = True
        ev_converged.direction = -1
        ev_diverged.terminal = True
        ev_diverged.direction = 1
        sol = solve_ivp(
            rhs,
            (0.0, t_max),
            u,
            method="RK45",
            rtol=rtol,
            atol=atol,
            events=[ev_converged, ev_diverged],
        )
        if not sol.success and sol.status != 1:
            raise NonFiniteError(f"flow integration failed: {sol.message}", point=u)
        ts = sol.t
        ps = sol.y.T
        if sol.status == 1 and len(sol.t_events[1]):
            status = "diverged"
        elif sol.status == 1:
            status = CONVERGED
        else:
            status = "max_time"
    norms = np.array([np.max(np.abs(omega(p))) for p in ps])
    return FlowTrajectory(times=ts, points=ps, omega_norms=norms, status=status)


class DegenerateStartError(RuntimeError):
    """Continuation refused: the starting point is not a non-degenerate equilibrium."""


@dataclass(eq=False)
class ContinuationPath:
    """Tracked equilibrium branch under a one-parameter cost perturbation."""

    s_values: np.ndarray
    points: np.ndarray
    reports: list[EquilibriumReport]
    status: str  # "complete" | "fold_detected" | "lost_track"
    stopped_at: float | None = None


def continue_path(
    game: GameDefinition,
    zetas,
    s_range,
    u_star,
    ds: float,
    options: NewtonOptions | None = None,
    method: str = "analytic",
    tolerances: Tolerances | None = None,
    fold_tol: float = 1e-8,
) -> ContinuationPath:
    """Track an equilibrium of costs f_i + s*zeta_i across s in s_range.

    The start must classify as a non-degenerate equilibrium at s = s_min
    (otherwise the branch is not locally unique and tracking is refused).
    Each step predicts along the tangent obtained from J_s sigma' = -(stacked
    zeta own-gradients), then corrects with Newton on the perturbed game.  A
    relative smallest singular value of J_s below ``fold_tol`` stops the
    path with ``fold_detected``; a corrector failure or loss of the
    equilibrium character stops it with ``lost_track``.
    """
    opts = options or NewtonOptions()
    s_min, s_max = (float(s_range[0]), float(s_range[1]))
    if not (ds > 0 and s_max > s_min):
        raise ValueError("need ds > 0 and s_max > s_min")
    n_steps = max(1, int(round((s_max - s_min) / ds)))
    s_grid = np.linspace(s_min, s_max, n_steps + 1)

    zeta_game = GameDefinition(dims=game.dims, costs=tuple(zetas))

    def game_at(s: float) -> GameDefinition:
        return perturb(game, zetas, s)

    start = newton_solve(game_at(s_min), u_star, opts, method, tolerances)
    if not start.converged:
        raise DegenerateStartError(
            f"starting point failed to correct at s={s_min} ({start.status})"
        )
    report = start.report
    if not (report.verdict.is_nash and not report.verdict.degenerate):
        raise DegenerateStartError(
            "continuation requires a non-degenerate differential Nash start; "
            f"got {report.verdict.describe()!r}"
        )

    sigma = start.point
    s_done = [s_min]
    points = [sigma.copy()]
    reports = [report]
    status, stopped_at = "complete", None
    for s_next in s_grid[1:]:
        s_cur = s_done[-1]
        J = game_jacobian(game_at(s_cur), sigma, method).matrix
        dzeta = game_form(zeta_game, sigma, method).stacked
        tangent = np.linalg.solve(J, -dzeta)
        predicted = sigma + (s_next - s_cur) * tangent
        res = newton_solve(game_at(s_next), predicted, opts, method, tolerances)
        if not res.converged:
            status, stopped_at = "lost_track", float(s_next)
            break
        rep = res.report
        sv = rep.jacobian_singular_values
        if sv[-1] <= fold_tol * sv[0]:
            status, stopped_at = "fold_detected", float(s_next)
            break
        if not (rep.verdict.is_nash and not rep.verdict.degenerate):
            status, stopped_at = "lost_track", float(s_next)
            break
        sigma = res.point
        s_done.append(float(s_next))
        points.append(sigma.copy())
        reports.append(rep)
    return ContinuationPath(
        s_values=np.array(s_done),
        points=np.array(points),
        reports=reports,
        status=status,
        stopped_at=stopped_at,
    )
