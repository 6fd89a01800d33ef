"""Open-loop games over shared dynamics with terminal costs.

Players pick control signals on [0, T], discretized as piecewise-constant
values on a uniform grid.  Costs depend on the terminal state of the shared
ODE.  Per-player cost gradients come from one forward state integration plus
one backward multiplier integration per player: the multiplier row vector
p_i solves dp_i/dt = -p_i * dh/dx backward from p_i(T) = grad of player i's
terminal cost, and the gradient sample on an interval is p_i * dh/du_i at
the interval midpoint.  Gradients are reported per interval without the
quadrature weight T/N; the weight enters only when differentiating the
discrete rollout (finite differences of the rolled-out cost recover
weight * gradient).

Running costs are supported by state augmentation: add a state with
rate equal to the running integrand and add that state's terminal value to
the terminal cost.  Classification verdicts are for the discretized game at
the stated N; refinement behavior is not extrapolated.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .classify import (
    DimensionGuardError,
    EquilibriumReport,
    Tolerances,
    classify_from_derivatives,
)
from .games import GameConfigError, NonFiniteError, PolynomialCost, QuadraticCost, _require

__all__ = [
    "LinearDynamics",
    "PolynomialDynamics",
    "quadratic_terminal",
    "OpenLoopGame",
    "StateTrajectory",
    "CostateTrajectory",
    "OLGameForm",
    "OLPlayResult",
    "as_profile",
    "pack_profile",
    "unpack_profile",
    "simulate_state",
    "simulate_costate",
    "control_gradient",
    "ol_game_form",
    "ol_gradient_play",
    "ol_classify",
    "olgame_from_dict",
    "load_olgame",
    "load_olgame_file",
    "write_profile_csv",
    "read_profile_csv",
    "profile_csv_header",
]


@dataclass(frozen=True, eq=False)
class LinearDynamics:
    """dx/dt = A x + sum_i B_i u_i with exact partials."""

    A: np.ndarray
    B: tuple[np.ndarray, ...]

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        _require(A.ndim == 2 and A.shape[0] == A.shape[1], "dynamics A must be square")
        B = tuple(np.asarray(Bi, dtype=float) for Bi in self.B)
        for idx, Bi in enumerate(B):
            _require(
                Bi.ndim == 2 and Bi.shape[0] == A.shape[0],
                f"dynamics B[{idx}] must have {A.shape[0]} rows",
            )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    def __call__(self, x, controls) -> np.ndarray:
        out = self.A @ x
        for Bi, ui in zip(self.B, controls):
            out = out + Bi @ ui
        return out

    def d_x(self, x, controls) -> np.ndarray:
        return self.A

    def d_u(self, x, controls, i: int) -> np.ndarray:
        return self.B[i]


@dataclass(frozen=True, eq=False)
class PolynomialDynamics:
    """Each state rate a polynomial in the stacked vector (x, u_1, ..., u_n)."""

    components: tuple[PolynomialCost, ...]
    state_dim: int
    control_dims: tuple[int, ...]

    def __post_init__(self):
        comp = tuple(self.components)
        total = self.state_dim + sum(self.control_dims)
        _require(len(comp) == self.state_dim, "one polynomial per state component")
        for c in comp:
            _require(c.n_vars == total, f"dynamics polynomial arity {c.n_vars} != {total}")
        object.__setattr__(self, "components", comp)
        object.__setattr__(self, "control_dims", tuple(int(k) for k in self.control_dims))

    def _stack(self, x, controls) -> np.ndarray:
        return np.concatenate([np.asarray(x, dtype=float)] + [np.asarray(u) for u in controls])

    def __call__(self, x, controls) -> np.ndarray:
        z = self._stack(x, controls)
        return np.array([c(z) for c in self.components])

    def d_x(self, x, controls) -> np.ndarray:
        z = self._stack(x, controls)
        return np.array([c.grad(z)[: self.state_dim] for c in self.components])

    def d_u(self, x, controls, i: int) -> np.ndarray:
        z = self._stack(x, controls)
        off = self.state_dim + sum(self.control_dims[:i])
        sl = slice(off, off + self.control_dims[i])
        return np.array([c.grad(z)[sl] for c in self.components])


def quadratic_terminal(Q, target) -> QuadraticCost:
    """Terminal cost 0.5 (x - target)' Q (x - target) with analytic gradient."""
    Q = np.asarray(Q, dtype=float)
    target = np.asarray(target, dtype=float)
    return QuadraticCost(A=Q, b=-Q @ target, c=float(0.5 * target @ Q @ target))


@dataclass(frozen=True, eq=False)
class OpenLoopGame:
    """Shared-dynamics game: state ODE, uniform time grid, terminal costs.

    ``dynamics``: callable (x, [u_1, ..., u_n]) -> dx/dt, optionally with
    ``d_x``/``d_u`` partial evaluators (finite differences otherwise).
    ``terminal_costs[i]``: callable x -> float, optionally with ``grad``.
    Dynamics are assumed globally Lipschitz (documented contract, unchecked).
    """

    state_dim: int
    horizon: float
    steps: int
    x0: np.ndarray
    dynamics: Callable
    control_dims: tuple[int, ...]
    terminal_costs: tuple[Callable, ...]

    def __post_init__(self):
        _require(int(self.state_dim) >= 1, "state_dim must be positive")
        _require(float(self.horizon) > 0, "horizon must be positive")
        _require(int(self.steps) >= 1, "steps must be at least 1")
        object.__setattr__(self, "state_dim", int(self.state_dim))
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "steps", int(self.steps))
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        _require(
            x0.shape == (self.state_dim,) and bool(np.all(np.isfinite(x0))),
            f"x0 must be a finite vector of length {self.state_dim}",
        )
        object.__setattr__(self, "x0", x0)
        kdims = tuple(int(k) for k in self.control_dims)
        _require(all(k >= 1 for k in kdims), "control dimensions must be positive")
        object.__setattr__(self, "control_dims", kdims)
        tc = tuple(self.terminal_costs)
        _require(len(tc) == len(kdims), "one terminal cost per player")
        object.__setattr__(self, "terminal_costs", tc)

    @property
    def n_players(self) -> int:
        return len(self.control_dims)

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.steps + 1)

    @property
    def total_control_dim(self) -> int:
        return self.steps * sum(self.control_dims)


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    times: np.ndarray
    states: np.ndarray  # (N + 1, d)

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class CostateTrajectory:
    times: np.ndarray
    costates: np.ndarray  # (N + 1, d)
    player: int


def as_profile(olg: OpenLoopGame, controls) -> list[np.ndarray]:
    """Validate a per-player list of (N, k_i) control arrays."""
    if len(controls) != olg.n_players:
        raise ValueError(f"expected {olg.n_players} control arrays, got {len(controls)}")
    out = []
    for i, (arr, k) in enumerate(zip(controls, olg.control_dims)):
        a = np.asarray(arr, dtype=float)
        if a.ndim == 1 and k == 1:
            a = a[:, None]
        if a.shape != (olg.steps, k):
            raise ValueError(
                f"player {i} controls must have shape ({olg.steps}, {k}), got {a.shape}"
            )
        if not np.all(np.isfinite(a)):
            raise ValueError(f"player {i} controls contain non-finite entries")
        out.append(a.copy())
    return out


def zero_profile(olg: OpenLoopGame) -> list[np.ndarray]:
    return [np.zeros((olg.steps, k)) for k in olg.control_dims]


def pack_profile(olg: OpenLoopGame, controls) -> np.ndarray:
    return np.concatenate([c.ravel() for c in as_profile(olg, controls)])


def unpack_profile(olg: OpenLoopGame, flat: np.ndarray) -> list[np.ndarray]:
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (olg.total_control_dim,):
        raise ValueError(
            f"flat profile must have length {olg.total_control_dim}, got {flat.shape}"
        )
    out, off = [], 0
    for k in olg.control_dims:
        size = olg.steps * k
        out.append(flat[off : off + size].reshape(olg.steps, k))
        off += size
    return out


def _dyn_dx(olg: OpenLoopGame, x, controls_k) -> np.ndarray:
    dyn = olg.dynamics
    if hasattr(dyn, "d_x"):
        return np.asarray(dyn.d_x(x, controls_k), dtype=float)
    d = olg.state_dim
    J = np.empty((d, d))
    for j in range(d):
        h = max(1e-6, 1e-6 * abs(x[j]))
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        J[:, j] = (np.asarray(dyn(xp, controls_k)) - np.asarray(dyn(xm, controls_k))) / (2 * h)
    return J


def _dyn_du(olg: OpenLoopGame, x, controls_k, i: int) -> np.ndarray:
    dyn = olg.dynamics
    if hasattr(dyn, "d_u"):
        return np.asarray(dyn.d_u(x, controls_k, i), dtype=float)
    k = olg.control_dims[i]
    J = np.empty((olg.state_dim, k))
    for j in range(k):
        h = max(1e-6, 1e-6 * abs(controls_k[i][j]))
        up = [c.copy() for c in controls_k]
        um = [c.copy() for c in controls_k]
        up[i][j] += h
        um[i][j] -= h
        J[:, j] = (np.asarray(dyn(x, up)) - np.asarray(dyn(x, um))) / (2 * h)
    return J


def _terminal_grad(olg: OpenLoopGame, i: int, xT: np.ndarray) -> np.ndarray:
    cost = olg.terminal_costs[i]
    if hasattr(cost, "grad"):
        return np.asarray(cost.grad(xT), dtype=float)
    d = olg.state_dim
    g = np.empty(d)
    for j in range(d):
        h = max(1e-6, 1e-6 * abs(xT[j]))
        xp, xm = xT.copy(), xT.copy()
        xp[j] += h
        xm[j] -= h
        g[j] = (float(cost(xp)) - float(cost(xm))) / (2 * h)
    return g


def terminal_cost_value(olg: OpenLoopGame, i: int, controls) -> float:
    """Roll the state forward and evaluate player i's terminal cost."""
    traj = simulate_state(olg, controls)
    return float(olg.terminal_costs[i](traj.terminal))


def simulate_state(olg: OpenLoopGame, controls) -> StateTrajectory:
    """RK4 state integration with controls held constant on each interval."""
    controls = as_profile(olg, controls)
    dt = olg.dt
    x = olg.x0.copy()
    states = [x.copy()]
    dyn = olg.dynamics
    for k in range(olg.steps):
        uk = [c[k] for c in controls]
        k1 = np.asarray(dyn(x, uk), dtype=float)
        k2 = np.asarray(dyn(x + 0.5 * dt * k1, uk), dtype=float)
        k3 = np.asarray(dyn(x + 0.5 * dt * k2, uk), dtype=float)
        k4 = np.asarray(dyn(x + dt * k3, uk), dtype=float)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(
                f"state became non-finite on interval {k} (t = {k * dt:g})", point=states[-1]
            )
        states.append(x.copy())
    return StateTrajectory(times=olg.times, states=np.array(states))


def simulate_costate(
    olg: OpenLoopGame, i: int, state_traj: StateTrajectory, controls
) -> CostateTrajectory:
    """Backward RK4 for player i's multiplier along a stored state trajectory.

    Terminal condition: gradient of player i's terminal cost at x(T).  The
    state Jacobian at interior stage times uses linear interpolation of the
    stored nodes.
    """
    controls = as_profile(olg, controls)
    if not 0 <= i < olg.n_players:
        raise IndexError(f"player index {i} out of range")
    dt = olg.dt
    xs = state_traj.states
    p = _terminal_grad(olg, i, xs[-1])
    costates = [p.copy()]
    for k in range(olg.steps - 1, -1, -1):
        uk = [c[k] for c in controls]
        x_right, x_left = xs[k + 1], xs[k]
        x_mid = 0.5 * (x_left + x_right)

        def rate(pv, x):
            return -pv @ _dyn_dx(olg, x, uk)

        k1 = rate(p, x_right)
        k2 = rate(p - 0.5 * dt * k1, x_mid)
        k3 = rate(p - 0.5 * dt * k2, x_mid)
        k4 = rate(p - dt * k3, x_left)
        p = p - (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(
                f"costate of player {i} became non-finite on interval {k}", point=costates[-1]
            )
        costates.append(p.copy())
    costates.reverse()
    return CostateTrajectory(times=olg.times, costates=np.array(costates), player=i)


def control_gradient(olg: OpenLoopGame, i: int, controls) -> np.ndarray:
    """Per-interval gradient samples of player i's cost, shape (N, k_i).

    Row k is p_i(midpoint) * dh/du_i(state midpoint, interval controls) with
    node values interpolated linearly to the interval midpoint.
    """
    controls = as_profile(olg, controls)
    traj = simulate_state(olg, controls)
    costate = simulate_costate(olg, i, traj, controls)
    return _gradient_from_solutions(olg, i, traj, costate, controls)


def _gradient_from_solutions(olg, i, traj, costate, controls) -> np.ndarray:
    out = np.empty((olg.steps, olg.control_dims[i]))
    for k in range(olg.steps):
        uk = [c[k] for c in controls]
        x_mid = 0.5 * (traj.states[k] + traj.states[k + 1])
        p_mid = 0.5 * (costate.costates[k] + costate.costates[k + 1])
        out[k] = p_mid @ _dyn_du(olg, x_mid, uk, i)
    return out


@dataclass(frozen=True, eq=False)
class OLGameForm:
    """Per-player gradient profiles, the discretized first-order test data."""

    blocks: tuple[np.ndarray, ...]

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self.blocks])

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.stacked)))


def ol_game_form(olg: OpenLoopGame, controls) -> OLGameForm:
    """All players' gradient profiles; one forward solve, one backward per player."""
    controls = as_profile(olg, controls)
    traj = simulate_state(olg, controls)
    blocks = []
    for i in range(olg.n_players):
        costate = simulate_costate(olg, i, traj, controls)
        blocks.append(_gradient_from_solutions(olg, i, traj, costate, controls))
    return OLGameForm(blocks=tuple(blocks))


@dataclass(eq=False)
class OLPlayResult:
    profile: list[np.ndarray]
    sup_norms: list[float]
    status: str  # "converged" | "max_iters"
    iterations: int


def ol_gradient_play(
    olg: OpenLoopGame,
    controls0,
    step_size: float,
    max_iters: int = 200,
    tol: float = 1e-8,
) -> OLPlayResult:
    """Simultaneous explicit descent: u_i <- u_i - step_size * g_i each round.

    Stops when the stacked gradient sup-norm drops to ``tol``.  Failure to
    converge is a status, not an error; a non-finite iterate raises.
    """
    if not step_size > 0:
        raise ValueError("step_size must be positive")
    profile = as_profile(olg, controls0)
    sup_norms: list[float] = []
    for it in range(max_iters + 1):
        gf = ol_game_form(olg, profile)
        sup_norms.append(gf.sup_norm)
        if gf.sup_norm <= tol:
            return OLPlayResult(profile, sup_norms, "converged", it)
        if it == max_iters:
            break
        profile = [c - step_size * g for c, g in zip(profile, gf.blocks)]
        for i, c in enumerate(profile):
            if not np.all(np.isfinite(c)):
                raise NonFiniteError(
                    f"player {i} controls became non-finite at iteration {it + 1}"
                )
    return OLPlayResult(profile, sup_norms, "max_iters", max_iters)


def ol_classify(
    olg: OpenLoopGame,
    controls,
    fd_step: float = 1e-6,
    tolerances: Tolerances | None = None,
    dim_cap: int = 400,
) -> EquilibriumReport:
    """Classify a control profile in the discretized strategy space.

    Builds the full second-derivative matrix by central finite differences of
    the stacked gradient profile with respect to every control entry, takes
    the symmetrized diagonal blocks as per-player Hessians, and applies the
    standard decision table.  Refuses when N * sum(k_i) exceeds ``dim_cap``.
    """
    controls = as_profile(olg, controls)
    M = olg.total_control_dim
    if M > dim_cap:
        raise DimensionGuardError(
            f"discretized dimension {M} exceeds cap {dim_cap}; lower steps or raise dim_cap"
        )
    flat = pack_profile(olg, controls)
    omega = ol_game_form(olg, controls).stacked
    J = np.empty((M, M))
    for j in range(M):
        h = max(fd_step, fd_step * abs(flat[j]))
        fp, fm = flat.copy(), flat.copy()
        fp[j] += h
        fm[j] -= h
        gp = ol_game_form(olg, unpack_profile(olg, fp)).stacked
        gm = ol_game_form(olg, unpack_profile(olg, fm)).stacked
        J[:, j] = (gp - gm) / (2.0 * h)
    hessians = []
    off = 0
    for k in olg.control_dims:
        size = olg.steps * k
        block = J[off : off + size, off : off + size]
        hessians.append(0.5 * (block + block.T))
        off += size
    return classify_from_derivatives(flat, omega, hessians, J, tolerances)


def olgame_from_dict(doc: dict) -> OpenLoopGame:
    """Validate a parsed open-loop game configuration document."""
    _require(isinstance(doc, dict), "open-loop configuration must be a JSON object")
    for key in ("state_dim", "horizon", "steps", "x0", "control_dims", "dynamics", "terminal_costs"):
        _require(key in doc, f"missing required key {key!r}")
    d = doc["state_dim"]
    _require(isinstance(d, int) and d >= 1, "state_dim must be a positive integer")
    kdims = doc["control_dims"]
    _require(
        isinstance(kdims, list) and all(isinstance(k, int) and k >= 1 for k in kdims),
        "control_dims must be a list of positive integers",
    )
    dyn_spec = doc["dynamics"]
    _require(
        isinstance(dyn_spec, dict) and "linear" in dyn_spec,
        'dynamics must be {"linear": {"A": ..., "B": [...]}}',
    )
    lin = dyn_spec["linear"]
    _require(isinstance(lin, dict) and "A" in lin and "B" in lin, "linear dynamics need A and B")
    B = lin["B"]
    _require(isinstance(B, list) and len(B) == len(kdims), "one B matrix per player")
    dynamics = LinearDynamics(A=np.asarray(lin["A"], dtype=float), B=tuple(np.asarray(Bi, dtype=float) for Bi in B))
    for i, Bi in enumerate(dynamics.B):
        _require(Bi.shape == (d, kdims[i]), f"B[{i}] must be {d}x{kdims[i]}")
    _require(dynamics.A.shape == (d, d), f"A must be {d}x{d}")
    tc_spec = doc["terminal_costs"]
    _require(
        isinstance(tc_spec, list) and len(tc_spec) == len(kdims),
        "one terminal cost per player",
    )
    terminal = []
    for entry in tc_spec:
        _require(
            isinstance(entry, dict) and "quadratic" in entry,
            'terminal cost entries must be {"quadratic": {"Q": ..., "target": ...}}',
        )
        q = entry["quadratic"]
        _require(isinstance(q, dict) and "Q" in q and "target" in q, "quadratic needs Q and target")
        Q = np.asarray(q["Q"], dtype=float)
        target = np.asarray(q["target"], dtype=float)
        _require(Q.shape == (d, d) and target.shape == (d,), f"Q must be {d}x{d}, target length {d}")
        terminal.append(quadratic_terminal(Q, target))
    return OpenLoopGame(
        state_dim=d,
        horizon=float(doc["horizon"]),
        steps=int(doc["steps"]),
        x0=np.asarray(doc["x0"], dtype=float),
        dynamics=dynamics,
        control_dims=tuple(kdims),
        terminal_costs=tuple(terminal),
    )


def load_olgame(config_text: str) -> OpenLoopGame:
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise GameConfigError(f"invalid JSON: {exc}") from exc
    return olgame_from_dict(doc)


def load_olgame_file(path) -> OpenLoopGame:
    with open(path, "r", encoding="utf-8") as fh:
        return load_olgame(fh.read())


def profile_csv_header(olg: OpenLoopGame) -> list[str]:
    cols = ["t"]
    for i, k in enumerate(olg.control_dims):
        cols.extend(f"u{i + 1}_{j + 1}" for j in range(k))
    return cols


def write_profile_csv(fh, olg: OpenLoopGame, controls) -> None:
    controls = as_profile(olg, controls)
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(profile_csv_header(olg))
    for k in range(olg.steps):
        row = [f"{k * olg.dt:.17g}"]
        for c in controls:
            row.extend(f"{v:.17g}" for v in c[k])
        writer.writerow(row)


def read_profile_csv(fh_or_text, olg: OpenLoopGame) -> list[np.ndarray]:
    if isinstance(fh_or_text, str):
        fh_or_text = io.StringIO(fh_or_text)
    rows = list(csv.reader(fh_or_text))
    _require(len(rows) >= 1, "profile CSV is empty")
    header = rows[0]
    expected = profile_csv_header(olg)
    _require(header == expected, f"profile CSV header {header} != expected {expected}")
    body = [r for r in rows[1:] if r]
    _require(len(body) == olg.steps, f"profile CSV must have {olg.steps} rows, got {len(body)}")
    data = np.array([[float(v) for v in r[1:]] for r in body])
    out, off = [], 0
    for k in olg.control_dims:
        out.append(data[:, off : off + k])
        off += k
    return as_profile(olg, out)
