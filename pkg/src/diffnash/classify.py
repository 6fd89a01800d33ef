"""Classification of joint strategies.

A point is placed in a hierarchy by first/second-order tests evaluated at the
point alone: criticality of the stacked own-gradient field, eigenvalue signs
of the per-player own-block Hessians, invertibility (relative smallest
singular value) of the full second-derivative matrix, and the half-plane
location of its spectrum, which decides the stability of simultaneous
gradient descent.  A brute-force grid oracle over unilateral deviations
provides an independent check at small dimension.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .calculus import game_form, game_jacobian, player_hessian
from .games import GameDefinition

__all__ = [
    "DimensionGuardError",
    "Tolerances",
    "Classification",
    "EquilibriumReport",
    "classify_point",
    "classify_from_derivatives",
    "report_csv_header",
    "OracleResult",
    "local_nash_oracle",
]

NOT_CRITICAL = "not_critical"
SECOND_ORDER_VIOLATED = "second_order_violated"
NECESSARY_ONLY = "necessary_only"
DIFFERENTIAL_NASH = "differential_nash"

STABLE = "stable"
UNSTABLE = "unstable"
MARGINAL = "marginal"


class DimensionGuardError(RuntimeError):
    """The problem is too large for an exhaustive or dense-derivative routine."""


@dataclass(frozen=True)
class Tolerances:
    """Thresholds for the classification decision table.

    critical: sup-norm bound on the stacked gradient for criticality.
    eigenvalue: sign band for Hessian and spectrum tests.
    singular: relative smallest-singular-value cutoff for degeneracy.
    """

    critical: float = 1e-8
    eigenvalue: float = 1e-8
    singular: float = 1e-10

    def __post_init__(self):
        for name in ("critical", "eigenvalue", "singular"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name!r} must be positive")

    def as_dict(self) -> dict:
        return {
            "critical": self.critical,
            "eigenvalue": self.eigenvalue,
            "singular": self.singular,
        }


@dataclass(frozen=True)
class Classification:
    """Verdict variant: exactly one kind, with flags for the equilibrium case."""

    kind: str
    degenerate: bool | None = None
    flow_stability: str | None = None

    @property
    def is_nash(self) -> bool:
        return self.kind == DIFFERENTIAL_NASH

    @property
    def code(self) -> str:
        if self.kind != DIFFERENTIAL_NASH:
            return self.kind
        deg = "deg" if self.degenerate else "nondeg"
        return f"nash_{deg}_{self.flow_stability}"

    def describe(self) -> str:
        if self.kind == NOT_CRITICAL:
            return "not critical"
        if self.kind == SECOND_ORDER_VIOLATED:
            return "critical, second-order necessary condition violated"
        if self.kind == NECESSARY_ONLY:
            return "critical, necessary conditions hold, sufficiency inconclusive"
        deg = "degenerate" if self.degenerate else "non-degenerate"
        return f"differential Nash ({deg}, {self.flow_stability})"


@dataclass(frozen=True, eq=False)
class EquilibriumReport:
    """Everything the decision table looked at, plus the verdict."""

    point: np.ndarray
    omega_norm: float
    hessian_spectra: tuple[np.ndarray, ...]
    jacobian_singular_values: np.ndarray
    jacobian_eigenvalues: np.ndarray
    verdict: Classification
    tolerances: Tolerances

    @property
    def jacobian_degenerate(self) -> bool:
        sv = self.jacobian_singular_values
        return bool(sv[-1] <= self.tolerances.singular * sv[0])

    def to_dict(self) -> dict:
        return {
            "point": [float(x) for x in self.point],
            "omega_norm": self.omega_norm,
            "hessian_spectra": [[float(x) for x in s] for s in self.hessian_spectra],
            "jacobian_singular_values": [
                float(x) for x in self.jacobian_singular_values
            ],
            "jacobian_eigenvalues": [
                [float(z.real), float(z.imag)] for z in self.jacobian_eigenvalues
            ],
            "jacobian_degenerate": self.jacobian_degenerate,
            "verdict": {
                "kind": self.verdict.kind,
                "degenerate": self.verdict.degenerate,
                "flow_stability": self.verdict.flow_stability,
                "code": self.verdict.code,
                "text": self.verdict.describe(),
            },
            "tolerances": self.tolerances.as_dict(),
        }

    def to_csv_row(self) -> list[str]:
        cells = [f"{x:.17g}" for x in self.point]
        cells.append(f"{self.omega_norm:.17g}")
        cells.extend(f"{np.min(s):.17g}" for s in self.hessian_spectra)
        cells.append(f"{self.jacobian_singular_values[-1]:.17g}")
        cells.append(self.verdict.code)
        return cells


def report_csv_header(dims) -> list[str]:
    cols = [f"u_{k + 1}" for k in range(int(sum(dims)))]
    cols.append("omega_norm")
    cols.extend(f"min_hessian_eig_{i + 1}" for i in range(len(dims)))
    cols.append("sigma_min_jacobian")
    cols.append("verdict")
    return cols


def _decide(
    omega_norm: float,
    hessian_spectra: tuple[np.ndarray, ...],
    jac_svals: np.ndarray,
    jac_eigs: np.ndarray,
    tol: Tolerances,
) -> Classification:
    if omega_norm > tol.critical:
        return Classification(NOT_CRITICAL)
    all_eigs = np.concatenate(hessian_spectra)
    if np.any(all_eigs < -tol.eigenvalue):
        return Classification(SECOND_ORDER_VIOLATED)
    if not np.all(all_eigs > tol.eigenvalue):
        return Classification(NECESSARY_ONLY)
    degenerate = bool(jac_svals[-1] <= tol.singular * jac_svals[0])
    reals = jac_eigs.real
    if np.all(reals > tol.eigenvalue):
        stability = STABLE
    elif np.any(reals < -tol.eigenvalue):
        stability = UNSTABLE
    else:
        stability = MARGINAL
    return Classification(DIFFERENTIAL_NASH, degenerate=degenerate, flow_stability=stability)


def classify_from_derivatives(
    point: np.ndarray,
    omega: np.ndarray,
    hessians: list[np.ndarray],
    jacobian: np.ndarray,
    tolerances: Tolerances | None = None,
) -> EquilibriumReport:
    """Run the decision table on precomputed derivative data.

    ``hessians`` must already be symmetric; ``jacobian`` is used as given.
    """
    tol = tolerances or Tolerances()
    omega = np.asarray(omega, dtype=float)
    omega_norm = float(np.max(np.abs(omega)))
    spectra = tuple(np.linalg.eigvalsh(H) for H in hessians)
    svals = np.linalg.svd(jacobian, compute_uv=False)
    eigs = np.linalg.eigvals(jacobian)
    verdict = _decide(omega_norm, spectra, svals, eigs, tol)
    return EquilibriumReport(
        point=np.asarray(point, dtype=float),
        omega_norm=omega_norm,
        hessian_spectra=spectra,
        jacobian_singular_values=svals,
        jacobian_eigenvalues=eigs,
        verdict=verdict,
        tolerances=tol,
    )


def classify_point(
    game: GameDefinition,
    u,
    tolerances: Tolerances | None = None,
    method: str = "analytic",
) -> EquilibriumReport:
    """Classify a joint strategy of a finite-dimensional game.

    Decision table: the point is critical when the stacked own-gradient has
    sup-norm at most ``tolerances.critical``; a critical point with a Hessian
    eigenvalue below -eigenvalue fails the necessary conditions; with all
    eigenvalues above +eigenvalue it is an equilibrium, flagged degenerate
    when the second-derivative matrix has relative smallest singular value at
    most ``tolerances.singular`` and stable/unstable/marginal by the sign of
    the spectrum's real parts; otherwise the tests are inconclusive.
    """
    u = game.point(u)
    w = game_form(game, u, method)
    hessians = [player_hessian(game, i, u, method).matrix for i in range(game.n_players)]
    jac = game_jacobian(game, u, method)
    return classify_from_derivatives(u, w.stacked, hessians, jac.matrix, tolerances)


@dataclass(frozen=True, eq=False)
class OracleResult:
    """Outcome of the brute-force unilateral-deviation check."""

    status: str  # "confirmed_strict" | "violated" | "inconclusive"
    player: int | None = None
    deviation: np.ndarray | None = None
    cost_drop: float | None = None


def local_nash_oracle(
    game: GameDefinition,
    u,
    radius: float,
    grid_points_per_axis: int = 11,
) -> OracleResult:
    """Grid-search every player's unilateral deviations in a ball.

    For each player, player i's cost is evaluated on a tensor grid over the
    ball of the given radius in that player's block, all other blocks fixed.
    Any strictly lower cost is a violation witness; strictly higher cost at
    every non-center grid point confirms a strict local equilibrium on the
    grid; a tie is inconclusive.  Exhaustive, hence restricted to total
    dimension <= 4.
    """
    u = game.point(u)
    if game.total_dim > 4:
        raise DimensionGuardError(
            f"deviation oracle is exponential in dimension; total dim "
            f"{game.total_dim} exceeds 4"
        )
    if not radius > 0:
        raise ValueError("radius must be positive")
    pts = int(grid_points_per_axis)
    if pts < 3 or pts % 2 == 0:
        raise ValueError("grid_points_per_axis must be odd and at least 3")

    axis = np.linspace(-radius, radius, pts)
    best: OracleResult | None = None
    tie_seen = False
    for i in range(game.n_players):
        sl = game.block_slice(i)
        center_cost = game.cost(i, u)
        for offs in itertools.product(axis, repeat=game.dims[i]):
            delta = np.array(offs)
            if not np.any(delta):
                continue
            if np.linalg.norm(delta) > radius * (1.0 + 1e-12):
                continue
            cand = u.copy()
            cand[sl] += delta
            val = game.cost(i, cand)
            if val < center_cost:
                drop = center_cost - val
                if best is None or drop > best.cost_drop:
                    best = OracleResult(
                        status="violated", player=i, deviation=cand, cost_drop=drop
                    )
            elif val == center_cost:
                tie_seen = True
    if best is not None:
        return best
    if tie_seen:
        return OracleResult(status="inconclusive")
    return OracleResult(status="confirmed_strict")
