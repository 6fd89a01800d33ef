"""Derivatives of player costs.

Three interchangeable differentiation routes:

* ``analytic`` — exact formulas from cost objects exposing ``grad``/``hess``
  (polynomial and quadratic costs do) or from per-player evaluators
  registered on the game.
* ``dual`` — forward-mode differentiation with (hyper-)dual numbers; exact to
  machine precision for polynomial/quadratic costs and for any cost written
  with plain scalar arithmetic.
* ``fd`` — second-order central finite differences, step
  max(1e-6, 1e-6*|u_k|) per coordinate; works for any cost.

The central objects are the stacked own-gradient field (blocks D_i f_i, the
first-order equilibrium test function), the per-player own-block Hessians, and
the full second-derivative matrix whose (i, j) block differentiates player i's
own-gradient by player j's block.  That full matrix is generally not
symmetric and is never symmetrized; per-player Hessians always are.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .games import GameDefinition, NonFiniteError

__all__ = [
    "METHODS",
    "DerivativeUnavailableError",
    "Dual",
    "HyperDual",
    "GameFormValue",
    "PlayerHessian",
    "GameJacobian",
    "player_gradient",
    "game_form",
    "player_hessian",
    "game_jacobian",
]

METHODS = ("analytic", "dual", "fd")


class DerivativeUnavailableError(RuntimeError):
    """The requested differentiation method is not available for this cost."""


def _canon_method(method: str) -> str:
    method = {"central_fd": "fd"}.get(method, method)
    if method not in METHODS:
        raise ValueError(f"unknown derivative method {method!r}; choose from {METHODS}")
    return method


@dataclass(frozen=True)
class Dual:
    """First-order dual number value + deriv*eps."""

    value: float
    deriv: float = 0.0

    def __add__(self, other):
        o = _dual(other)
        return Dual(self.value + o.value, self.deriv + o.deriv)

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __sub__(self, other):
        return self + (-_dual(other))

    def __rsub__(self, other):
        return _dual(other) + (-self)

    def __mul__(self, other):
        o = _dual(other)
        return Dual(self.value * o.value, self.value * o.deriv + self.deriv * o.value)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _dual(other)
        return Dual(
            self.value / o.value,
            (self.deriv * o.value - self.value * o.deriv) / (o.value * o.value),
        )

    def __rtruediv__(self, other):
        return _dual(other) / self

    def __pow__(self, n):
        if not isinstance(n, int) or n < 0:
            raise TypeError("dual powers require a non-negative integer exponent")
        out = Dual(1.0)
        for _ in range(n):
            out = out * self
        return out


def _dual(x) -> Dual:
    return x if isinstance(x, Dual) else Dual(float(x))


@dataclass(frozen=True)
class HyperDual:
    """Second-order number value + d1*e1 + d2*e2 + d12*e1*e2 (e1^2 = e2^2 = 0).

    Seeding e1 on coordinate p and e2 on coordinate q makes ``d12`` the exact
    mixed second partial d^2 f / du_p du_q.
    """

    value: float
    d1: float = 0.0
    d2: float = 0.0
    d12: float = 0.0

    def __add__(self, other):
        o = _hyper(other)
        return HyperDual(
            self.value + o.value, self.d1 + o.d1, self.d2 + o.d2, self.d12 + o.d12
        )

    __radd__ = __add__

    def __neg__(self):
        return HyperDual(-self.value, -self.d1, -self.d2, -self.d12)

    def __sub__(self, other):
        return self + (-_hyper(other))

    def __rsub__(self, other):
        return _hyper(other) + (-self)

    def __mul__(self, other):
        o = _hyper(other)
        return HyperDual(
            self.value * o.value,
            self.value * o.d1 + self.d1 * o.value,
            self.value * o.d2 + self.d2 * o.value,
            self.value * o.d12 + self.d1 * o.d2 + self.d2 * o.d1 + self.d12 * o.value,
        )

    __rmul__ = __mul__

    def _inverse(self):
        a = self.value
        return HyperDual(
            1.0 / a,
            -self.d1 / a**2,
            -self.d2 / a**2,
            2.0 * self.d1 * self.d2 / a**3 - self.d12 / a**2,
        )

    def __truediv__(self, other):
        return self * _hyper(other)._inverse()

    def __rtruediv__(self, other):
        return _hyper(other) * self._inverse()

    def __pow__(self, n):
        if not isinstance(n, int) or n < 0:
            raise TypeError("hyper-dual powers require a non-negative integer exponent")
        out = HyperDual(1.0)
        for _ in range(n):
            out = out * self
        return out


def _hyper(x) -> HyperDual:
    return x if isinstance(x, HyperDual) else HyperDual(float(x))


@dataclass(frozen=True, eq=False)
class GameFormValue:
    """Per-player own-gradient blocks D_i f_i stacked in player order."""

    blocks: tuple[np.ndarray, ...]
    point: np.ndarray

    @property
    def stacked(self) -> np.ndarray:
        return np.concatenate(self.blocks)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.stacked)))


@dataclass(frozen=True, eq=False)
class PlayerHessian:
    """Own-block second derivative of player i's cost, symmetrized."""

    player: int
    matrix: np.ndarray

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


@dataclass(frozen=True, eq=False)
class GameJacobian:
    """Full m x m derivative of the stacked own-gradient field.

    Block (i, j) differentiates player i's own-gradient by player j's block.
    Not symmetric in general.
    """

    matrix: np.ndarray
    point: np.ndarray
    dims: tuple[int, ...]

    def block(self, i: int, j: int) -> np.ndarray:
        off = np.concatenate([[0], np.cumsum(self.dims)])
        return self.matrix[off[i] : off[i + 1], off[j] : off[j + 1]]

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.matrix, compute_uv=False)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


def _fd_step(x: float) -> float:
    return max(1e-6, 1e-6 * abs(x))


def _check_finite(arr: np.ndarray, what: str, u: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{what} is non-finite at {u.tolist()}", point=u)
    return arr


def _analytic_grad_fn(game: GameDefinition, i: int):
    cost = game.costs[i]
    if hasattr(cost, "grad"):
        return cost.grad
    if game.gradients is not None:
        return game.gradients[i]
    return None


def _analytic_hess_fn(game: GameDefinition, i: int):
    cost = game.costs[i]
    if hasattr(cost, "hess"):
        return cost.hess
    if game.hessians is not None:
        return game.hessians[i]
    return None


def _eval_generic(game: GameDefinition, i: int, u_generic: Sequence):
    cost = game.costs[i]
    try:
        if hasattr(cost, "eval_generic"):
            return cost.eval_generic(u_generic)
        return cost(u_generic)
    except TypeError as exc:
        raise DerivativeUnavailableError(
            f"cost of player {i} does not support dual-number evaluation; "
            f"use method='fd' or register analytic derivatives"
        ) from exc


def _dual_partial(game: GameDefinition, i: int, u: np.ndarray, k: int) -> float:
    seeded = [Dual(x, 1.0 if idx == k else 0.0) for idx, x in enumerate(u)]
    out = _eval_generic(game, i, seeded)
    return out.deriv if isinstance(out, Dual) else 0.0


def _hyper_partial(game: GameDefinition, i: int, u: np.ndarray, p: int, q: int) -> float:
    seeded = [
        HyperDual(x, 1.0 if idx == p else 0.0, 1.0 if idx == q else 0.0)
        for idx, x in enumerate(u)
    ]
    out = _eval_generic(game, i, seeded)
    return out.d12 if isinstance(out, HyperDual) else 0.0


def _fd_partial(game: GameDefinition, i: int, u: np.ndarray, k: int) -> float:
    h = _fd_step(u[k])
    up, um = u.copy(), u.copy()
    up[k] += h
    um[k] -= h
    return (game.cost(i, up) - game.cost(i, um)) / (2.0 * h)


def _full_gradient(game: GameDefinition, i: int, u: np.ndarray, method: str) -> np.ndarray:
    m = game.total_dim
    if method == "analytic":
        fn = _analytic_grad_fn(game, i)
        if fn is None:
            raise DerivativeUnavailableError(
                f"no analytic gradient for player {i}; use method='dual' or 'fd'"
            )
        g = np.asarray(fn(u), dtype=float).reshape(-1)
        if g.shape != (m,):
            raise ValueError(f"analytic gradient of player {i} has shape {g.shape}")
    elif method == "dual":
        g = np.array([_dual_partial(game, i, u, k) for k in range(m)])
    else:
        g = np.array([_fd_partial(game, i, u, k) for k in range(m)])
    return _check_finite(g, f"gradient of player {i}", u)


def _full_hessian(game: GameDefinition, i: int, u: np.ndarray, method: str) -> np.ndarray:
    m = game.total_dim
    if method == "analytic":
        fn = _analytic_hess_fn(game, i)
        if fn is None:
            raise DerivativeUnavailableError(
                f"no analytic Hessian for player {i}; use method='dual' or 'fd'"
            )
        H = np.asarray(fn(u), dtype=float)
        if H.shape != (m, m):
            raise ValueError(f"analytic Hessian of player {i} has shape {H.shape}")
    elif method == "dual":
        H = np.empty((m, m))
        for p in range(m):
            for q in range(p, m):
                H[p, q] = H[q, p] = _hyper_partial(game, i, u, p, q)
    else:
        grad_fn = _analytic_grad_fn(game, i)
        H = np.empty((m, m))
        if grad_fn is not None:
            # Central differences of the analytic gradient, column by column.
            for q in range(m):
                h = _fd_step(u[q])
                up, um = u.copy(), u.copy()
                up[q] += h
                um[q] -= h
                H[:, q] = (
                    np.asarray(grad_fn(up), dtype=float)
                    - np.asarray(grad_fn(um), dtype=float)
                ) / (2.0 * h)
        else:
            f0 = game.cost(i, u)
            for p in range(m):
                hp = _fd_step(u[p])
                for q in range(p, m):
                    hq = _fd_step(u[q])
                    if p == q:
                        up, um = u.copy(), u.copy()
                        up[p] += hp
                        um[p] -= hp
                        H[p, p] = (game.cost(i, up) - 2.0 * f0 + game.cost(i, um)) / hp**2
                    else:
                        upp, upm, ump, umm = u.copy(), u.copy(), u.copy(), u.copy()
                        upp[p] += hp
                        upp[q] += hq
                        upm[p] += hp
                        upm[q] -= hq
                        ump[p] -= hp
                        ump[q] += hq
                        umm[p] -= hp
                        umm[q] -= hq
                        H[p, q] = H[q, p] = (
                            game.cost(i, upp)
                            - game.cost(i, upm)
                            - game.cost(i, ump)
                            + game.cost(i, umm)
                        ) / (4.0 * hp * hq)
    return _check_finite(H, f"Hessian of player {i}", u)


def player_gradient(game: GameDefinition, i: int, u, method: str = "analytic") -> np.ndarray:
    """Gradient of f_i with respect to player i's own block, length dims[i]."""
    game._check_player(i)
    u = game.point(u)
    method = _canon_method(method)
    sl = game.block_slice(i)
    if method == "dual":
        g = np.array([_dual_partial(game, i, u, k) for k in range(sl.start, sl.stop)])
        return _check_finite(g, f"gradient of player {i}", u)
    if method == "fd":
        g = np.array([_fd_partial(game, i, u, k) for k in range(sl.start, sl.stop)])
        return _check_finite(g, f"gradient of player {i}", u)
    return _full_gradient(game, i, u, method)[sl]


def game_form(game: GameDefinition, u, method: str = "analytic") -> GameFormValue:
    """Stack every player's own-block gradient in player order."""
    u = game.point(u)
    blocks = tuple(player_gradient(game, i, u, method) for i in range(game.n_players))
    return GameFormValue(blocks=blocks, point=u)


def player_hessian(game: GameDefinition, i: int, u, method: str = "analytic") -> PlayerHessian:
    """Own-block Hessian of f_i, symmetrized as (H + H') / 2."""
    game._check_player(i)
    u = game.point(u)
    method = _canon_method(method)
    sl = game.block_slice(i)
    H = _full_hessian(game, i, u, method)[sl, sl]
    return PlayerHessian(player=i, matrix=0.5 * (H + H.T))


def game_jacobian(game: GameDefinition, u, method: str = "analytic") -> GameJacobian:
    """Derivative of the stacked own-gradient field; row block i differentiates
    player i's own-gradient by every block.  Never symmetrized."""
    u = game.point(u)
    method = _canon_method(method)
    m = game.total_dim
    J = np.empty((m, m))
    for i in range(game.n_players):
        sl = game.block_slice(i)
        J[sl, :] = _full_hessian(game, i, u, method)[sl, :]
    return GameJacobian(matrix=J, point=u, dims=game.dims)
