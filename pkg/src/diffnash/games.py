"""Finite-dimensional continuous games.

A game is a list of per-player strategy-block dimensions plus one scalar cost
per player, each cost defined on the joint strategy space R^m with
m = sum(dims).  Joint strategies are plain float vectors; the game object
carries the partition into player blocks.

Costs may be arbitrary callables, but the serializable representations
(:class:`PolynomialCost`, :class:`QuadraticCost`) carry exact analytic
gradients and Hessians and support generic scalar types, which the
derivative machinery exploits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GameConfigError",
    "NonFiniteError",
    "PolynomialCost",
    "QuadraticCost",
    "WeightedSumCost",
    "GameDefinition",
    "quadratic_game",
    "as_polynomial",
    "builtin_family",
    "builtin_names",
    "perturb",
    "load_game",
    "load_game_file",
]


class GameConfigError(ValueError):
    """A game description violates the configuration schema."""


class NonFiniteError(ArithmeticError):
    """An evaluator produced a non-finite value."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = None if point is None else np.asarray(point, dtype=float)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise GameConfigError(message)


@dataclass(frozen=True)
class PolynomialCost:
    """Multivariate polynomial: sum of coeff * u1^e1 * ... * um^em terms.

    ``monomials`` is a tuple of (coefficient, exponents) pairs where
    exponents is a length-m tuple of non-negative integers.
    """

    monomials: tuple[tuple[float, tuple[int, ...]], ...]

    def __post_init__(self):
        mono = tuple(
            (float(c), tuple(int(e) for e in exps)) for c, exps in self.monomials
        )
        _require(len(mono) > 0, "polynomial cost needs at least one monomial")
        arities = {len(exps) for _, exps in mono}
        _require(len(arities) == 1, "polynomial monomials have inconsistent arity")
        for c, exps in mono:
            _require(np.isfinite(c), f"non-finite polynomial coefficient {c!r}")
            _require(all(e >= 0 for e in exps), f"negative exponent in {exps}")
        object.__setattr__(self, "monomials", mono)

    @property
    def n_vars(self) -> int:
        return len(self.monomials[0][1])

    @cached_property
    def _coeffs(self) -> np.ndarray:
        return np.array([c for c, _ in self.monomials], dtype=float)

    @cached_property
    def _exps(self) -> np.ndarray:
        return np.array([exps for _, exps in self.monomials], dtype=float)

    def __call__(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(self._coeffs @ np.prod(u[None, :] ** self._exps, axis=1))

    def eval_generic(self, u: Sequence):
        """Evaluate with arbitrary scalar types (e.g. dual numbers)."""
        total = 0.0
        for c, exps in self.monomials:
            term = c
            for x, e in zip(u, exps):
                if e:
                    term = term * x**e
            total = total + term
        return total

    def differentiate(self, k: int) -> "PolynomialCost":
        """Exact partial derivative with respect to variable k."""
        out = []
        for c, exps in self.monomials:
            if exps[k] == 0:
                continue
            new = list(exps)
            new[k] -= 1
            out.append((c * exps[k], tuple(new)))
        if not out:
            out = [(0.0, (0,) * self.n_vars)]
        return PolynomialCost(tuple(out))

    @cached_property
    def _partials(self) -> tuple["PolynomialCost", ...]:
        return tuple(self.differentiate(k) for k in range(self.n_vars))

    def grad(self, u) -> np.ndarray:
        return np.array([p(u) for p in self._partials], dtype=float)

    def hess(self, u) -> np.ndarray:
        m = self.n_vars
        H = np.empty((m, m), dtype=float)
        for j, p in enumerate(self._partials):
            H[:, j] = p.grad(u)
        return H


@dataclass(frozen=True, eq=False)
class QuadraticCost:
    """f(u) = 0.5 u'Au + b'u + c with A symmetric."""

    A: np.ndarray
    b: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        _require(A.ndim == 2 and A.shape[0] == A.shape[1], "quadratic A must be square")
        bad = np.argwhere(A != A.T)
        if bad.size:
            i, j = bad[0]
            raise GameConfigError(
                f"quadratic matrix not symmetric: A[{i}][{j}]={A[i, j]!r} "
                f"!= A[{j}][{i}]={A[j, i]!r}"
            )
        b = np.zeros(A.shape[0]) if self.b is None else np.asarray(self.b, dtype=float)
        _require(b.shape == (A.shape[0],), "quadratic b has wrong length")
        _require(
            bool(np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.isfinite(self.c)),
            "quadratic cost has non-finite entries",
        )
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", float(self.c))

    @property
    def n_vars(self) -> int:
        return self.A.shape[0]

    def __call__(self, u) -> float:
        u = np.asarray(u, dtype=float)
        return float(0.5 * u @ self.A @ u + self.b @ u + self.c)

    def eval_generic(self, u: Sequence):
        total = self.c
        for i in range(self.n_vars):
            total = total + self.b[i] * u[i]
            for j in range(self.n_vars):
                if self.A[i, j]:
                    total = total + 0.5 * self.A[i, j] * (u[i] * u[j])
        return total

    def grad(self, u) -> np.ndarray:
        return self.A @ np.asarray(u, dtype=float) + self.b

    def hess(self, u) -> np.ndarray:
        return self.A.copy()


@dataclass(frozen=True, eq=False)
class WeightedSumCost:
    """Weighted sum of cost terms; analytic derivatives when all parts have them."""

    parts: tuple[Callable, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        _require(len(self.parts) == len(self.weights), "parts/weights length mismatch")
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def __call__(self, u) -> float:
        return float(sum(w * p(u) for p, w in zip(self.parts, self.weights)))

    @property
    def has_analytic(self) -> bool:
        return all(hasattr(p, "grad") and hasattr(p, "hess") for p in self.parts)

    def grad(self, u) -> np.ndarray:
        return sum(w * p.grad(u) for p, w in zip(self.parts, self.weights))

    def hess(self, u) -> np.ndarray:
        return sum(w * p.hess(u) for p, w in zip(self.parts, self.weights))

    def eval_generic(self, u: Sequence):
        total = 0.0
        for p, w in zip(self.parts, self.weights):
            part = p.eval_generic(u) if hasattr(p, "eval_generic") else p(u)
            total = total + w * part
        return total


@dataclass(frozen=True, eq=False)
class GameDefinition:
    """An n-player game on R^{m_1} x ... x R^{m_n}.

    ``costs[i]`` maps a joint strategy vector of length ``total_dim`` to the
    scalar cost of player ``i`` (0-based player indices throughout).
    Optional ``gradients``/``hessians`` supply analytic full-space derivative
    evaluators for costs that do not carry their own ``grad``/``hess``.
    Instances are immutable and safe to share across threads; cost evaluators
    must be pure.
    """

    dims: tuple[int, ...]
    costs: tuple[Callable, ...]
    gradients: tuple[Callable, ...] | None = None
    hessians: tuple[Callable, ...] | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        _require(len(dims) >= 1, "a game needs at least one player")
        _require(all(d >= 1 for d in dims), "strategy dimensions must be positive")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "costs", tuple(self.costs))
        _require(
            len(self.costs) == len(dims),
            f"expected {len(dims)} costs, got {len(self.costs)}",
        )
        for name in ("gradients", "hessians", "labels"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(val)
                _require(len(val) == len(dims), f"{name} must have one entry per player")
                object.__setattr__(self, name, val)

    @property
    def n_players(self) -> int:
        return len(self.dims)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    @cached_property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for d in self.dims:
            out.append(acc)
            acc += d
        return tuple(out)

    def block_slice(self, i: int) -> slice:
        self._check_player(i)
        return slice(self.offsets[i], self.offsets[i] + self.dims[i])

    def split(self, u) -> list[np.ndarray]:
        u = self.point(u)
        return [u[self.block_slice(i)] for i in range(self.n_players)]

    def point(self, values) -> np.ndarray:
        """Validate and return a joint strategy as a float vector."""
        u = np.asarray(values, dtype=float).reshape(-1).copy()
        if u.shape != (self.total_dim,):
            raise ValueError(
                f"joint strategy has length {u.size}, expected {self.total_dim}"
            )
        if not np.all(np.isfinite(u)):
            raise ValueError(f"joint strategy has non-finite entries: {u}")
        return u

    def _check_player(self, i: int) -> None:
        if not 0 <= i < self.n_players:
            raise IndexError(f"player index {i} out of range for {self.n_players} players")

    def cost(self, i: int, u) -> float:
        """Evaluate player i's cost at the joint strategy u."""
        self._check_player(i)
        u = self.point(u)
        val = float(self.costs[i](u))
        if not np.isfinite(val):
            raise NonFiniteError(
                f"cost of player {i} is non-finite ({val}) at {u.tolist()}", point=u
            )
        return val

    def player_label(self, i: int) -> str:
        if self.labels is not None:
            return self.labels[i]
        return f"player {i + 1}"


def eval_cost(game: GameDefinition, i: int, u) -> float:
    """Functional alias for :meth:`GameDefinition.cost`."""
    return game.cost(i, u)


def quadratic_game(
    dims: Sequence[int],
    A: Sequence[np.ndarray],
    b: Sequence[np.ndarray] | None = None,
    c: Sequence[float] | None = None,
    labels: Sequence[str] | None = None,
) -> GameDefinition:
    """Build a game whose costs are quadratic forms on the joint space."""
    n = len(dims)
    m = int(sum(dims))
    b = [None] * n if b is None else list(b)
    c = [0.0] * n if c is None else list(c)
    costs = []
    for k in range(n):
        bk = np.zeros(m) if b[k] is None else np.asarray(b[k], dtype=float)
        costs.append(QuadraticCost(np.asarray(A[k], dtype=float), bk, float(c[k])))
        _require(costs[-1].n_vars == m, f"cost {k} arity {costs[-1].n_vars} != {m}")
    return GameDefinition(dims=tuple(dims), costs=tuple(costs), labels=labels)


def as_polynomial(cost: QuadraticCost) -> PolynomialCost:
    """Exact polynomial form of a quadratic cost."""
    m = cost.n_vars
    mono: list[tuple[float, tuple[int, ...]]] = []

    def unit(*pairs):
        e = [0] * m
        for idx, p in pairs:
            e[idx] += p
        return tuple(e)

    for i in range(m):
        if cost.A[i, i]:
            mono.append((0.5 * cost.A[i, i], unit((i, 2))))
        for j in range(i + 1, m):
            if cost.A[i, j]:
                mono.append((cost.A[i, j], unit((i, 1), (j, 1))))
        if cost.b[i]:
            mono.append((cost.b[i], unit((i, 1))))
    if cost.c or not mono:
        mono.append((cost.c, unit()))
    return PolynomialCost(tuple(mono))


def _finite_param(params: dict, name: str, default: float) -> float:
    val = float(params.pop(name, default))
    _require(np.isfinite(val), f"builtin parameter {name!r} must be finite")
    return val


def _betty_sue(params: dict) -> GameDefinition:
    return quadratic_game(
        (1, 1),
        A=[np.array([[1.0, -1.0], [-1.0, 0.0]]), np.array([[0.0, -1.0], [-1.0, 1.0]])],
    )


def _betty_sue_asym(params: dict) -> GameDefinition:
    a = _finite_param(params, "a", 1.0)
    return quadratic_game(
        (1, 1),
        A=[np.array([[1.0, -a], [-a, 0.0]]), np.array([[0.0, -1.0], [-1.0, 1.0]])],
    )


def _betty_sue_perturbed(params: dict) -> GameDefinition:
    eps = _finite_param(params, "epsilon", 0.0)
    return quadratic_game(
        (1, 1),
        A=[np.array([[1.0, -1.0], [-1.0, 0.0]]), np.array([[0.0, -1.0], [-1.0, 1.0]])],
        b=[np.array([eps, 0.0]), None],
    )


def _incentive_game(params: dict) -> GameDefinition:
    # Base coupled costs plus a pull of strength a toward the target tau on
    # each player's own coordinate.
    a = _finite_param(params, "a", 0.0)
    tau = _finite_param(params, "tau", 0.0)
    return quadratic_game(
        (1, 1),
        A=[
            np.array([[1.0 + a, -1.0], [-1.0, 0.0]]),
            np.array([[0.0, -1.0], [-1.0, 1.0 + a]]),
        ],
        b=[np.array([-a * tau, 0.0]), np.array([0.0, -a * tau])],
        c=[0.5 * a * tau**2, 0.5 * a * tau**2],
    )


_BUILTINS: dict[str, Callable[[dict], GameDefinition]] = {
    "betty_sue": _betty_sue,
    "betty_sue_asym": _betty_sue_asym,
    "betty_sue_perturbed": _betty_sue_perturbed,
    "incentive_game": _incentive_game,
}


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


def builtin_family(name: str, **params) -> GameDefinition:
    """Construct one of the named two-player game families.

    betty_sue: f1 = u1^2/2 - u1*u2, f2 = u2^2/2 - u1*u2.
    betty_sue_asym(a): Betty's coupling scaled by a.
    betty_sue_perturbed(epsilon): Betty's cost shifted by epsilon*u1.
    incentive_game(a, tau): both costs augmented with (a/2)(u_i - tau)^2.
    """
    if name not in _BUILTINS:
        raise GameConfigError(
            f"unknown builtin game {name!r}; available: {', '.join(builtin_names())}"
        )
    params = dict(params)
    game = _BUILTINS[name](params)
    if params:
        raise GameConfigError(
            f"unexpected parameters for builtin {name!r}: {sorted(params)}"
        )
    return game


def perturb(game: GameDefinition, zetas: Sequence[Callable], s: float) -> GameDefinition:
    """Game with costs f_i + s * zeta_i.

    Analytic derivatives survive when both the original costs and the
    perturbations carry ``grad``/``hess``.
    """
    zetas = tuple(zetas)
    if len(zetas) != game.n_players:
        raise ValueError(
            f"expected {game.n_players} perturbation costs, got {len(zetas)}"
        )
    costs = tuple(
        WeightedSumCost(parts=(f, z), weights=(1.0, float(s)))
        for f, z in zip(game.costs, zetas)
    )
    return GameDefinition(dims=game.dims, costs=costs, labels=game.labels)


def parse_cost_spec(entry, m: int):
    """Parse one cost entry ({"polynomial": ...} or {"quadratic": ...})."""
    _require(isinstance(entry, dict), f"cost entry must be an object, got {entry!r}")
    if "polynomial" in entry:
        terms = entry["polynomial"]
        _require(isinstance(terms, list) and terms, "polynomial must be a non-empty list")
        mono = []
        for t in terms:
            _require(
                isinstance(t, list) and len(t) == 2,
                f"polynomial term must be [coeff, exponents], got {t!r}",
            )
            coeff, exps = t
            _require(
                isinstance(exps, list) and len(exps) == m,
                f"exponent list must have length {m}, got {exps!r}",
            )
            mono.append((float(coeff), tuple(int(e) for e in exps)))
        return PolynomialCost(tuple(mono))
    if "quadratic" in entry:
        spec = entry["quadratic"]
        _require(isinstance(spec, dict) and "A" in spec, 'quadratic needs an "A" matrix')
        A = np.asarray(spec["A"], dtype=float)
        _require(A.shape == (m, m), f"quadratic A must be {m}x{m}, got {A.shape}")
        b = np.asarray(spec.get("b", np.zeros(m)), dtype=float)
        return QuadraticCost(A, b, float(spec.get("c", 0.0)))
    raise GameConfigError(
        f"cost entry must contain 'builtin', 'polynomial' or 'quadratic': {entry!r}"
    )


def game_from_dict(doc: dict) -> GameDefinition:
    """Validate a parsed game configuration document."""
    _require(isinstance(doc, dict), "game configuration must be a JSON object")
    for key in ("players", "dims", "costs"):
        _require(key in doc, f"missing required key {key!r}")
    n = doc["players"]
    _require(isinstance(n, int) and n >= 1, f"players must be a positive integer, got {n!r}")
    dims = doc["dims"]
    _require(
        isinstance(dims, list) and len(dims) == n,
        f"dims must be a list of {n} positive integers",
    )
    _require(
        all(isinstance(d, int) and d >= 1 for d in dims),
        f"dims entries must be positive integers, got {dims!r}",
    )
    costs = doc["costs"]
    _require(isinstance(costs, list) and costs, "costs must be a non-empty list")

    if any(isinstance(e, dict) and "builtin" in e for e in costs):
        _require(
            len(costs) == 1,
            "a builtin cost entry defines the whole game and must be the only entry",
        )
        entry = costs[0]
        name = entry["builtin"]
        params = entry.get("params", {})
        _require(isinstance(params, dict), "builtin params must be an object")
        game = builtin_family(name, **params)
        _require(
            game.n_players == n and list(game.dims) == dims,
            f"builtin {name!r} has players={game.n_players}, dims={list(game.dims)}; "
            f"configuration declares players={n}, dims={dims}",
        )
        return game

    _require(len(costs) == n, f"expected {n} cost entries, got {len(costs)}")
    m = int(sum(dims))
    parsed = tuple(parse_cost_spec(e, m) for e in costs)
    labels = doc.get("labels")
    return GameDefinition(dims=tuple(dims), costs=parsed, labels=labels)


def load_game(config_text: str) -> GameDefinition:
    """Parse a JSON game configuration document."""
    try:
        doc = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise GameConfigError(f"invalid JSON: {exc}") from exc
    return game_from_dict(doc)


def load_game_file(path) -> GameDefinition:
    with open(path, "r", encoding="utf-8") as fh:
        return load_game(fh.read())
