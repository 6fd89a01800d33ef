"""Local Nash equilibria in continuous games: characterization, computation,
and stress tests.

The package covers finite-dimensional games (per-player cost gradients, the
stacked own-gradient field and its derivative matrix, equilibrium
classification, Newton and multi-start search, simultaneous gradient flow,
and continuation of equilibria under cost perturbations) and open-loop games
over shared dynamics (forward state / backward multiplier integration,
per-interval control gradients, function-space gradient descent, and
classification of discretized profiles).
"""

__version__ = "0.1.0"

from .calculus import (
    DerivativeUnavailableError,
    Dual,
    GameFormValue,
    GameJacobian,
    HyperDual,
    PlayerHessian,
    game_form,
    game_jacobian,
    player_gradient,
    player_hessian,
)
from .classify import (
    Classification,
    DimensionGuardError,
    EquilibriumReport,
    OracleResult,
    Tolerances,
    classify_from_derivatives,
    classify_point,
    local_nash_oracle,
)
from .games import (
    GameConfigError,
    GameDefinition,
    NonFiniteError,
    PolynomialCost,
    QuadraticCost,
    WeightedSumCost,
    as_polynomial,
    builtin_family,
    builtin_names,
    eval_cost,
    load_game,
    load_game_file,
    perturb,
    quadratic_game,
)
from .olgames import (
    CostateTrajectory,
    LinearDynamics,
    OLGameForm,
    OLPlayResult,
    OpenLoopGame,
    PolynomialDynamics,
    StateTrajectory,
    control_gradient,
    load_olgame,
    load_olgame_file,
    ol_classify,
    ol_game_form,
    ol_gradient_play,
    quadratic_terminal,
    simulate_costate,
    simulate_state,
)
from .solve import (
    ContinuationPath,
    DegenerateStartError,
    FlowTrajectory,
    MultiStartResult,
    NewtonOptions,
    NewtonResult,
    continue_path,
    gradient_play,
    multi_start,
    newton_solve,
)
