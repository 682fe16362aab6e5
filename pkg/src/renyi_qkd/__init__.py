"""Certified finite-size key rates for BB84 with trusted preprocessing noise.

The public surface re-exports the protocol builders, the certified divergence
solver, and the key-rate pipeline; the command-line interface lives in
``renyi_qkd.cli``.
"""

from .protocol import (
    ProtocolParams,
    ProtocolError,
    KeyMapKraus,
    povm_elements,
    key_map_kraus,
    apply_G,
    apply_G_adjoint,
    apply_Z,
    qber_projectors,
    werner_state,
    effective_qber,
    binary_entropy,
)
from .divergence import (
    DivergenceError,
    DivergenceEvaluation,
    StateEvaluation,
    beta_of_alpha,
    renyi_divergence,
    evaluate_state,
    grad_rho,
    grad_sigma,
    objective_f,
)
from .optimizer import (
    OptimizerError,
    AffineConstraint,
    FeasibleSet,
    OptimizationResult,
    rho_feasible_set,
    initial_point_rho,
    lmo_sigma,
    lmo_rho,
    line_search,
    frank_wolfe,
)
from .cache import ResultCache, default_cache_path
from .keyrate import (
    DEFAULT_ALPHA_GRID,
    POSITIVE_RATE_TOL,
    KeyrateError,
    RatePoint,
    MinEntropyParams,
    QberThreshold,
    DivergenceBound,
    finite_size_correction,
    divergence_bound,
    clear_divergence_cache,
    set_file_cache,
    key_rate,
    optimize_q,
    optimize_alpha_q,
    optimize_alpha_at_q,
    delta_r,
    max_tolerable_qber,
    guessing_probability,
    min_entropy_rate,
    min_entropy_derivatives,
)

__version__ = "0.1.0"

__all__ = [
    "ProtocolParams",
    "ProtocolError",
    "KeyMapKraus",
    "povm_elements",
    "key_map_kraus",
    "apply_G",
    "apply_G_adjoint",
    "apply_Z",
    "qber_projectors",
    "werner_state",
    "effective_qber",
    "binary_entropy",
    "DivergenceError",
    "DivergenceEvaluation",
    "StateEvaluation",
    "beta_of_alpha",
    "renyi_divergence",
    "evaluate_state",
    "grad_rho",
    "grad_sigma",
    "objective_f",
    "OptimizerError",
    "AffineConstraint",
    "FeasibleSet",
    "OptimizationResult",
    "rho_feasible_set",
    "initial_point_rho",
    "lmo_sigma",
    "lmo_rho",
    "line_search",
    "frank_wolfe",
    "DEFAULT_ALPHA_GRID",
    "POSITIVE_RATE_TOL",
    "KeyrateError",
    "RatePoint",
    "MinEntropyParams",
    "QberThreshold",
    "DivergenceBound",
    "ResultCache",
    "default_cache_path",
    "finite_size_correction",
    "divergence_bound",
    "clear_divergence_cache",
    "set_file_cache",
    "key_rate",
    "optimize_q",
    "optimize_alpha_q",
    "optimize_alpha_at_q",
    "delta_r",
    "max_tolerable_qber",
    "guessing_probability",
    "min_entropy_rate",
    "min_entropy_derivatives",
    "__version__",
]
