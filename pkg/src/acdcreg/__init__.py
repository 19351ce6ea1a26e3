"""Variable screening with shape-constrained additive models.

The screening engine fits a sup-norm-penalized additive convex model,
then refits the zeroed coordinates with concave components on the
residual; a coordinate survives when either stage gives it a component
of nonnegligible size.  The population module carries the discrete
analogue of the same projections for studying when the additive
approximation keeps every relevant coordinate.
"""

from .data import Dataset, load_csv
from .experiments import (
    SimConfig,
    coupling_matrix,
    cross_validate,
    recovery_curve,
    regularization_path,
    simulate,
)
from .population import (
    CANONICAL_EXAMPLES,
    GridDensity,
    GridFunction,
    additive_projection_grid,
    canonical_example,
    decoupled_concave_projection_grid,
    gaussian_quadratic_projection,
)
from .qp import QpError, QpWorkspace
from .screening import (
    AcSolver,
    AdditiveModel,
    ScreeningReport,
    ZERO_COMPONENT_TOL,
    check_deterministic_condition,
    default_lambda,
    fit_ac,
    fit_dc,
    residual,
    screen,
)
from .univariate import (
    CONCAVE,
    CONVEX,
    CoordinateSolver,
    FitError,
    UnivariateFit,
    evaluate_component,
    fit_concave_univariate,
    fit_convex_univariate,
)

__all__ = [
    "AcSolver",
    "AdditiveModel",
    "CANONICAL_EXAMPLES",
    "CONCAVE",
    "CONVEX",
    "Dataset",
    "FitError",
    "GridDensity",
    "GridFunction",
    "QpError",
    "QpWorkspace",
    "CoordinateSolver",
    "ScreeningReport",
    "SimConfig",
    "UnivariateFit",
    "ZERO_COMPONENT_TOL",
    "additive_projection_grid",
    "canonical_example",
    "check_deterministic_condition",
    "coupling_matrix",
    "cross_validate",
    "decoupled_concave_projection_grid",
    "default_lambda",
    "evaluate_component",
    "fit_ac",
    "fit_concave_univariate",
    "fit_convex_univariate",
    "fit_dc",
    "gaussian_quadratic_projection",
    "load_csv",
    "recovery_curve",
    "regularization_path",
    "residual",
    "screen",
    "simulate",
]
