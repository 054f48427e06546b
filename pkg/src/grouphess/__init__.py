"""Grouped higher-order derivative summaries and partitioned second-order
optimization, with exact nested differentiation at the core."""

from .engine import (
    EvaluationError,
    Expr,
    ParamVector,
    PassCounts,
    counter,
    directional_derivative,
    evaluate,
    gradient,
)
from .optimizers import (
    METHODS,
    RunResult,
    SolverError,
    StepConfig,
    StepTrace,
    cauchy_step,
    gd_step,
    newton_step,
    partitioned_newton_step,
    run,
    solve_pseudo_system,
)
from .partition import (
    Partition,
    broadcast,
    canonical_partition,
    custom_partition,
    discrete_partition,
    group_sum,
    mask,
    trivial_partition,
)
from .problems import (
    CsvSchema,
    Dataset,
    MlpSpec,
    QuadraticProblem,
    QuadraticSpec,
    load_csv,
    make_mlp,
    make_quadratic,
    make_rosenbrock,
    synth_dataset,
)
from .summaries import (
    BudgetError,
    PseudoSystem,
    SummaryTensor,
    pseudo_gradient,
    pseudo_hessian,
    regularization_vector,
    summary_tensor,
    taylor_term,
)

__version__ = "0.1.0"
