"""Structure-preserving implicit stochastic Runge-Kutta methods for stochastic Poisson systems."""

from .core import (
    HamiltonianSpec,
    PoissonSystemDef,
    StructureMatrix,
    casimir_residual,
    check_jacobi_identity,
    check_skew_symmetry,
    drift_diffusion_field,
    poisson_bracket,
)
from .tableau import (
    SrkTableau,
    SymplecticReport,
    build_dirk,
    check_symplectic_conditions,
    explicit_euler_tableau,
    midpoint_tableau,
)
from .solver import (
    ConvergenceError,
    SrkStepper,
    StepContext,
    Trajectory,
    WienerPath,
    coarsen,
    integrate_path,
    integrate_with,
    sample_wiener_path,
    srk_step,
    truncated_increment,
)
from .systems import (
    LinearSpsDef,
    RigidBodyParams,
    linear_exact_solution,
    linear_sps_system,
    matrix_exponential,
    midpoint_reference_step,
    rigid_body_system,
)
from .transform import (
    ChartDomainError,
    CoordinateChart,
    TransformedStepper,
    rigid_body_chart,
    transformed_srk_step,
)
from .analysis import (
    OrderEstimate,
    StructureReport,
    check_poisson_structure,
    invariant_drift,
    mean_square_order,
    step_jacobian,
)

DEFAULT_WEIGHTS = ((0.25, 0.75), (0.5, 0.5))

__version__ = "0.1.0"
