"""Numerical laboratory for viscosity solutions of strictly elliptic and
parabolic Hamilton-Jacobi-Bellman equations on the flat torus.

Solves the discounted stationary problem, the ergodic (cell) problem and the
evolution problem with monotone finite-difference schemes, and measures the
uniform regularity quantities (oscillation, Lipschitz/Hölder seminorms,
doubling certificates, ergodic and large-time limits) as runnable checks.
"""

from .errors import (
    LinearSolveFailure,
    NoConvergence,
    NoFiniteL,
    NonCauchy,
    NonPositiveEigenvector,
    NotCertifiable,
    StencilNotMonotone,
    TooManyPairs,
    TorusHJBError,
)
from .grid import (
    DiffusionStencil,
    ScalarField,
    TorusGrid,
    diffusion_term,
    field_from_csv,
    field_from_json,
    field_to_csv,
    field_to_json,
    one_sided_gradients,
    periodic_distance,
    sample_function,
)
from .problem import (
    AssumptionEstimates,
    CoercivityCheck,
    Custom,
    DiffusionSpec,
    FourierCoefficient,
    HamiltonianSpec,
    PerturbedPower,
    PowerCoercive,
    Regularized,
    Shifted,
    SigmaPower,
    StructureDefect,
    Sublinear,
    Truncated,
    check_coercivity,
    estimate_ssa4_L,
    eval_H,
    h0_sup,
    structure_defect_LN2,
)
from .scheme import (
    SchemeConfig,
    SchemeOperator,
    calibrate_theta,
    jacobian_apply,
    lf_hamiltonian,
    residual,
    validate_theta,
)
from .stationary import (
    DegenerateLadderReport,
    StationaryReport,
    make_scheme_config,
    solve_degenerate_via_regularization,
    solve_discounted,
)
from .ergodic import (
    DEFAULT_EPS_SCHEDULE,
    ErgodicSolution,
    solve_direct,
    solve_vanishing_discount,
)
from .parabolic import (
    Evolution,
    TimeStepConfig,
    evolve,
    evolve_regularized,
    geometric_snapshots,
    lambda_bound,
    step_imex,
)
from .regularity import (
    CertificateParams,
    RegularityReport,
    analyze_field,
    concave_lip_params,
    cone_bound_check,
    doubling_certificate,
    holder_power_params,
    holder_seminorm,
    lipschitz_seminorm,
    minimal_certificate_A2,
    oscillation,
)
from .oracles import (
    OracleResult,
    brute_pair_max,
    fine_grid_reference,
    hopf_cole_ergodic,
    restrict_to_coarse,
)

__version__ = "0.1.0"
