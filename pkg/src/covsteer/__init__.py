"""Finite-horizon mean and covariance steering for discrete LTV stochastic systems.

Steers the state distribution of x_{k+1} = A_k x_k + B_k u_k + G_k w_k from an
initial Gaussian to an exact target Gaussian at step N+1 with minimum expected
control energy.  Provides the closed-form noiseless solution, the symmetric
multiplier equation for the noisy case, the equivalent terminal-weight LQG
controller, and analytic plus Monte-Carlo verification tooling.
"""

from . import errors
from .diffusion import (
    LambdaMatrix,
    PolicyState,
    SteeringPolicy,
    build_policy,
    feasibility_check,
    lambda_residual,
    policy_step,
    second_order_margin,
    solve_lambda,
)
from .examples import (
    CartPoleParams,
    NominalTrajectory,
    cartpole_dynamics,
    dynamics_jacobians,
    linearize_discretize,
    lti_example,
    nominal_trajectory,
)
from .lqg_bridge import (
    EquivalenceReport,
    LqgPolicy,
    LqgSolution,
    equivalence_check,
    lqg_expected_cost,
    make_lqg_policy,
    riccati_backward,
)
from .mean_steering import MeanPlan, steer_mean
from .nodiffusion import (
    DiffusionlessGain,
    SvdFactors,
    compute_svd_factors,
    steer_cov_riccati,
    steer_cov_svd,
    steer_partial_cov,
)
from .simulation import (
    EnsembleResult,
    LinearPolicyRealization,
    MomentTrajectory,
    OpenLoopPolicy,
    cost_decompose,
    monte_carlo,
    propagate_moments,
)
from .system_model import (
    BoundaryConditions,
    ControllabilityResult,
    LtvSystem,
    StackedOperators,
    ValidationReport,
    controllability_check,
    load_spec,
    save_spec,
    stack_operators,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryConditions",
    "CartPoleParams",
    "ControllabilityResult",
    "DiffusionlessGain",
    "EnsembleResult",
    "EquivalenceReport",
    "LambdaMatrix",
    "LinearPolicyRealization",
    "LqgPolicy",
    "LqgSolution",
    "LtvSystem",
    "MeanPlan",
    "MomentTrajectory",
    "NominalTrajectory",
    "OpenLoopPolicy",
    "PolicyState",
    "StackedOperators",
    "SteeringPolicy",
    "SvdFactors",
    "ValidationReport",
    "build_policy",
    "cartpole_dynamics",
    "compute_svd_factors",
    "controllability_check",
    "cost_decompose",
    "dynamics_jacobians",
    "equivalence_check",
    "errors",
    "feasibility_check",
    "lambda_residual",
    "linearize_discretize",
    "load_spec",
    "lqg_expected_cost",
    "lti_example",
    "make_lqg_policy",
    "monte_carlo",
    "nominal_trajectory",
    "policy_step",
    "propagate_moments",
    "riccati_backward",
    "save_spec",
    "second_order_margin",
    "solve_lambda",
    "stack_operators",
    "steer_cov_riccati",
    "steer_cov_svd",
    "steer_mean",
    "steer_partial_cov",
    "validate",
]
