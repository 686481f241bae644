"""Exponential Runge-Kutta samplers for diffusion probability-flow ODEs."""

from ._backend import NAME as BACKEND
from .analysis import (
    ConstantProblem,
    DefectReport,
    ManufacturedOracle,
    MixtureProblem,
    OrderEstimate,
    compare_methods,
    estimate_order,
    eta_sweep,
    measure_defects,
)
from .denoisers import (
    Denoiser,
    DenoiserModel,
    GaussianMixture,
    ManufacturedProblem,
    cfg_combine,
    classifier_guided,
    constant_denoiser,
    default_mixture,
    eps_from_denoiser,
    gaussian_denoiser,
    load_mixture_config,
    mixture_denoiser,
    sin_problem,
)
from .errors import (
    BootstrapRequiredError,
    DegenerateTableauError,
    DegenerateTableauWarning,
    DomainError,
    ExpintError,
    InsufficientDataError,
    NotApplicableError,
    ReferenceQualityError,
    UnsupportedOrderError,
    UsageError,
)
from .parametrizations import (
    Flavor,
    Parametrization,
    Schedule,
    ScheduleKind,
    StateVector,
    edm_schedule,
    make_schedule,
    uniform_lambda_schedule,
    uniform_sigma_schedule,
    velocity,
)
from .phi import PhiTable, phi, phi_table
from .steppers import (
    SolveRun,
    StepContext,
    churn,
    classical_step,
    expected_nfe,
    heun_solve,
    multistep_step,
    rk4_solve,
    single_step,
    solve,
    stochastic_step,
)
from .tableaus import (
    ConcreteTableau,
    SchemeId,
    TableauSpec,
    audit_order,
    concretize,
    gamma_for,
    make_spec,
    psi_report,
)

__version__ = "0.1.0"
