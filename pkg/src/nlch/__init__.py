"""Nonlocal Cahn-Hilliard solver with an obstacle potential.

A lumped P1 finite-element discretization of the conserved phase-field flow

    du/dt = Laplace(w),    w = xi u - gamma * u + lambda,

where gamma is a truncated Gaussian interaction kernel, xi = c_gamma - c_F,
and lambda is the multiplier of the box constraint |u| <= 1.  Time steps are
variational-inequality solves handled by a primal-dual active-set method;
for xi = 0 the model sustains genuinely sharp (node-to-node) interfaces.
A classical local Cahn-Hilliard solver with the same obstacle treatment is
included for side-by-side comparisons, plus presets, deterministic random
initial data, CSV/VTK writers, and figure rendering.
"""

from .assembly import (
    CASE_NEUMANN,
    CASE_REGIONAL,
    ConfigurationError,
    DiscreteOperators,
    WellPosednessError,
    apply_convolution,
    assemble,
    bilinear_b,
    dump_convolution,
    load_convolution,
    neumann_residual,
)
from .cli_io import (
    RunConfig,
    RunResult,
    preset,
    random_initial,
    run_experiment,
    sinusoid_initial,
)
from .diagnostics import (
    DiagnosticsRecord,
    complementarity_residual,
    compute_record,
    dual_norm_increment,
    energy,
    interface_fraction,
    jk_value,
    projection_residual,
    sign_condition_check,
)
from .kernel import (
    KernelSpec,
    QuadratureError,
    c_gamma_analytic,
    c_gamma_truncated,
    evaluate,
    grad_l1_norm,
    recommended_tau,
    second_moment,
)
from .local_ref import (
    LocalOperators,
    assemble_local,
    local_energy,
    local_record,
    local_run,
    local_step,
)
from .mesh import Mesh, build_mesh, classify_node
from .stepper import (
    DegenerateSchemeError,
    SchemeConfig,
    StepState,
    initial_state,
    run,
    step,
)
from .vi_solver import (
    ActiveSetPartition,
    PdasConvergenceError,
    PdasResult,
    SingularSystemError,
    StepProblem,
    pdas_solve,
)

__version__ = "0.1.0"

__all__ = [
    "ActiveSetPartition",
    "CASE_NEUMANN",
    "CASE_REGIONAL",
    "ConfigurationError",
    "DegenerateSchemeError",
    "DiagnosticsRecord",
    "DiscreteOperators",
    "KernelSpec",
    "LocalOperators",
    "Mesh",
    "PdasConvergenceError",
    "PdasResult",
    "QuadratureError",
    "RunConfig",
    "RunResult",
    "SchemeConfig",
    "SingularSystemError",
    "StepProblem",
    "StepState",
    "WellPosednessError",
    "apply_convolution",
    "assemble",
    "assemble_local",
    "bilinear_b",
    "build_mesh",
    "c_gamma_analytic",
    "c_gamma_truncated",
    "classify_node",
    "complementarity_residual",
    "compute_record",
    "dual_norm_increment",
    "dump_convolution",
    "energy",
    "evaluate",
    "grad_l1_norm",
    "initial_state",
    "interface_fraction",
    "jk_value",
    "load_convolution",
    "local_energy",
    "local_record",
    "local_run",
    "local_step",
    "neumann_residual",
    "pdas_solve",
    "preset",
    "projection_residual",
    "random_initial",
    "recommended_tau",
    "run",
    "run_experiment",
    "second_moment",
    "sign_condition_check",
    "sinusoid_initial",
    "step",
    "__version__",
]
