"""Frequency monotonicity for parabolic equations along Ricci flow.

The package discretises Ricci flow on three model geometries, solves heat,
log-nonlinear and power-nonlinear equations on the evolving metric, builds
the conjugate heat kernel measure, and checks the gradient estimates,
frequency monotonicity and integral Harnack inequalities numerically.
"""
from .config import ConfigError, Scenario, load as load_scenario
from .flow import FlowTrajectory, check_volume_evolution, curvature_envelope, evolve_metric
from .frequency import (
    ConstantRegistry,
    FrequencyTrace,
    WeightFunction,
    compute_D,
    compute_I,
    compute_U_trace,
    correction_heat,
    correction_phi,
    correction_psi,
    fit_minimal_constants,
    registry_for,
)
from .geometry import (
    AxisymSphere,
    ConformalTorus2D,
    FlatTorus2D,
    GeometryError,
    MetricSnapshot,
    ScalarField,
    diameter,
    gradient_norm_sq,
    hessian_norm_sq,
    integrate,
    laplace_beltrami,
    ricci_bounds,
)
from .measure import (
    WeightedMeasure,
    bump_density,
    check_f_evolution,
    check_measure_evolution,
    check_weighted_bochner,
    drift_laplacian,
    weighted_measure_from_K,
)
from .pde import (
    Heat,
    LogNonlinear,
    PowerNonlinear,
    ScalarFieldTrace,
    extremum_bounds,
    solve_conjugate_backward,
    solve_forward,
)
from .verify import (
    CheckReport,
    check_dI_dD_identities,
    check_gradient_estimate,
    check_harnack,
    check_lemma31,
    check_max_principle,
    check_monotonicity,
    run_suite,
)

__version__ = "0.1.0"
