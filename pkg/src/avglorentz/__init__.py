"""Averaged Lorentz dynamics: the Lorentz force as an autoparallel flow,
bunch-moment averaged connections, and cold-fluid approximation diagnostics."""

from .averaging import (
    AveragedConnection,
    ConstantMoments,
    Ensemble,
    KernelMoments,
    MomentSet,
    averaged_coeffs,
    compute_moments,
    normal_frame,
    quadrature_ensemble,
    sample_ensemble,
)
from .diagnostics import (
    BarMetric,
    bar_metric,
    bound_evaluation,
    compare_trajectories,
    diameter,
    fit_power,
    mean_velocity,
    operator_norm,
    theta_diagnostics,
)
from .errors import (
    AvgLorentzError,
    ConfigurationError,
    DegenerateMomentsError,
    DomainError,
    IntegrationAbort,
    NonTimelikeError,
    OutOfDomainError,
)
from .geometry import (
    ConnectionField,
    CylindricalChart,
    FieldConfiguration,
    InertialChart,
    LeviCivitaConnection,
    LorentzConnection,
    Metric,
    autoparallel_acceleration,
    boost_matrix,
    field_tensor,
    lorentz_coeffs,
    make_chart,
)
from .kinetic import (
    CloudMoments,
    DistributionFunction,
    MomentHistory,
    SampleCloud,
    VelocityFieldGrid,
    averaged_vlasov_transport,
    comparison_run,
    distribution_gap,
    evaluate_averaged_distribution,
    evaluate_distribution,
    fluid_residual,
    fluid_vs_particle,
    transport_ensemble,
    vlasov_transport,
)
from .experiments import RunManifest, ScenarioConfig, run_experiment
from .solver import Trajectory, convergence_order, integrate

__version__ = "0.1.0"

__all__ = [
    "AveragedConnection",
    "AvgLorentzError",
    "BarMetric",
    "CloudMoments",
    "ConfigurationError",
    "ConnectionField",
    "ConstantMoments",
    "CylindricalChart",
    "DegenerateMomentsError",
    "DistributionFunction",
    "DomainError",
    "Ensemble",
    "FieldConfiguration",
    "InertialChart",
    "IntegrationAbort",
    "KernelMoments",
    "LeviCivitaConnection",
    "LorentzConnection",
    "Metric",
    "MomentHistory",
    "MomentSet",
    "NonTimelikeError",
    "OutOfDomainError",
    "RunManifest",
    "SampleCloud",
    "ScenarioConfig",
    "Trajectory",
    "VelocityFieldGrid",
    "autoparallel_acceleration",
    "averaged_coeffs",
    "averaged_vlasov_transport",
    "bar_metric",
    "boost_matrix",
    "bound_evaluation",
    "compare_trajectories",
    "comparison_run",
    "compute_moments",
    "convergence_order",
    "diameter",
    "distribution_gap",
    "evaluate_averaged_distribution",
    "evaluate_distribution",
    "field_tensor",
    "fit_power",
    "fluid_residual",
    "fluid_vs_particle",
    "integrate",
    "lorentz_coeffs",
    "make_chart",
    "mean_velocity",
    "normal_frame",
    "operator_norm",
    "quadrature_ensemble",
    "run_experiment",
    "sample_ensemble",
    "theta_diagnostics",
    "transport_ensemble",
    "vlasov_transport",
]
