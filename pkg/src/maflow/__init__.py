"""Parabolic complex Monge-Ampere flows on flat Kahler tori.

The package integrates  d(phi)/dt = log det(I + t*chi + Hess phi) - log Omega
- F(t, z, phi)  on the torus R^{2n}/Z^{2n} (n = 1 or 2) from smooth or merely
bounded quasi-psh initial data, and turns the standard a priori estimates,
comparison principles, and regularization limits into executable checks with
signed margins.
"""

from .errors import (
    CertificateError,
    ConeExitError,
    ConfigError,
    HorizonTooLongError,
    MaflowError,
    MissingSnapshotsError,
    MonotonicityError,
    NewtonDivergedError,
    NotKahlerError,
    NumericError,
    RepairTooLargeError,
    UnresolvableError,
)
from .flow import (
    DrivingTerm,
    FlowConfig,
    FlowTrajectory,
    instantaneous_residuals,
    monotone_reduction,
    residual_certificate,
    run,
    run_cascade,
    run_nef,
    uniqueness_rescale,
)
from .geometry import (
    MetricPath,
    VolumeForm,
    certify_metric_path,
    check_trace_inequality,
    ma_density,
    trace_inequality_slacks,
)
from .grid import HermitianField, ScalarField, TorusGrid, oscillation
from .psh import (
    MollificationLadder,
    RegularizationSchedule,
    RoughPotential,
    capacity_lower_bound,
    energy,
    mollify_decreasing,
    psh_margin,
)
from .verify import (
    MarginReport,
    check_apriori_bounds,
    check_comparison,
    comparison_tolerance,
    check_convergence_modes,
    check_energy_monotonicity,
    check_gradient_laplacian,
    check_residual_certificate,
    check_stability,
    check_time_derivative,
    check_transform_roundtrip,
    check_uniqueness,
    trajectory_series,
    write_reports,
)

__version__ = "0.1.0"

__all__ = [
    "CertificateError",
    "ConeExitError",
    "ConfigError",
    "DrivingTerm",
    "FlowConfig",
    "FlowTrajectory",
    "HermitianField",
    "HorizonTooLongError",
    "MaflowError",
    "MarginReport",
    "MetricPath",
    "MissingSnapshotsError",
    "MollificationLadder",
    "MonotonicityError",
    "NewtonDivergedError",
    "NotKahlerError",
    "NumericError",
    "RegularizationSchedule",
    "RepairTooLargeError",
    "RoughPotential",
    "ScalarField",
    "TorusGrid",
    "UnresolvableError",
    "VolumeForm",
    "capacity_lower_bound",
    "certify_metric_path",
    "check_apriori_bounds",
    "check_comparison",
    "check_convergence_modes",
    "check_energy_monotonicity",
    "check_gradient_laplacian",
    "check_residual_certificate",
    "check_stability",
    "check_time_derivative",
    "check_trace_inequality",
    "check_transform_roundtrip",
    "check_uniqueness",
    "comparison_tolerance",
    "energy",
    "instantaneous_residuals",
    "ma_density",
    "mollify_decreasing",
    "monotone_reduction",
    "oscillation",
    "psh_margin",
    "residual_certificate",
    "run",
    "run_cascade",
    "run_nef",
    "trace_inequality_slacks",
    "trajectory_series",
    "uniqueness_rescale",
    "write_reports",
]
