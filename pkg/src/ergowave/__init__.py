"""Spectral simulation and empirical ergodicity toolkit for the
stochastically forced, velocity-damped wave equation on an interval."""

from .model import (
    ModelSpec,
    Nonlinearity,
    NoiseSpec,
    State,
    ValidationReport,
    big_phi,
    default_model_spec,
    generator_phi,
    generator_phi_pow,
    pair_distance,
    phi_functionals,
    validate_assumptions,
)
from .spectral import (
    SpectralField,
    eigenvalue,
    eigenvalues,
    from_grid,
    lebesgue_norm,
    sobolev_norm_sq,
    to_grid,
)
from .integrator import (
    Ensemble,
    ModeFlows,
    PathDiagnostics,
    StepperConfig,
    build_mode_flows,
    sample_ensemble,
    simulate,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "ModelSpec", "Nonlinearity", "NoiseSpec", "State", "ValidationReport",
    "big_phi", "default_model_spec", "generator_phi", "generator_phi_pow",
    "pair_distance", "phi_functionals", "validate_assumptions",
    "SpectralField", "eigenvalue", "eigenvalues", "from_grid",
    "lebesgue_norm", "sobolev_norm_sq", "to_grid",
    "Ensemble", "ModeFlows", "PathDiagnostics", "StepperConfig",
    "build_mode_flows", "sample_ensemble", "simulate", "step",
    "__version__",
]
