"""Simulation and diagnostics for McKean-Vlasov SDEs driven by symmetric alpha-stable noise."""

__version__ = "0.1.0"

from .noise import (  # noqa: E402
    Atomic, DegenerateMeasureError, Isotropic, SpectralMeasure, StableParams, characteristic_exponent,
    sample_decomposed, sample_increment,
)
from .metrics import (  # noqa: E402
    EmpiricalMeasure, MeasureFlow, SupportTooLargeError, dbeta_bracket, dbeta_exact, flow_distance,
    wtilde_beta,
)
from .coefficients import (  # noqa: E402
    CoefficientSpec, Convolution, Custom, EllipticityError, Interaction, ModelError, Scalar, build_family,
    check_flat_derivative, flat_derivative,
)
from .dynamics import NoiseTape, ParticleEnsemble, apply_generator, simulate_linear  # noqa: E402
from .fixed_point import PicardConfig, PicardReport, contraction_diagnostic, picard_solve  # noqa: E402
from .proxy import (  # noqa: E402
    density_fft, derivative_bound_check, gradient_rate_fit, moment_scaling_check,
)
from .harness import Scenario, load_scenario, run_scenario  # noqa: E402

__all__ = [
    "__version__", "Atomic", "CoefficientSpec", "Convolution", "Custom", "DegenerateMeasureError",
    "EllipticityError", "EmpiricalMeasure", "Interaction", "Isotropic", "MeasureFlow", "ModelError",
    "NoiseTape", "ParticleEnsemble", "PicardConfig", "PicardReport", "Scalar", "Scenario", "SpectralMeasure",
    "StableParams", "SupportTooLargeError", "apply_generator", "build_family", "characteristic_exponent",
    "check_flat_derivative", "contraction_diagnostic", "dbeta_bracket", "dbeta_exact", "density_fft",
    "derivative_bound_check", "flat_derivative", "flow_distance", "gradient_rate_fit", "load_scenario",
    "moment_scaling_check", "picard_solve", "run_scenario", "sample_decomposed", "sample_increment",
    "simulate_linear", "wtilde_beta",
]
