"""Exact symbol calculus, superconvergent normal forms and spectral checks for
perturbed harmonic oscillators."""
from .config import ConfigError, RunConfig, load_config, parse_config
from .diophantine import (
    FrequencyVector,
    GammaExhausted,
    check_diophantine,
    excised_measure_bound,
    excision_report,
    gamma_sequence,
    golden_frequency,
    golden_omega,
    zone_measure,
)
from .engine import (
    ConvergenceCertificate,
    EngineConfig,
    InvalidPerturbation,
    IterationState,
    LocalityViolation,
    TruncationOverflow,
    epsilon_star,
    kam_step,
    predict_quantization,
    remainder_eval,
    run,
    theoretical_norm_bound,
)
from .norms import (
    DivergentNorm,
    GaussianSymbol,
    fourier_closed_form,
    norm_rho_sigma,
    norm_sigma,
    verify_lemma_estimates,
)
from .quantize import (
    AmbiguousMatch,
    NonHermitian,
    OperatorMatrix,
    heat_flow,
    match_spectrum,
    spectrum,
    toeplitz_matrix_elements,
    weyl_from_antiwick_truncated,
    weyl_matrix_elements,
)
from .scalars import HbarPoly
from .symbols import (
    Frame,
    FrameMismatch,
    PolySymbol,
    ZeroDivisor,
    angular_project,
    decompose_normal,
    lie_transform,
    moyal_bracket,
    poisson_bracket,
    solve_homological,
)

__all__ = [
    "AmbiguousMatch",
    "angular_project",
    "check_diophantine",
    "ConfigError",
    "ConvergenceCertificate",
    "decompose_normal",
    "DivergentNorm",
    "EngineConfig",
    "epsilon_star",
    "excised_measure_bound",
    "excision_report",
    "fourier_closed_form",
    "Frame",
    "FrameMismatch",
    "FrequencyVector",
    "gamma_sequence",
    "GammaExhausted",
    "GaussianSymbol",
    "golden_frequency",
    "golden_omega",
    "HbarPoly",
    "heat_flow",
    "InvalidPerturbation",
    "IterationState",
    "kam_step",
    "lie_transform",
    "load_config",
    "LocalityViolation",
    "match_spectrum",
    "moyal_bracket",
    "NonHermitian",
    "norm_rho_sigma",
    "norm_sigma",
    "OperatorMatrix",
    "parse_config",
    "poisson_bracket",
    "PolySymbol",
    "predict_quantization",
    "remainder_eval",
    "run",
    "RunConfig",
    "solve_homological",
    "spectrum",
    "theoretical_norm_bound",
    "toeplitz_matrix_elements",
    "TruncationOverflow",
    "verify_lemma_estimates",
    "weyl_from_antiwick_truncated",
    "weyl_matrix_elements",
    "ZeroDivisor",
    "zone_measure",
]

__version__ = "0.1.0"
