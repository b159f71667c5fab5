"""Spike-mixture unmixing with parametric PSFs and basin-of-attraction
certification."""

__version__ = "0.1.0"

from .certificate import BasinCertificate, compute_constants, convexity_pair
from .errors import (
    ConditioningError,
    DependencyError,
    DivergenceError,
    DomainError,
    FeasibilityError,
    InputError,
    OutOfBasinError,
    PsfUnmixError,
    SeriesTruncationError,
)
from .experiments import ExperimentConfig, certify, landscape, monte_carlo
from .hessian import eig_extremes, gradient, hessian, loss, weyl_bounds
from .kernels import KernelFamily, eval_kernel, lorentz, make_family
from .metrics import (
    CoherenceTable,
    LipschitzEstimates,
    build_table,
    coherence_function,
    coherence_mu,
    estimate_lipschitz,
    interference,
)
from .model import (
    DictionaryStack,
    MixtureParams,
    SamplingGrid,
    SupportSpec,
    build_dictionary,
    make_grid,
    min_separation,
    synthesize,
)
from .solver import SolveConfig, SolveReport, recovered, solve, solve_eta_linear

__all__ = [
    "BasinCertificate",
    "CoherenceTable",
    "ConditioningError",
    "DependencyError",
    "DictionaryStack",
    "DivergenceError",
    "DomainError",
    "ExperimentConfig",
    "FeasibilityError",
    "InputError",
    "KernelFamily",
    "LipschitzEstimates",
    "MixtureParams",
    "OutOfBasinError",
    "PsfUnmixError",
    "SeriesTruncationError",
    "SamplingGrid",
    "SolveConfig",
    "SolveReport",
    "SupportSpec",
    "build_dictionary",
    "build_table",
    "certify",
    "coherence_function",
    "coherence_mu",
    "compute_constants",
    "convexity_pair",
    "eig_extremes",
    "estimate_lipschitz",
    "eval_kernel",
    "gradient",
    "hessian",
    "interference",
    "landscape",
    "lorentz",
    "loss",
    "make_family",
    "make_grid",
    "min_separation",
    "monte_carlo",
    "recovered",
    "solve",
    "solve_eta_linear",
    "synthesize",
    "weyl_bounds",
]
