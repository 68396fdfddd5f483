"""Predicate-guided verification and refinement control for text-to-image generation."""

from .config import NoiseConfig, RunConfig, Thresholds, load_config
from .controller import RefinementResult, run_refinement
from .errors import PredguideError
from .normalize import NormalizationReport, normalize
from .program import ObjectDecl, Predicate, VisualProgram, compile_program
from .verifier import PredicateVerifier, StateVector

__version__ = "0.1.0"

__all__ = [
    "NoiseConfig", "NormalizationReport", "ObjectDecl", "PredguideError", "Predicate", "PredicateVerifier",
    "RefinementResult", "RunConfig", "StateVector", "Thresholds", "VisualProgram", "compile_program",
    "load_config", "normalize", "run_refinement",
]
