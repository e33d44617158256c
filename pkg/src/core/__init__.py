# src/core/__init__.py
from .errors import (
    ApsdeError, ConfigError, DivergedError, InconclusiveError, NonPsdError, NotStableError,
    StepTooLargeError, UndecidedError, UnstableError, WindowTooShortError,
)
from .gp_core import GaussianProcessSpec, MarginalGaussian, OuParams
from .evolution import EvolutionSystem, HypothesisAudit, PropagatorEval, StabilityEstimate
from .sampler import PathSample, PathSampler, TimeGrid
from .estimators import McEstimate, UiReport
from .ap_analysis import AlmostPeriodReport, LemmaVerdict, ProbeSequence, SampledFunction

__all__ = [
    "ApsdeError", "ConfigError", "DivergedError", "InconclusiveError", "NonPsdError",
    "NotStableError", "StepTooLargeError", "UndecidedError", "UnstableError", "WindowTooShortError",
    "GaussianProcessSpec", "MarginalGaussian", "OuParams", "EvolutionSystem", "HypothesisAudit",
    "PropagatorEval", "StabilityEstimate", "PathSample", "PathSampler", "TimeGrid",
    "McEstimate", "UiReport", "AlmostPeriodReport", "LemmaVerdict", "ProbeSequence", "SampledFunction",
]
