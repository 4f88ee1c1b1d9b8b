"""Physics-informed reservoir classifier for gearbox faults with Bayesian readout."""

__version__ = "0.1.0"

from .features import FEATURE_NAMES, FeatureMatrix, extract_features
from .pipeline import Model, PipelineConfig, fit_model, fit_pipeline
from .signals import CHANNELS, FaultLabel, SynthConfig, synthesize_recording

__all__ = [
    "CHANNELS",
    "FEATURE_NAMES",
    "FaultLabel",
    "FeatureMatrix",
    "Model",
    "PipelineConfig",
    "SynthConfig",
    "extract_features",
    "fit_model",
    "fit_pipeline",
    "synthesize_recording",
]
