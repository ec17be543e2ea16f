"""Free-energy estimation, system identification and precision learning."""
from .estimation import StateEstimate, estimate_states, free_energy
from .learning import LearningSchedule, learn_parameter_precision, learn_parameters, write_run_report
from .model import (
    KNOWN_PRIOR_PRECISION,
    EmbeddedData,
    FreeEnergyBreakdown,
    GenerativeModel,
    Posterior,
    embed_data,
    noise_precision_from_lambda,
    prediction_errors,
)

__all__ = [
    "KNOWN_PRIOR_PRECISION",
    "EmbeddedData",
    "FreeEnergyBreakdown",
    "GenerativeModel",
    "LearningSchedule",
    "Posterior",
    "StateEstimate",
    "embed_data",
    "estimate_states",
    "free_energy",
    "learn_parameter_precision",
    "learn_parameters",
    "noise_precision_from_lambda",
    "prediction_errors",
    "write_run_report",
]
