"""Command-line experiment runner with deterministic seeded CSV outputs."""
from .config import EXPERIMENTS, ExperimentConfig, load_config
from .experiments import RunSummary, run_experiment, run_fig2, run_fig3, run_fig4, run_fig5, run_ipp

__all__ = ["EXPERIMENTS", "ExperimentConfig", "RunSummary", "load_config", "run_experiment",
           "run_fig2", "run_fig3", "run_fig4", "run_fig5", "run_ipp"]
