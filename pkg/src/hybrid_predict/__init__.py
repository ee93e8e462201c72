"""Hybrid trajectory prediction: a learned end-to-end predictor, an IRL planning
predictor, and detectors that decide when to fall back from one to the other."""

from .core import DT, HISTORY_LEN, LABEL_LEN, Dataset, GaussianTrajectory, Scene, Segment, Trajectory, ade
from .frenet import ReferencePath, from_frenet, to_frenet
from .hybrid_eval import ExperimentReport, HybridPredictor, export_scatter, hybrid_predict, run_experiment
from .scenario import ExperimentSpec, build_experiment, default_experiment

__version__ = "0.1.0"

__all__ = [
    "DT", "HISTORY_LEN", "LABEL_LEN", "Dataset", "GaussianTrajectory", "Scene", "Segment", "Trajectory", "ade",
    "ReferencePath", "from_frenet", "to_frenet",
    "ExperimentReport", "HybridPredictor", "export_scatter", "hybrid_predict", "run_experiment",
    "ExperimentSpec", "build_experiment", "default_experiment",
]
