"""Domain services for the Source Value engine."""

from .dataset import DatasetService, dataset_service
from .learners import LearnerService, learner_service
from .utility import CallableUtility, ModelUtility
from .valuation import ValuationService, has_converged, valuation_service
from .workflows import WorkflowService, workflow_service
from .experiments import ExperimentService, experiment_service

__all__ = [
    "DatasetService",
    "dataset_service",
    "LearnerService",
    "learner_service",
    "CallableUtility",
    "ModelUtility",
    "ValuationService",
    "has_converged",
    "valuation_service",
    "WorkflowService",
    "workflow_service",
    "ExperimentService",
    "experiment_service",
]
