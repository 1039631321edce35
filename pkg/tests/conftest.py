"""Pytest configuration and fixtures."""

import os

import numpy as np
import pytest

from sourcevalue.models.dataset import Dataset
from sourcevalue.models.learner import Evaluator, LearnerHyperparams, LearnerSpec
from sourcevalue.services.dataset import DatasetService
from sourcevalue.utils.logger import app_logger


def pytest_configure(config):
    for marker in ("unit", "integration", "slow"):
        config.addinivalue_line("markers", f"{marker}: {marker} tests")


def pytest_collection_modifyitems(config, items):
    """Acceptance-scale runs only execute with SOURCEVALUE_RUN_SLOW=1."""
    if os.environ.get("SOURCEVALUE_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set SOURCEVALUE_RUN_SLOW=1 to run acceptance-scale tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def dataset_service():
    """Fresh dataset service instance."""
    return DatasetService()


@pytest.fixture
def logistic_spec():
    """Default logistic regression learner."""
    return LearnerSpec(kind="logistic_regression", hyperparams=LearnerHyperparams(alpha=0.5, epochs=50))


@pytest.fixture
def small_task(dataset_service):
    """Eight training points and a 40-point evaluation set from one linear task."""
    full = dataset_service.generate_synthetic(n=48, dim=3, relation="linear", seed=11)
    train = dataset_service.subset(full, np.arange(8))
    eval_set = dataset_service.subset(full, np.arange(8, 48))
    return train, eval_set


@pytest.fixture
def small_train(small_task):
    return small_task[0]


@pytest.fixture
def accuracy_evaluator(small_task):
    return Evaluator(eval_set=small_task[1], metric="accuracy")


@pytest.fixture
def ce_evaluator(small_task):
    return Evaluator(eval_set=small_task[1], metric="neg_cross_entropy")


@pytest.fixture
def toy_binary():
    """Hand-made separable binary dataset in two dimensions."""
    features = np.array(
        [
            [-2.0, -1.0],
            [-1.5, -2.0],
            [-1.0, -1.5],
            [-2.5, -0.5],
            [2.0, 1.0],
            [1.5, 2.0],
            [1.0, 1.5],
            [2.5, 0.5],
        ]
    )
    labels = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    return Dataset(features=features, labels=labels, num_classes=2)


@pytest.fixture
def write_csv(tmp_path):
    """Write text to a CSV file under tmp_path and return its path."""

    def _write(text: str, name: str = "data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write


@pytest.fixture
def log_messages():
    """Messages logged at WARNING or above while the test runs."""
    messages = []
    handler_id = app_logger.add(lambda message: messages.append(message.record["message"]), level="WARNING")
    yield messages
    app_logger.remove(handler_id)
