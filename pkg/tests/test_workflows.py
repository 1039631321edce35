"""Tests for the workflow service."""

import numpy as np
import pytest

from sourcevalue.exceptions import ConfigError, ValuationError
from sourcevalue.models.dataset import Dataset, SourceSet
from sourcevalue.models.learner import Evaluator
from sourcevalue.services.learners import learner_service
from sourcevalue.services.workflows import WorkflowService, value_order


@pytest.fixture
def workflow_service():
    """Fresh workflow service instance."""
    return WorkflowService()


def heldout_fit_score(spec, train, rows, heldout):
    model = learner_service.fit(spec, train, np.sort(np.asarray(rows, dtype=np.int64)))
    return learner_service.evaluate(model, heldout)[0]


class TestValueOrder:
    """Tests for value ordering."""

    def test_descending_ties_by_index(self):
        assert value_order(np.array([1.0, 3.0, 3.0, 0.0]), "desc").tolist() == [1, 2, 0, 3]

    def test_ascending_ties_by_index(self):
        assert value_order(np.array([1.0, 3.0, 3.0, 0.0]), "asc").tolist() == [3, 0, 1, 2]


class TestInspectionCurve:
    """Tests for corrupted-source recall curves."""

    def test_recall_curve(self, workflow_service):
        """Test inspecting the lowest values first."""
        values = np.array([0.5, -1.0, 2.0, 0.0])
        curve = workflow_service.inspection_curve(values, SourceSet.from_indices([1, 3], 4), label="tmc")

        assert curve.label == "tmc"
        assert curve.xs == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert curve.ys == [0.0, 0.5, 1.0, 1.0, 1.0]

    def test_ends_at_full_recall(self, workflow_service):
        """Test that every corrupted source is found by the end."""
        values = workflow_service.random_values(30, seed=2)
        curve = workflow_service.inspection_curve(values, SourceSet.from_indices([4, 9, 17], 30))

        assert curve.ys[0] == 0.0
        assert curve.ys[-1] == 1.0
        assert all(b >= a for a, b in zip(curve.ys, curve.ys[1:]))

    def test_invariant_under_monotone_transform(self, workflow_service):
        """Test that only the ranking of values matters."""
        values = workflow_service.random_values(20, seed=5) - 0.5
        corrupted = SourceSet.from_indices([2, 7, 11], 20)
        raw = workflow_service.inspection_curve(values, corrupted)
        transformed = workflow_service.inspection_curve(np.exp(3.0 * values) + 7.0, corrupted)

        assert raw.ys == transformed.ys

    def test_needs_corruption(self, workflow_service):
        with pytest.raises(ValuationError):
            workflow_service.inspection_curve(np.zeros(3), SourceSet(indices=[], universe_size=3))

    def test_universe_mismatch(self, workflow_service):
        with pytest.raises(ValuationError):
            workflow_service.inspection_curve(np.zeros(3), SourceSet.from_indices([0], 4))

    def test_random_values_deterministic(self, workflow_service):
        a = workflow_service.random_values(10, seed=1)
        b = workflow_service.random_values(10, seed=1)

        assert np.array_equal(a, b)


class TestRemovalAndAddition:
    """Tests for performance curves."""

    @pytest.fixture
    def heldout(self, dataset_service):
        ds = dataset_service.generate_synthetic(n=60, dim=3, relation="linear", seed=23)
        return Evaluator(eval_set=ds, metric="neg_cross_entropy")

    def test_default_step(self, workflow_service):
        assert workflow_service.default_step(10) == 1
        assert workflow_service.default_step(100) == 2

    def test_removal_points(self, workflow_service, logistic_spec, small_train, heldout):
        """Test each point of the removal curve against a direct refit."""
        values = np.arange(small_train.n, dtype=float)[::-1]
        curve = workflow_service.removal_curve(small_train, values, "desc", logistic_spec, heldout, step=2, max_fraction=0.5)
        ranked = value_order(values, "desc")

        assert curve.label == "remove_desc"
        assert curve.xs == [0.0, 0.25, 0.5]
        assert curve.ys[0] == pytest.approx(heldout_fit_score(logistic_spec, small_train, np.arange(8), heldout))
        assert curve.ys[2] == pytest.approx(heldout_fit_score(logistic_spec, small_train, ranked[4:], heldout))

    def test_removal_order_matters(self, workflow_service, logistic_spec, small_train, heldout):
        """Test that asc and desc remove different sources but share the start."""
        values = np.linspace(-1.0, 1.0, small_train.n)
        desc = workflow_service.removal_curve(small_train, values, "desc", logistic_spec, heldout, step=1)
        asc = workflow_service.removal_curve(small_train, values, "asc", logistic_spec, heldout, step=1)

        assert desc.ys[0] == asc.ys[0]
        assert len(desc.xs) == 5
        assert desc.ys[1:] != asc.ys[1:]

    def test_removal_length_mismatch(self, workflow_service, logistic_spec, small_train, heldout):
        with pytest.raises(ValuationError):
            workflow_service.removal_curve(small_train, np.zeros(3), "desc", logistic_spec, heldout)

    def test_removal_bad_step(self, workflow_service, logistic_spec, small_train, heldout):
        with pytest.raises(ConfigError):
            workflow_service.removal_curve(small_train, np.zeros(small_train.n), "desc", logistic_spec, heldout, step=0)

    def test_addition_endpoints(self, workflow_service, dataset_service, logistic_spec, small_train, heldout):
        """Test that addition starts at the base model and ends with the whole pool."""
        base = dataset_service.subset(small_train, [0, 1, 2])
        pool = dataset_service.subset(small_train, [3, 4, 5, 6, 7])
        estimates = np.array([0.1, 0.5, -0.2, 0.3, 0.0])
        curve = workflow_service.addition_curve(base, pool, estimates, "desc", logistic_spec, heldout, step=1, max_fraction=1.0)
        combined = dataset_service.concat(base, pool)

        assert curve.label == "add_desc"
        assert curve.xs == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        assert curve.ys[0] == pytest.approx(heldout_fit_score(logistic_spec, combined, [0, 1, 2], heldout))
        assert curve.ys[1] == pytest.approx(heldout_fit_score(logistic_spec, combined, [0, 1, 2, 4], heldout))
        assert curve.ys[-1] == pytest.approx(heldout_fit_score(logistic_spec, combined, np.arange(8), heldout))

    def test_overlap_warning(self, workflow_service, logistic_spec, small_train, heldout):
        """Test the metadata warning when held-out and valuation sets share rows."""
        curve = workflow_service.removal_curve(
            small_train, np.zeros(small_train.n), "desc", logistic_spec, heldout, step=4, valuation_eval=heldout
        )

        assert curve.metadata["warnings"]

    def test_no_warning_for_disjoint_sets(self, workflow_service, logistic_spec, small_train, heldout, accuracy_evaluator):
        curve = workflow_service.removal_curve(
            small_train, np.zeros(small_train.n), "desc", logistic_spec, heldout, step=4, valuation_eval=accuracy_evaluator
        )

        assert "warnings" not in curve.metadata


class TestValueEstimator:
    """Tests for the value regressor."""

    @pytest.mark.parametrize("kind", ["knn_regressor", "decision_tree"])
    def test_fit_and_estimate(self, workflow_service, small_task, kind):
        train, pool = small_task
        values = np.linspace(0.0, 1.0, train.n)
        est = workflow_service.fit_value_estimator(train, values, kind=kind)
        estimates = workflow_service.estimate(est, pool)

        assert est.input_dim == train.feature_dim + 2
        assert estimates.shape == (pool.n,)
        assert np.all((estimates >= 0.0) & (estimates <= 1.0))

    def test_one_neighbour_recovers_training_values(self, workflow_service, small_train):
        """Test that 1-nn reproduces the values it was fit on."""
        values = np.linspace(-1.0, 1.0, small_train.n)
        est = workflow_service.fit_value_estimator(small_train, values, kind="knn_regressor", k=1)

        assert np.allclose(workflow_service.estimate(est, small_train), values)

    def test_label_is_an_input(self, workflow_service):
        """Test that points with equal features but different labels can get different estimates."""
        train = Dataset(features=[[0.0], [0.0], [5.0], [5.0]], labels=[0, 1, 0, 1], num_classes=2)
        est = workflow_service.fit_value_estimator(train, np.array([1.0, -1.0, 1.0, -1.0]), k=1)
        query = Dataset(features=[[0.1], [0.1]], labels=[0, 1], num_classes=2)

        assert workflow_service.estimate(est, query).tolist() == [1.0, -1.0]

    def test_unknown_kind(self, workflow_service, small_train):
        with pytest.raises(ConfigError):
            workflow_service.fit_value_estimator(small_train, np.zeros(small_train.n), kind="random_forest")

    def test_nonfinite_values(self, workflow_service, small_train):
        values = np.zeros(small_train.n)
        values[0] = np.nan

        with pytest.raises(ValuationError):
            workflow_service.fit_value_estimator(small_train, values)

    def test_pool_dim_mismatch(self, workflow_service, small_train, toy_binary):
        est = workflow_service.fit_value_estimator(small_train, np.zeros(small_train.n))

        with pytest.raises(ValuationError):
            workflow_service.estimate(est, toy_binary)


class TestReweighting:
    """Tests for value-based sample weights."""

    def test_drops_non_positive(self, workflow_service):
        assert workflow_service.adapt_reweight(np.array([2.0, -1.0, 2.0])).tolist() == [1.0, 0.0, 1.0]

    def test_scales_to_mean_one(self, workflow_service):
        assert workflow_service.adapt_reweight(np.array([3.0, 1.0])).tolist() == [1.5, 0.5]

    def test_zero_value_gets_zero_weight(self, workflow_service):
        weights = workflow_service.adapt_reweight(np.array([0.0, 1.0, 3.0]))

        assert weights[0] == 0.0
        assert weights[1:].mean() == pytest.approx(1.0)

    def test_no_positive_values(self, workflow_service):
        with pytest.raises(ValuationError):
            workflow_service.adapt_reweight(np.array([0.0, -1.0]))


class TestRankCorrelation:
    """Tests for Spearman correlation of value vectors."""

    def test_identical_order(self, workflow_service):
        assert workflow_service.rank_correlation([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)

    def test_reversed_order(self, workflow_service):
        assert workflow_service.rank_correlation([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_ties_use_average_ranks(self, workflow_service):
        """Test a tied pair against the closed-form Pearson of average ranks."""
        rho = workflow_service.rank_correlation([1, 2, 2, 3], [1, 2, 3, 4])

        assert rho == pytest.approx(np.corrcoef([1, 2.5, 2.5, 4], [1, 2, 3, 4])[0, 1])

    def test_constant_vector(self, workflow_service):
        assert workflow_service.rank_correlation([1, 1, 1], [1, 2, 3]) == 0.0

    def test_length_mismatch(self, workflow_service):
        with pytest.raises(ValuationError):
            workflow_service.rank_correlation([1, 2, 3], [1, 2, 3, 4])
