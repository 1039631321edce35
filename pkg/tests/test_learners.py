"""Tests for the learner service."""

import math

import numpy as np
import pytest

from sourcevalue.exceptions import ConfigError, LearnerError
from sourcevalue.models.dataset import Dataset, LabeledPoint, SourceSet
from sourcevalue.models.learner import Evaluator, LearnerHyperparams, LearnerSpec
from sourcevalue.services.learners import PROBA_FLOOR, LearnerService


@pytest.fixture
def learner_service():
    """Fresh learner service instance."""
    return LearnerService()


KINDS = ["logistic_regression", "naive_bayes", "knn"]


class TestFit:
    """Tests for training on subsets."""

    def test_deterministic(self, learner_service, logistic_spec, small_train):
        """Test that repeated fits are bit-identical."""
        a = learner_service.fit(logistic_spec, small_train, [0, 2, 5])
        b = learner_service.fit(logistic_spec, small_train, [0, 2, 5])

        assert a.coef.tobytes() == b.coef.tobytes()
        assert a.intercept.tobytes() == b.intercept.tobytes()

    def test_source_set_matches_index_list(self, learner_service, logistic_spec, small_train):
        """Test that a SourceSet and its index list train the same model."""
        subset = SourceSet.from_indices([1, 4, 6], small_train.n)
        a = learner_service.fit(logistic_spec, small_train, subset)
        b = learner_service.fit(logistic_spec, small_train, [1, 4, 6])

        assert a.coef.tobytes() == b.coef.tobytes()

    @pytest.mark.parametrize("kind", KINDS)
    def test_empty_subset_is_null_model(self, learner_service, small_task, kind):
        """Test the uniform predictor for the empty coalition."""
        train, eval_set = small_task
        model = learner_service.fit(LearnerSpec(kind=kind), train, [])

        assert model.is_null
        proba = learner_service.predict_proba(model, eval_set.features)
        assert np.allclose(proba, 0.5)
        acc, _ = learner_service.evaluate(model, Evaluator(eval_set=eval_set))
        ce, _ = learner_service.evaluate(model, Evaluator(eval_set=eval_set, metric="neg_cross_entropy"))
        assert acc == 0.5
        assert ce == pytest.approx(-math.log(2))

    @pytest.mark.parametrize("kind", KINDS)
    def test_separable_data_fits(self, learner_service, toy_binary, kind):
        """Test that every kind separates a well-separated task."""
        spec = LearnerSpec(kind=kind, hyperparams=LearnerHyperparams(alpha=0.5, epochs=50))
        model = learner_service.fit(spec, toy_binary)

        assert np.array_equal(learner_service.predict(model, toy_binary.features), toy_binary.labels)

    @pytest.mark.parametrize("kind", KINDS)
    def test_probabilities_are_distributions(self, learner_service, small_task, kind):
        """Test that predicted rows sum to one."""
        train, eval_set = small_task
        model = learner_service.fit(LearnerSpec(kind=kind), train)
        proba = learner_service.predict_proba(model, eval_set.features)

        assert proba.shape == (eval_set.n, 2)
        assert np.allclose(proba.sum(axis=1), 1.0)
        assert np.all(proba >= 0)

    def test_single_class_training_predicts_that_class(self, learner_service, logistic_spec):
        """Test that a one-class subset of a binary task predicts only that class near its data."""
        features = np.array([[0.1, 0.0], [0.3, -0.1], [0.2, -0.2], [0.2, 0.0], [0.2, -0.2]])
        train = Dataset(features=features, labels=[1, 1, 1, 1, 1], num_classes=2)
        model = learner_service.fit(logistic_spec, train)
        grid = np.stack(np.meshgrid(np.linspace(-1, 1, 5), np.linspace(-1, 1, 5)), axis=-1).reshape(-1, 2)

        assert np.all(learner_service.predict(model, grid) == 1)

    def test_uniform_weights_match_unweighted(self, learner_service, logistic_spec, small_train):
        """Test that scaling all weights equally changes nothing."""
        a = learner_service.fit(logistic_spec, small_train)
        b = learner_service.fit(logistic_spec, small_train, weights=np.full(small_train.n, 2.0))

        assert a.coef.tobytes() == b.coef.tobytes()

    def test_zero_weight_drops_point(self, learner_service, logistic_spec, small_train):
        """Test that a zero weight is equivalent to leaving the point out."""
        weights = np.ones(small_train.n)
        weights[3] = 0.0
        a = learner_service.fit(logistic_spec, small_train, weights=weights)
        b = learner_service.fit(logistic_spec, small_train, [i for i in range(small_train.n) if i != 3])

        assert np.allclose(a.coef, b.coef)
        assert np.allclose(a.intercept, b.intercept)

    @pytest.mark.parametrize("kind", ["logistic_regression", "naive_bayes"])
    def test_weight_two_matches_duplicated_point(self, learner_service, dataset_service, small_train, kind):
        """Test that weighting a point by 2 trains the same model as listing it twice."""
        spec = LearnerSpec(kind=kind, hyperparams=LearnerHyperparams(alpha=0.5, epochs=50))
        weights = np.ones(small_train.n)
        weights[2] = 2.0
        duplicated = dataset_service.concat(small_train, dataset_service.subset(small_train, [2]))
        weighted = learner_service.fit(spec, small_train, weights=weights)
        repeated = learner_service.fit(spec, duplicated)
        grid = np.random.default_rng(0).standard_normal((25, small_train.feature_dim))

        assert np.allclose(
            learner_service.predict_log_proba(weighted, grid), learner_service.predict_log_proba(repeated, grid), rtol=0, atol=1e-9
        )
        if kind == "logistic_regression":
            assert np.allclose(weighted.coef, repeated.coef, rtol=0, atol=1e-9)
        else:
            assert np.allclose(weighted.means, repeated.means, rtol=1e-12)
            assert np.allclose(weighted.class_log_prior, repeated.class_log_prior, rtol=1e-12)

    @pytest.mark.parametrize("weights", [[1.0, -1.0, 1.0], [1.0, 1.0], [0.0, 0.0, 0.0]])
    def test_bad_weights(self, learner_service, logistic_spec, small_train, weights):
        """Test weight validation."""
        with pytest.raises(LearnerError):
            learner_service.fit(logistic_spec, small_train, [0, 1, 2], weights=weights)

    def test_fit_does_not_touch_input(self, learner_service, logistic_spec, small_train):
        """Test that training leaves the dataset unchanged."""
        before = small_train.features.tobytes()
        learner_service.fit(logistic_spec, small_train)

        assert small_train.features.tobytes() == before

    def test_init_scale_uses_fit_seed(self, learner_service, small_train):
        """Test that random initialization follows fit_seed."""
        hp = LearnerHyperparams(epochs=1, init_scale=0.5)
        a = learner_service.fit(LearnerSpec(hyperparams=hp, fit_seed=1), small_train)
        b = learner_service.fit(LearnerSpec(hyperparams=hp, fit_seed=1), small_train)
        c = learner_service.fit(LearnerSpec(hyperparams=hp, fit_seed=2), small_train)

        assert a.coef.tobytes() == b.coef.tobytes()
        assert not np.array_equal(a.coef, c.coef)


class TestKnn:
    """Tests for the nearest-neighbour learner."""

    def test_k_larger_than_subset(self, learner_service):
        """Test that k is capped at the subset size."""
        train = Dataset(features=[[0.0], [10.0]], labels=[1, 0], num_classes=2)
        model = learner_service.fit(LearnerSpec(kind="knn", hyperparams=LearnerHyperparams(k=5)), train, [0])

        assert learner_service.predict(model, np.array([[3.0], [20.0]])).tolist() == [1, 1]

    def test_nearest_vote(self, learner_service):
        """Test 1-nn prediction."""
        train = Dataset(features=[[0.0], [10.0]], labels=[0, 1], num_classes=2)
        model = learner_service.fit(LearnerSpec(kind="knn", hyperparams=LearnerHyperparams(k=1)), train)

        assert learner_service.predict(model, np.array([[4.0], [6.0]])).tolist() == [0, 1]

    def test_equidistant_neighbours_break_by_index(self, learner_service):
        """Test that the lower-index exemplar wins a distance tie."""
        train = Dataset(features=[[1.0], [-1.0]], labels=[1, 0], num_classes=2)
        model = learner_service.fit(LearnerSpec(kind="knn", hyperparams=LearnerHyperparams(k=1)), train)

        assert learner_service.predict(model, np.array([[0.0]])).tolist() == [1]

    def test_cross_entropy_is_floored(self, learner_service):
        """Test that a certain wrong prediction scores log of the floor."""
        train = Dataset(features=[[0.0]], labels=[0], num_classes=2)
        eval_set = Dataset(features=[[0.0]], labels=[1], num_classes=2)
        model = learner_service.fit(LearnerSpec(kind="knn"), train)
        score, _ = learner_service.evaluate(model, Evaluator(eval_set=eval_set, metric="neg_cross_entropy"))

        assert score == pytest.approx(math.log(PROBA_FLOOR))


class TestGradients:
    """Tests for the differentiable learner's gradient interface."""

    @pytest.fixture
    def point(self):
        return LabeledPoint(features=[0.4, -1.2, 0.7], label=1)

    @pytest.fixture
    def model(self, learner_service):
        spec = LearnerSpec(hyperparams=LearnerHyperparams(init_scale=0.3), fit_seed=5)
        return learner_service.initial_model(spec, 2, 3)

    def test_gradient_matches_finite_differences(self, learner_service, model, point):
        """Test the analytic gradient against central differences."""
        theta = model.theta
        grad = learner_service.point_gradient(model, point)
        eps = 1e-6
        numeric = np.empty_like(theta)
        for j in range(theta.shape[0]):
            step = np.zeros_like(theta)
            step[j] = eps
            up = learner_service.point_loss(learner_service.with_theta(model, theta + step), point)
            down = learner_service.point_loss(learner_service.with_theta(model, theta - step), point)
            numeric[j] = (up - down) / (2 * eps)

        rel = np.abs(grad - numeric) / np.maximum(1e-3, np.abs(grad) + np.abs(numeric))
        assert grad.shape == theta.shape
        assert rel.max() < 1e-4

    def test_step_reduces_point_loss(self, learner_service, model, point):
        """Test that a small step lowers the loss of its own point."""
        stepped = learner_service.gradient_step(model, point, 0.1)

        assert learner_service.point_loss(stepped, point) < learner_service.point_loss(model, point)

    def test_zero_step_is_identity(self, learner_service, model, point):
        """Test alpha = 0."""
        stepped = learner_service.gradient_step(model, point, 0.0)

        assert np.array_equal(stepped.theta, model.theta)

    def test_step_leaves_input_unchanged(self, learner_service, model, point):
        """Test that gradient steps return a new model."""
        before = model.theta.copy()
        learner_service.gradient_step(model, point, 1.0)

        assert np.array_equal(model.theta, before)

    def test_negative_alpha_rejected(self, learner_service, model, point):
        with pytest.raises(LearnerError):
            learner_service.gradient_step(model, point, -0.1)

    def test_null_model_steps_from_zero(self, learner_service, small_train, point):
        """Test that stepping the null model starts from zero parameters."""
        null = learner_service.fit(LearnerSpec(), small_train, [])
        stepped = learner_service.gradient_step(null, point, 1.0)
        zero = learner_service.initial_model(LearnerSpec(), 2, 3)

        assert np.allclose(stepped.theta, -learner_service.point_gradient(zero, point))

    def test_non_differentiable_kind(self, learner_service, small_train, point):
        """Test that only logistic regression exposes gradients."""
        model = learner_service.fit(LearnerSpec(kind="naive_bayes"), small_train)

        with pytest.raises(LearnerError):
            learner_service.point_gradient(model, point)

    def test_theta_round_trip(self, learner_service, model):
        """Test the theta layout."""
        rebuilt = learner_service.with_theta(model, model.theta)

        assert np.array_equal(rebuilt.coef, model.coef)
        assert np.array_equal(rebuilt.intercept, model.intercept)


class TestScoring:
    """Tests for evaluation and bootstrap tolerance."""

    @pytest.mark.parametrize("metric", ["accuracy", "neg_cross_entropy"])
    def test_per_point_average_to_score(self, learner_service, logistic_spec, small_task, metric):
        """Test that per-point scores average to the overall score."""
        train, eval_set = small_task
        model = learner_service.fit(logistic_spec, train)
        score, per_point = learner_service.evaluate(model, Evaluator(eval_set=eval_set, metric=metric, per_point=True))

        assert per_point.shape == (eval_set.n,)
        assert per_point.mean() == pytest.approx(score)

    def test_per_point_off_by_default(self, learner_service, logistic_spec, small_train, accuracy_evaluator):
        model = learner_service.fit(logistic_spec, small_train)

        assert learner_service.evaluate(model, accuracy_evaluator)[1] is None

    def test_accuracy_in_unit_interval(self, learner_service, logistic_spec, small_train, accuracy_evaluator):
        model = learner_service.fit(logistic_spec, small_train)
        score, _ = learner_service.evaluate(model, accuracy_evaluator)

        assert 0.0 <= score <= 1.0

    def test_feature_dim_mismatch(self, learner_service, logistic_spec, toy_binary, accuracy_evaluator):
        """Test scoring a model on an incompatible evaluation set."""
        model = learner_service.fit(logistic_spec, toy_binary)

        with pytest.raises(LearnerError):
            learner_service.evaluate(model, accuracy_evaluator)

    def test_bootstrap_deterministic_and_positive(self, learner_service, logistic_spec, small_train, ce_evaluator):
        """Test bootstrap tolerance reproducibility."""
        model = learner_service.fit(logistic_spec, small_train)
        a = learner_service.bootstrap_tolerance(model, ce_evaluator, B=200, multiplier=1.0, seed=3)
        b = learner_service.bootstrap_tolerance(model, ce_evaluator, B=200, multiplier=1.0, seed=3)
        double = learner_service.bootstrap_tolerance(model, ce_evaluator, B=200, multiplier=2.0, seed=3)

        assert a == b
        assert a > 0.0
        assert double == pytest.approx(2 * a)

    def test_bootstrap_needs_two_samples(self, learner_service, logistic_spec, small_train, ce_evaluator):
        model = learner_service.fit(logistic_spec, small_train)

        with pytest.raises(ConfigError):
            learner_service.bootstrap_tolerance(model, ce_evaluator, B=1)


class TestAlphaSearch:
    """Tests for the G-Shapley step-size search."""

    def test_returns_grid_member(self, learner_service, logistic_spec, small_train, accuracy_evaluator):
        grid = [0.01, 0.1, 1.0]
        best, scores = learner_service.search_gshapley_alpha(small_train, logistic_spec, accuracy_evaluator, grid, seed=0)

        assert best in grid
        assert len(scores) == 3
        assert scores[grid.index(best)] == max(scores)

    def test_requires_differentiable(self, learner_service, small_train, accuracy_evaluator):
        with pytest.raises(LearnerError):
            learner_service.search_gshapley_alpha(small_train, LearnerSpec(kind="knn"), accuracy_evaluator, [0.1])

    def test_empty_grid(self, learner_service, logistic_spec, small_train, accuracy_evaluator):
        with pytest.raises(ConfigError):
            learner_service.search_gshapley_alpha(small_train, logistic_spec, accuracy_evaluator, [])
