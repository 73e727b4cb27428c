#!/usr/bin/env python3
"""
Tests for forward evaluation, losses, gradients and the training loop
"""

import math

import numpy as np
import pytest

from circuit_model import CircuitTemplate, linear_chain_device
from circuit_search import SearchConfig, generate_candidates
from data_pipeline import SPLIT_TRAIN, PreparedDataset
from errors import ConfigurationError, TrainingDivergedError, ValidationError
from metrics import accuracy
from trainer import (
    Adam,
    GradientMode,
    LossKind,
    MeasurementPlan,
    TrainConfig,
    UNDECIDED,
    forward,
    gradient,
    initial_params,
    loss,
    loss_and_gradient,
    observable_gradient,
    predict_class,
    read_train_state,
    train,
    write_history,
)

RY_ONLY = CircuitTemplate(1, (), ((0, "RY"),), (), (0,))


def random_template(rng, n_qubits=4, n_embed=6, n_params=12, measured=(3,)):
    axes = ("RX", "RY", "RZ")
    embedding = tuple((int(rng.integers(0, n_qubits)), axes[rng.integers(0, 3)]) for _ in range(n_embed))
    variational = tuple((int(rng.integers(0, n_qubits)), axes[rng.integers(0, 3)]) for _ in range(n_params))
    n_ent = n_qubits
    positions = rng.choice(n_params + n_ent, size=n_ent, replace=False)
    entanglers = tuple((int(p), i % (n_qubits - 1), i % (n_qubits - 1) + 1) for i, p in enumerate(positions))
    return CircuitTemplate(n_qubits, embedding, variational, entanglers, measured)


def toy_dataset(rng, n=40, n_features=4, n_classes=2):
    features = rng.uniform(0, math.pi, size=(n, n_features))
    labels = np.arange(n) % n_classes
    return PreparedDataset(features, labels, n_classes)


class TestMeasurementPlan:
    """Test target encodings and class decisions"""

    def test_binary_targets(self):
        """Class 0 targets +1, class 1 targets -1"""
        plan = MeasurementPlan(2, (0,))
        assert plan.targets([0, 1]).ravel().tolist() == [1.0, -1.0]

    def test_four_class_corners(self):
        """Class bits (b1, b0) map to (1 - 2 b1, 1 - 2 b0)"""
        plan = MeasurementPlan(4, (2, 3))
        assert plan.targets([0, 1, 2, 3]).tolist() == [[1, 1], [1, -1], [-1, 1], [-1, -1]]

    def test_wrong_qubit_count(self):
        """Plans must measure the qubit count their classes need"""
        with pytest.raises(ConfigurationError):
            MeasurementPlan(4, (3,))

    def test_for_template_takes_last(self, small_template):
        """for_template uses the last measured qubits"""
        template = CircuitTemplate(4, (), (), (), (0, 1, 2, 3))
        assert MeasurementPlan.for_template(template, 4).measured_qubits == (2, 3)
        assert MeasurementPlan.for_template(small_template, 2).measured_qubits == (2,)

    def test_default_loss(self):
        """MSE for 2 and 4 classes, cross-entropy otherwise"""
        assert MeasurementPlan(2, (0,)).default_loss is LossKind.MSE
        assert MeasurementPlan(4, (0, 1)).default_loss is LossKind.MSE
        assert MeasurementPlan(3, (0, 1, 2)).default_loss is LossKind.CROSS_ENTROPY


class TestPredictClass:
    """Test the decision rules"""

    def test_binary_sign(self):
        """<Z> = 0.3 decides class 0 (target +1), negative decides class 1"""
        plan = MeasurementPlan(2, (0,))
        assert predict_class([0.3], plan) == 0
        assert predict_class([-0.3], plan) == 1
        assert predict_class([0.0], plan) == UNDECIDED

    def test_argmax(self):
        """[0.1, 0.7, -0.2] decides class 1"""
        assert predict_class([0.1, 0.7, -0.2], MeasurementPlan(3, (0, 1, 2))) == 1

    def test_nearest_corner(self):
        """(0.9, -0.8) decides the (+1, -1) class"""
        assert predict_class([0.9, -0.8], MeasurementPlan(4, (0, 1))) == 1

    def test_ties_take_lower_index(self):
        """Equal scores resolve to the lower class"""
        assert predict_class([0.5, 0.5, 0.1], MeasurementPlan(3, (0, 1, 2))) == 0

    def test_monotone_invariance(self, rng):
        """Argmax survives strictly monotone transforms"""
        plan = MeasurementPlan(5, (0, 1, 2, 3, 4))
        for _ in range(20):
            e = rng.uniform(-1, 1, size=5)
            assert predict_class(np.tanh(2 * e) + 3, plan) == predict_class(e, plan)


class TestForward:
    """Test analytic expectations"""

    def test_zero_state(self, small_template):
        """Zero features and parameters leave |000> so every <Z> is +1"""
        assert forward(small_template, np.zeros(6), np.zeros(4), measured=(0, 1, 2)).tolist() == [1.0, 1.0, 1.0]

    def test_ry_cosine(self):
        """One RY(theta) gives cos(theta)"""
        for theta in (0.0, 0.4, math.pi / 2, 2.5):
            assert forward(RY_ONLY, [theta], np.zeros(0))[0] == pytest.approx(math.cos(theta), abs=1e-12)

    def test_batch_shape(self, small_template, rng):
        """A batch of features gives one row per sample"""
        out = forward(small_template, rng.uniform(size=6), rng.uniform(0, math.pi, size=(7, 4)))
        assert out.shape == (7, 1)


class TestLoss:
    """Test MSE and cross-entropy"""

    def test_mse_exact_fit(self):
        """Expectations on target give MSE 0"""
        assert loss([1.0], 0, MeasurementPlan(2, (0,))) == 0.0

    def test_mse_opposite(self):
        """Target +1 with <Z> = -1 gives MSE 4"""
        assert loss([-1.0], 0, MeasurementPlan(2, (0,))) == pytest.approx(4.0)

    def test_cross_entropy_uniform(self):
        """Equal 3-way scores give ln 3"""
        plan = MeasurementPlan(3, (0, 1, 2))
        assert loss([0.2, 0.2, 0.2], 1, plan) == pytest.approx(math.log(3))

    def test_cross_entropy_shift_invariant(self, rng):
        """Adding a constant to every expectation leaves cross-entropy unchanged"""
        plan = MeasurementPlan(3, (0, 1, 2))
        e = rng.uniform(-1, 1, size=3)
        assert abs(loss(e + 0.37, 2, plan) - loss(e, 2, plan)) < 1e-12

    def test_label_out_of_range(self):
        """Labels beyond the class count are validation errors"""
        with pytest.raises(ValidationError):
            loss([0.5], 2, MeasurementPlan(2, (0,)))


class TestGradients:
    """Test adjoint and parameter-shift gradients"""

    @pytest.mark.parametrize("theta,expected", [(0.0, 0.0), (math.pi / 2, -1.0)])
    @pytest.mark.parametrize("mode", list(GradientMode))
    def test_ry_derivative(self, theta, expected, mode):
        """d<Z>/dtheta of RY(theta) is -sin(theta)"""
        grad = observable_gradient(RY_ONLY, [theta], np.zeros((1, 0)), [[1.0]], mode)
        assert grad[0] == pytest.approx(expected, abs=1e-12)

    def test_adjoint_matches_parameter_shift(self, rng):
        """Both gradient modes agree within 1e-8 on random circuits"""
        for _ in range(100):
            template = random_template(rng)
            params = rng.uniform(0, 2 * math.pi, size=template.n_params)
            features = rng.uniform(0, math.pi, size=(1, template.n_embed))
            adjoint = observable_gradient(template, params, features, [[1.0]], GradientMode.ADJOINT)
            shift = observable_gradient(template, params, features, [[1.0]], GradientMode.PARAMETER_SHIFT)
            assert np.max(np.abs(adjoint - shift)) < 1e-8

    def test_matches_finite_difference(self, rng):
        """Gradients match central differences (h = 1e-4) within 1e-5 relative"""
        template = random_template(rng, measured=(1, 2, 3))
        plan = MeasurementPlan(3, (1, 2, 3))
        features = rng.uniform(0, math.pi, size=(5, template.n_embed))
        labels = np.array([0, 1, 2, 1, 0])
        params = rng.uniform(0, 2 * math.pi, size=template.n_params)
        h = 1e-4

        def mean_loss(p):
            return loss_and_gradient(template, p, features, labels, plan, TrainConfig())[0]

        numeric = np.zeros_like(params)
        for k in range(len(params)):
            step = np.zeros_like(params)
            step[k] = h
            numeric[k] = (mean_loss(params + step) - mean_loss(params - step)) / (2 * h)
        for mode in GradientMode:
            analytic = gradient(template, params, (features, labels), plan, TrainConfig(gradient_mode=mode))
            assert np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric) < 1e-5

    def test_empty_batch(self, small_template):
        """An empty batch is a validation error"""
        with pytest.raises(ValidationError):
            loss_and_gradient(small_template, np.zeros(6), np.zeros((0, 4)), [], MeasurementPlan(2, (2,)),
                              TrainConfig())


class TestAdam:
    """Test the optimizer"""

    def test_zero_gradient(self):
        """A zero gradient leaves parameters unchanged"""
        params = np.array([0.5, -1.0])
        Adam().step(params, np.zeros(2))
        assert params.tolist() == [0.5, -1.0]

    def test_first_step_size(self):
        """The first bias-corrected step moves each parameter by lr against the gradient sign"""
        params = np.zeros(3)
        Adam(lr=0.1).step(params, np.array([2.0, -0.5, 1e-3]))
        assert params == pytest.approx([-0.1, 0.1, -0.1], rel=1e-4)

    def test_state_round_trip(self):
        """state_dict / load_state_dict continue identically"""
        a, b = Adam(lr=0.05), Adam(lr=0.05)
        pa, pb = np.ones(2), np.ones(2)
        a.step(pa, np.array([0.3, -0.2]))
        b.load_state_dict(a.state_dict())
        pb[:] = pa
        a.step(pa, np.array([0.1, 0.4]))
        b.step(pb, np.array([0.1, 0.4]))
        assert np.array_equal(pa, pb)


class TestTrain:
    """Test the training loop"""

    def test_zero_learning_rate(self, small_template, rng):
        """lr = 0 keeps the initial parameters and a flat loss history"""
        dataset = toy_dataset(rng)
        plan = MeasurementPlan.for_template(small_template, 2)
        result = train(small_template, dataset, plan, TrainConfig(epochs=4, learning_rate=0.0, batch_size=8, seed=3))
        assert np.array_equal(result.final_params.values, initial_params(small_template, 3))
        losses = [r.train_loss for r in result.history]
        assert losses == pytest.approx([losses[0]] * 4, abs=1e-12)

    def test_deterministic(self, small_template, rng):
        """Same seed twice gives identical histories"""
        dataset = toy_dataset(rng)
        plan = MeasurementPlan.for_template(small_template, 2)
        config = TrainConfig(epochs=3, batch_size=8, learning_rate=0.05, seed=11)
        first = train(small_template, dataset, plan, config)
        second = train(small_template, dataset, plan, config)
        assert first.history == second.history
        assert np.array_equal(first.params.values, second.params.values)

    def test_resume_continues_trajectory(self, small_template, rng, tmp_path):
        """Resuming from a written history reproduces the uninterrupted run"""
        dataset = toy_dataset(rng)
        plan = MeasurementPlan.for_template(small_template, 2)
        full = train(small_template, dataset, plan, TrainConfig(epochs=5, batch_size=8, learning_rate=0.05, seed=2))
        head_config = TrainConfig(epochs=2, batch_size=8, learning_rate=0.05, seed=2)
        head = train(small_template, dataset, plan, head_config)
        path = tmp_path / "history.json"
        write_history(str(path), head, head_config, {"seed": 2})
        resumed = train(small_template, dataset, plan,
                        TrainConfig(epochs=5, batch_size=8, learning_rate=0.05, seed=2),
                        resume=read_train_state(str(path)))
        assert resumed.history == full.history
        assert np.array_equal(resumed.final_params.values, full.final_params.values)
        assert resumed.best_epoch == full.best_epoch

    def test_on_epoch_callback(self, small_template, rng):
        """on_epoch sees every epoch record in order"""
        seen = []
        dataset = toy_dataset(rng)
        plan = MeasurementPlan.for_template(small_template, 2)
        train(small_template, dataset, plan, TrainConfig(epochs=3, batch_size=16), on_epoch=seen.append)
        assert [r.epoch for r in seen] == [1, 2, 3]

    def test_divergence_names_epoch_and_batch(self, small_template, rng, mocker):
        """A NaN loss aborts with the epoch and batch index"""
        mocker.patch("trainer.loss_and_gradient", return_value=(float("nan"), np.zeros(6)))
        dataset = toy_dataset(rng)
        plan = MeasurementPlan.for_template(small_template, 2)
        with pytest.raises(TrainingDivergedError) as exc:
            train(small_template, dataset, plan, TrainConfig(epochs=2))
        assert exc.value.epoch == 1
        assert exc.value.batch == 0

    def test_feature_count_mismatch(self, small_template, rng):
        """Datasets must match the template's embedding width"""
        with pytest.raises(ConfigurationError):
            train(small_template, toy_dataset(rng, n_features=5), MeasurementPlan(2, (2,)), TrainConfig(epochs=1))

    def test_config_validation(self):
        """Negative learning rates and empty epochs are rejected"""
        with pytest.raises(ConfigurationError):
            TrainConfig(learning_rate=-0.1)
        with pytest.raises(ConfigurationError):
            TrainConfig(epochs=0)

    @pytest.mark.slow
    def test_two_blob_separable(self, two_blob_prepared):
        """4 qubits, 60 parameters, 50 epochs fit the two-blob fixture to >= 0.95 train accuracy"""
        train_set = two_blob_prepared.split(SPLIT_TRAIN)
        candidates = generate_candidates(SearchConfig(n_candidates=5, seed=1), linear_chain_device(4), 4, 49, 60)
        config = TrainConfig(epochs=50, learning_rate=0.05, batch_size=16, seed=1)
        best = 0.0
        for template in candidates:
            plan = MeasurementPlan.for_template(template, 2)
            result = train(template, train_set, plan, config)
            expectations = forward(template, result.final_params, train_set.features, plan.measured_qubits)
            best = max(best, accuracy(expectations, train_set.labels, plan))
        assert best >= 0.95


if __name__ == "__main__":
    pytest.main([__file__])
