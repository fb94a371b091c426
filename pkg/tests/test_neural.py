import math
from unittest.mock import patch

import numpy as np
import pytest

from app.core.exceptions import DimensionMismatchError, EmptyInputError, TrainingDivergenceError
from app.models.network import FEATURE_STD_FLOOR
from app.schemas.neural import ModelArch, ModelRole, SkipPattern, TrainConfig
from app.services.neural import (
    AdamOptimizer,
    fine_tune,
    fine_tune_model,
    finite_difference_check,
    fit_normalizer,
    forward,
    init_model,
    loss_and_gradients,
    loss_mse,
    numeric_gradient,
    train,
    train_model,
)


def linear_task(n: int = 100, seed: int = 0):
    """y = 2x on n points of [-1, 1]."""
    x = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, 1))
    return x, 2.0 * x


def recording_step(seen):
    original = AdamOptimizer.step

    def step(self, model, grads):
        seen.append((self.t, self.learning_rate))
        original(self, model, grads)

    return step


class TestArchitecture:
    """Test residual MLP shapes"""

    def test_position_model_parameter_count(self):
        """Test 18 -> 120 x 7 -> 2 holds 104,162 parameters"""
        arch = ModelArch(input_dim=18, output_dim=2)
        assert arch.parameter_count == 104_162
        assert init_model(arch, seed=0).parameter_count == 104_162

    def test_signal_model_parameter_count(self):
        """Test 2 -> 120 x 7 -> 18 holds 104,178 parameters"""
        assert ModelArch(input_dim=2, output_dim=18).parameter_count == 104_178

    def test_skip_pairs(self):
        """Test identity skips around hidden pairs, odd last layer plain"""
        arch = ModelArch(input_dim=18, output_dim=2)
        assert arch.skip_sources() == [None, None, 0, None, 2, None, 4, None]
        plain = ModelArch(input_dim=18, output_dim=2, skip_pattern=SkipPattern.NONE)
        assert plain.skip_sources() == [None] * 8

    def test_init_shapes_and_bounds(self):
        """Test He-uniform weights, zero biases and finite entries"""
        arch = ModelArch(input_dim=5, hidden_width=16, n_hidden=3, output_dim=2)
        model = init_model(arch, seed=4)
        for (w, b), (fan_in, fan_out) in zip(model.layers, arch.layer_shapes()):
            assert w.shape == (fan_in, fan_out)
            assert np.all(np.abs(w) <= math.sqrt(6.0 / fan_in))
            assert np.all(b == 0.0)
        assert model.is_finite()

    def test_init_deterministic(self):
        """Test that the seed fixes the weights"""
        arch = ModelArch(input_dim=5, hidden_width=16, n_hidden=3, output_dim=2)
        assert init_model(arch, 1).content_hash() == init_model(arch, 1).content_hash()
        assert init_model(arch, 1).content_hash() != init_model(arch, 2).content_hash()


class TestForward:
    """Test the forward pass"""

    def test_vector_and_batch(self, rng):
        """Test that a vector input gives a vector and matches its batch row"""
        model = init_model(ModelArch(input_dim=4, hidden_width=8, n_hidden=3, output_dim=2), seed=0)
        batch = rng.standard_normal((6, 4))
        outputs = forward(model, batch)
        assert outputs.shape == (6, 2)
        single = forward(model, batch[2])
        assert single.shape == (2,)
        assert np.allclose(single, outputs[2], rtol=0, atol=1e-12)

    def test_chunking_is_transparent(self, rng):
        """Test that prediction in chunks matches a single pass"""
        model = init_model(ModelArch(input_dim=4, hidden_width=8, n_hidden=2, output_dim=3), seed=0)
        batch = rng.standard_normal((10, 4))
        expected = forward(model, batch)
        with patch("app.services.neural.PREDICT_CHUNK", 3):
            chunked = forward(model, batch)
        assert np.allclose(chunked, expected, rtol=0, atol=1e-12)

    def test_wrong_width(self):
        """Test dimension-mismatch on inputs of the wrong width"""
        model = init_model(ModelArch(input_dim=4, hidden_width=8, n_hidden=1, output_dim=2), seed=0)
        with pytest.raises(DimensionMismatchError):
            forward(model, np.zeros((3, 5)))

    def test_bounded_inputs_stay_finite(self, rng):
        """Test finite outputs of the full-size position model for |x| <= 10"""
        model = init_model(ModelArch(input_dim=18, output_dim=2), seed=0)
        outputs = forward(model, rng.uniform(-10.0, 10.0, size=(50, 18)))
        assert np.all(np.isfinite(outputs))

    def test_zero_model_predicts_center(self, center_model):
        """Test that an all-zero position model lands on the scene center"""
        predictions = center_model.predict_positions(np.full((3, 18), -70.0))
        assert np.allclose(predictions, [[30.0, 60.0]] * 3)


class TestLoss:
    """Test the MSE loss"""

    def test_mean_squared_distance(self):
        """Test squared Euclidean distance averaged over rows"""
        assert loss_mse([[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]]) == 1.0

    def test_shape_mismatch(self):
        """Test dimension-mismatch between prediction and target"""
        with pytest.raises(DimensionMismatchError):
            loss_mse(np.zeros((2, 2)), np.zeros((3, 2)))


class TestGradients:
    """Test reverse-mode gradients against central differences"""

    def test_random_small_models(self):
        """Test max relative error < 1e-4 on 20 random small models"""
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            arch = ModelArch(
                input_dim=int(rng.integers(1, 7)),
                hidden_width=int(rng.integers(3, 17)),
                n_hidden=int(rng.integers(0, 5)),
                skip_pattern=SkipPattern.PAIRS if seed % 4 else SkipPattern.NONE,
                output_dim=int(rng.integers(1, 4)),
            )
            model = init_model(arch, seed=seed)
            sample = (rng.standard_normal(arch.input_dim), rng.standard_normal(arch.output_dim))
            assert finite_difference_check(model, sample, seed=seed) < 1e-4, arch

    def test_check_leaves_model_untouched(self, rng):
        """Test that perturbations are undone"""
        model = init_model(ModelArch(input_dim=3, hidden_width=6, n_hidden=2, output_dim=2), seed=0)
        before = model.content_hash()
        finite_difference_check(model, (rng.standard_normal(3), rng.standard_normal(2)))
        assert model.content_hash() == before

    def test_zero_model_output_bias(self):
        """Test exact agreement on the output bias of a zero-weight model"""
        model = init_model(ModelArch(input_dim=3, hidden_width=5, n_hidden=2, output_dim=2), seed=0)
        for w, b in model.layers:
            w[...] = 0.0
        x = np.array([[0.5, -1.0, 2.0]])
        y = np.array([[1.5, -0.25]])
        _, grads = loss_and_gradients(model, x, y)
        output_bias = model.layers[-1][1]
        for offset in range(2):
            numeric = numeric_gradient(model, x, y, output_bias, offset)
            assert grads[-1][1][offset] == pytest.approx(numeric, rel=1e-8)
        assert grads[-1][1].tolist() == [-3.0, 0.5]

    def test_batch_gradient_is_mean(self, rng):
        """Test that the batch gradient averages the per-row gradients"""
        model = init_model(ModelArch(input_dim=3, hidden_width=6, n_hidden=2, output_dim=2), seed=3)
        x = rng.standard_normal((4, 3))
        y = rng.standard_normal((4, 2))
        _, batch_grads = loss_and_gradients(model, x, y)
        rows = [loss_and_gradients(model, x[i:i + 1], y[i:i + 1])[1] for i in range(4)]
        for layer_index, (dw, db) in enumerate(batch_grads):
            assert np.allclose(dw, np.mean([r[layer_index][0] for r in rows], axis=0))
            assert np.allclose(db, np.mean([r[layer_index][1] for r in rows], axis=0))


class TestTrain:
    """Test mini-batch Adam training"""

    def test_fits_linear_map(self):
        """Test y = 2x, 100 samples, 200 epochs reaches loss < 1e-3"""
        x, y = linear_task()
        model = init_model(ModelArch(input_dim=1, hidden_width=32, n_hidden=2, output_dim=1), seed=0)
        config = TrainConfig(batch_size=10, learning_rate=3e-3, epochs=200, seed=0)
        _, history = train(model, x, y, config)
        assert len(history) == 200
        assert history[-1] < 1e-3

    def test_loss_decreases_first_epochs(self):
        """Test strictly decreasing epoch loss for the first 10 epochs"""
        x, y = linear_task()
        model = init_model(ModelArch(input_dim=1, hidden_width=32, n_hidden=2, output_dim=1), seed=0)
        config = TrainConfig(batch_size=100, learning_rate=1e-3, epochs=10, seed=0)
        _, history = train(model, x, y, config)
        assert all(later < earlier for earlier, later in zip(history, history[1:]))

    def test_returns_copy(self):
        """Test that the input model keeps its weights"""
        x, y = linear_task(20)
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        before = model.content_hash()
        trained, _ = train(model, x, y, TrainConfig(batch_size=5, epochs=3))
        assert model.content_hash() == before
        assert trained.content_hash() != before

    def test_deterministic(self):
        """Test bit-identical weights for identical seeds"""
        x, y = linear_task(30)
        model = init_model(ModelArch(input_dim=1, hidden_width=8, n_hidden=2, output_dim=1), seed=1)
        config = TrainConfig(batch_size=7, epochs=5, seed=9)
        first, first_history = train(model, x, y, config)
        second, second_history = train(model, x, y, config)
        assert first.content_hash() == second.content_hash()
        assert first_history == second_history

    def test_step_count(self):
        """Test one Adam step per mini-batch"""
        x, y = linear_task(25)
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        seen = []
        with patch.object(AdamOptimizer, "step", autospec=True, side_effect=recording_step(seen)):
            train(model, x, y, TrainConfig(batch_size=10, epochs=4))
        assert len(seen) == 4 * 3
        assert [t for t, _ in seen] == list(range(12))

    def test_empty_dataset(self):
        """Test empty-dataset"""
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        with pytest.raises(EmptyInputError):
            train(model, np.empty((0, 1)), np.empty((0, 1)), TrainConfig(epochs=1))

    def test_length_mismatch(self):
        """Test dimension-mismatch between inputs and targets"""
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        with pytest.raises(DimensionMismatchError):
            train(model, np.zeros((5, 1)), np.zeros((4, 1)), TrainConfig(epochs=1))

    def test_non_finite_loss_aborts(self):
        """Test divergence on NaN targets"""
        x, y = linear_task(10)
        y[3, 0] = np.nan
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        with pytest.raises(TrainingDivergenceError) as exc_info:
            train(model, x, y, TrainConfig(epochs=5))
        assert exc_info.value.epoch == 1
        assert exc_info.value.details["stage"] == "train"

    def test_loss_limit_aborts(self):
        """Test divergence once the epoch loss exceeds the configured limit"""
        x, y = linear_task(10)
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        with pytest.raises(TrainingDivergenceError):
            train(model, x, 100.0 * y, TrainConfig(epochs=5, divergence_loss_limit=1e-9))

    def test_logs_final_epoch(self):
        """Test that progress is reported at the last epoch"""
        x, y = linear_task(10)
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        with patch("app.services.neural.experiment_logger") as mock_logger:
            _, history = train(model, x, y, TrainConfig(epochs=3), stage="toy")
        mock_logger.log_training_progress.assert_called_once_with("toy", 3, history[-1])


class TestFineTune:
    """Test fine-tuning from existing weights"""

    def test_fresh_optimizer_and_fine_tune_rate(self):
        """Test that fine-tuning restarts Adam at t = 0 with fine_tune_lr"""
        x, y = linear_task(20)
        config = TrainConfig(batch_size=20, epochs=3, fine_tune_epochs=2, learning_rate=1e-3, fine_tune_lr=5e-4)
        model = init_model(ModelArch(input_dim=1, hidden_width=4, n_hidden=1, output_dim=1), seed=0)
        trained, _ = train(model, x, y, config)

        seen = []
        with patch.object(AdamOptimizer, "step", autospec=True, side_effect=recording_step(seen)):
            tuned, history = fine_tune(trained, x, y, config)
        assert seen == [(0, 5e-4), (1, 5e-4)]
        assert len(history) == 2
        assert tuned.content_hash() != trained.content_hash()

    def test_fine_tune_model_keeps_normalizer(self, small_pool, coarse_scene, tiny_train_config):
        """Test that the normalizer fitted at initial training is reused"""
        trained = train_model(small_pool, coarse_scene, tiny_train_config, ModelRole.POSITION, seed=3)
        tuned = fine_tune_model(trained, small_pool.take(range(50)), tiny_train_config, seed=4)
        assert tuned.normalizer is trained.normalizer
        assert tuned.role == ModelRole.POSITION
        assert tuned.model.content_hash() != trained.model.content_hash()


class TestNormalizer:
    """Test feature and position normalization"""

    def test_center_maps_to_origin(self, small_pool, scene):
        """Test position (30, 60) -> (0, 0)"""
        normalizer = fit_normalizer(small_pool, scene)
        assert normalizer.normalize_positions(np.array([[30.0, 60.0]])).tolist() == [[0.0, 0.0]]
        assert normalizer.normalize_positions(np.array([[60.0, 0.0]])).tolist() == [[1.0, -1.0]]

    def test_position_round_trip(self, small_pool, scene):
        """Test round trip within 1e-9 m"""
        normalizer = fit_normalizer(small_pool, scene)
        restored = normalizer.denormalize_positions(normalizer.normalize_positions(small_pool.positions))
        assert np.max(np.abs(restored - small_pool.positions)) <= 1e-9

    def test_standardized_features(self, small_pool, scene):
        """Test zero mean and unit std of normalized features"""
        normalized = fit_normalizer(small_pool, scene).normalize_features(small_pool.features)
        assert np.allclose(normalized.mean(axis=0), 0.0, atol=1e-9)
        assert np.allclose(normalized.std(axis=0), 1.0)

    def test_constant_feature_floor(self, small_pool, scene):
        """Test that a constant column gets the std floor"""
        features = small_pool.features.copy()
        features[:, 0] = -80.0
        constant = small_pool.__class__(
            positions=small_pool.positions,
            features=features,
            los_flags=small_pool.los_flags,
            bs_ids=small_pool.bs_ids,
            pool_indices=small_pool.pool_indices,
        )
        normalizer = fit_normalizer(constant, scene)
        assert normalizer.feature_stds[0] == FEATURE_STD_FLOOR
        assert np.all(np.isfinite(normalizer.normalize_features(features)))

    def test_empty_dataset(self, small_pool, scene):
        """Test empty-dataset"""
        with pytest.raises(EmptyInputError):
            fit_normalizer(small_pool.take([]), scene)


class TestTrainedModel:
    """Test role-aware model bundles"""

    def test_position_model(self, small_pool, coarse_scene, tiny_train_config):
        """Test an 18 -> 2 network predicting finite metric positions"""
        trained = train_model(small_pool, coarse_scene, tiny_train_config, ModelRole.POSITION, seed=1)
        assert (trained.model.arch.input_dim, trained.model.arch.output_dim) == (18, 2)
        predictions = trained.predict_positions(small_pool.features)
        assert predictions.shape == (len(small_pool), 2)
        assert np.all(np.isfinite(predictions))

    def test_signal_model(self, small_pool, coarse_scene, tiny_train_config):
        """Test a 2 -> 18 network predicting path gains"""
        trained = train_model(small_pool, coarse_scene, tiny_train_config, ModelRole.SIGNAL, seed=1)
        assert (trained.model.arch.input_dim, trained.model.arch.output_dim) == (2, 18)
        inputs, targets = trained.training_pairs(small_pool)
        assert inputs.shape == (len(small_pool), 2)
        assert targets.shape == (len(small_pool), 18)
        assert trained.predict_signals(small_pool.positions[:5]).shape == (5, 18)

    def test_seeded_training(self, small_pool, coarse_scene, tiny_train_config):
        """Test identical models for identical seeds"""
        first = train_model(small_pool, coarse_scene, tiny_train_config, ModelRole.POSITION, seed=5)
        second = train_model(small_pool, coarse_scene, tiny_train_config, ModelRole.POSITION, seed=5)
        assert first.model.content_hash() == second.model.content_hash()
