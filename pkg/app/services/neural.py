"""
Dense residual MLP engine.

Forward pass, reverse-mode gradients, Adam and the training loop for the
position model (path gains -> position) and the signal model
(position -> path gains). All arithmetic is float64.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from app.core.config import settings
from app.core.exceptions import DimensionMismatchError, TrainingDivergenceError
from app.core.logging import experiment_logger, log_function_call
from app.core.seeding import derive_seed
from app.core.validation import ArrayValidator
from app.models.dataset import Dataset
from app.models.network import FEATURE_STD_FLOOR, Layer, Model, Normalizer
from app.models.scene import Scene
from app.schemas.neural import ModelArch, ModelRole, TrainConfig


logger = logging.getLogger("fplab.neural")

PREDICT_CHUNK = 8192

FD_STEP = 1e-5
FD_MIN_PARAMS = 50
FD_FRACTION = 0.01
FD_KINK_MARGIN = 1e-3
FD_MAX_RESAMPLES = 50
FD_ABS_FLOOR = 1e-4


def init_model(arch: ModelArch, seed: int) -> Model:
    """He-uniform weights (limit sqrt(6 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    layers: List[Layer] = []
    for fan_in, fan_out in arch.layer_shapes():
        limit = math.sqrt(6.0 / fan_in)
        layers.append((rng.uniform(-limit, limit, size=(fan_in, fan_out)), np.zeros(fan_out)))
    return Model(arch=arch, layers=layers)


def _propagate(model: Model, x: np.ndarray, keep_cache: bool):
    """Run the network on a (batch, input_dim) matrix.

    The cache holds the input of every layer and the hidden pre-activations,
    which is all ``backward`` needs.
    """
    sources = model.arch.skip_sources()
    w0, b0 = model.layers[0]
    z = x @ w0 + b0
    activations = [np.maximum(z, 0.0)]
    pre_activations = [z] if keep_cache else None

    for i in range(1, model.arch.n_hidden + 1):
        w, b = model.layers[i]
        z = activations[i - 1] @ w + b
        a = np.maximum(z, 0.0)
        if sources[i] is not None:
            a = a + activations[sources[i]]
        activations.append(a)
        if keep_cache:
            pre_activations.append(z)
        elif i >= 3:
            # No pattern reaches further back than two layers
            activations[i - 3] = None

    w_out, b_out = model.layers[-1]
    output = activations[-1] @ w_out + b_out
    cache = (x, activations, pre_activations) if keep_cache else None
    return output, cache


def forward(model: Model, inputs) -> np.ndarray:
    """Network output for one input vector or a batch (rows)."""
    single = np.ndim(inputs) == 1
    x = ArrayValidator.as_matrix(inputs, width=model.arch.input_dim, name="network input")
    chunks = [
        _propagate(model, x[start:start + PREDICT_CHUNK], keep_cache=False)[0]
        for start in range(0, x.shape[0], PREDICT_CHUNK)
    ]
    output = np.concatenate(chunks) if chunks else np.empty((0, model.arch.output_dim))
    return output[0] if single else output


def loss_mse(prediction, target) -> float:
    """Squared Euclidean distance, averaged over the batch rows."""
    prediction = ArrayValidator.as_matrix(prediction, name="prediction")
    target = ArrayValidator.as_matrix(target, name="target")
    ArrayValidator.ensure_same_shape(prediction, target, name="prediction and target")
    return float(np.mean(np.sum((prediction - target) ** 2, axis=1)))


def backward(model: Model, cache, grad_output: np.ndarray) -> List[Layer]:
    """Gradients (dW, db) for every layer given dLoss/dOutput."""
    x, activations, pre_activations = cache
    sources = model.arch.skip_sources()
    n_hidden = model.arch.n_hidden
    grads: List[Optional[Layer]] = [None] * len(model.layers)

    w_out, _ = model.layers[-1]
    grads[-1] = (activations[-1].T @ grad_output, grad_output.sum(axis=0))

    grad_activation = [np.zeros_like(a) for a in activations]
    grad_activation[-1] += grad_output @ w_out.T

    for i in range(n_hidden, 0, -1):
        g = grad_activation[i]
        if sources[i] is not None:
            grad_activation[sources[i]] += g
        g_z = g * (pre_activations[i] > 0.0)
        w, _ = model.layers[i]
        grads[i] = (activations[i - 1].T @ g_z, g_z.sum(axis=0))
        grad_activation[i - 1] += g_z @ w.T

    g_z = grad_activation[0] * (pre_activations[0] > 0.0)
    grads[0] = (x.T @ g_z, g_z.sum(axis=0))
    return grads


def loss_and_gradients(model: Model, inputs, targets) -> Tuple[float, List[Layer]]:
    x = ArrayValidator.as_matrix(inputs, width=model.arch.input_dim, name="network input")
    y = ArrayValidator.as_matrix(targets, width=model.arch.output_dim, name="targets")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatchError("inputs and targets differ in length", expected=x.shape[0], actual=y.shape[0])
    output, cache = _propagate(model, x, keep_cache=True)
    residual = output - y
    loss = float(np.mean(np.sum(residual ** 2, axis=1)))
    return loss, backward(model, cache, 2.0 * residual / x.shape[0])


class AdamOptimizer:
    """Adam with bias correction, updating a model in place."""

    def __init__(self, model: Model, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.first_moments = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.layers]
        self.second_moments = [(np.zeros_like(w), np.zeros_like(b)) for w, b in model.layers]

    @classmethod
    def from_config(cls, model: Model, config: TrainConfig, learning_rate: float) -> "AdamOptimizer":
        return cls(model, learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)

    def step(self, model: Model, grads: Sequence[Layer]) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for layer_index, (param_pair, grad_pair) in enumerate(zip(model.layers, grads)):
            for slot in (0, 1):
                param, grad = param_pair[slot], grad_pair[slot]
                m = self.first_moments[layer_index][slot]
                v = self.second_moments[layer_index][slot]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


@log_function_call(logger)
def train(
    model: Model,
    inputs,
    targets,
    config: TrainConfig,
    epochs: Optional[int] = None,
    learning_rate: Optional[float] = None,
    stage: str = "train",
) -> Tuple[Model, List[float]]:
    """Mini-batch Adam on the MSE; returns a trained copy and per-epoch mean losses.

    The input model is left untouched. Shuffling uses ``config.seed``.
    """
    x = ArrayValidator.as_matrix(inputs, width=model.arch.input_dim, name="training inputs")
    y = ArrayValidator.as_matrix(targets, width=model.arch.output_dim, name="training targets")
    ArrayValidator.ensure_non_empty(x, name="training dataset")
    if x.shape[0] != y.shape[0]:
        raise DimensionMismatchError("inputs and targets differ in length", expected=x.shape[0], actual=y.shape[0])

    epochs = config.epochs if epochs is None else epochs
    learning_rate = config.learning_rate if learning_rate is None else learning_rate

    trained = model.copy()
    optimizer = AdamOptimizer.from_config(trained, config, learning_rate)
    rng = np.random.default_rng(config.seed)
    n = x.shape[0]
    history: List[float] = []

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = loss_and_gradients(trained, x[batch], y[batch])
            optimizer.step(trained, grads)
            total += loss * batch.size

        epoch_loss = total / n
        history.append(epoch_loss)
        if not math.isfinite(epoch_loss) or epoch_loss > config.divergence_loss_limit or not trained.is_finite():
            raise TrainingDivergenceError(epoch, epoch_loss, details={"stage": stage})
        if epoch % settings.TRAIN_LOG_EVERY == 0 or epoch == epochs:
            experiment_logger.log_training_progress(stage, epoch, epoch_loss)

    return trained, history


def fine_tune(model: Model, inputs, targets, config: TrainConfig) -> Tuple[Model, List[float]]:
    """Continue training from existing weights with fresh Adam state."""
    return train(
        model,
        inputs,
        targets,
        config,
        epochs=config.fine_tune_epochs,
        learning_rate=config.fine_tune_lr,
        stage="fine_tune",
    )


def _parameter_view(model: Model, flat_index: int) -> Tuple[np.ndarray, int]:
    """Locate a flat parameter index as (tensor, flat offset)."""
    for w, b in model.layers:
        for tensor in (w, b):
            if flat_index < tensor.size:
                return tensor, flat_index
            flat_index -= tensor.size
    raise IndexError(flat_index)


def _near_kink(model: Model, x: np.ndarray) -> bool:
    _, (_, _, pre_activations) = _propagate(model, x, keep_cache=True)
    return any(np.any(np.abs(z) < FD_KINK_MARGIN) for z in pre_activations)


def numeric_gradient(model: Model, x: np.ndarray, y: np.ndarray, tensor: np.ndarray, offset: int, step: float = FD_STEP) -> float:
    """Central difference of the MSE with respect to one parameter entry."""
    flat = tensor.reshape(-1)
    original = flat[offset]
    flat[offset] = original + step
    plus = loss_mse(forward(model, x), y)
    flat[offset] = original - step
    minus = loss_mse(forward(model, x), y)
    flat[offset] = original
    return (plus - minus) / (2.0 * step)


def finite_difference_check(model: Model, sample: Tuple[Sequence[float], Sequence[float]], seed: int = 0) -> float:
    """Maximum relative error between analytic and central-difference gradients.

    Checks a random 1% of the parameters (at least 50). An input that puts
    any pre-activation within 1e-3 of a ReLU kink is replaced by a fresh
    standard-normal draw, up to 50 times.
    """
    rng = np.random.default_rng(seed)
    x = ArrayValidator.as_matrix(sample[0], width=model.arch.input_dim, name="sample input")
    y = ArrayValidator.as_matrix(sample[1], width=model.arch.output_dim, name="sample target")

    for attempt in range(FD_MAX_RESAMPLES):
        if not _near_kink(model, x):
            break
        logger.debug("Gradient check input near a ReLU kink, resampling", extra={"details": {"attempt": attempt}})
        x = rng.standard_normal(x.shape)

    work = model.copy()
    _, grads = loss_and_gradients(work, x, y)
    flat_grads = np.concatenate([np.concatenate([dw.ravel(), db.ravel()]) for dw, db in grads])

    total = work.parameter_count
    count = min(total, max(FD_MIN_PARAMS, int(math.ceil(FD_FRACTION * total))))
    worst = 0.0
    for flat_index in rng.choice(total, size=count, replace=False):
        tensor, offset = _parameter_view(work, int(flat_index))
        analytic = float(flat_grads[flat_index])
        numeric = numeric_gradient(work, x, y, tensor, offset)
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), FD_ABS_FLOOR)
        worst = max(worst, error)
    return worst


def fit_normalizer(dataset: Dataset, scene: Scene) -> Normalizer:
    """Per-feature mean/std from the dataset; positions scaled to [-1, 1] by the scene."""
    ArrayValidator.ensure_non_empty(dataset, name="dataset")
    return Normalizer(
        feature_means=dataset.features.mean(axis=0),
        feature_stds=np.maximum(dataset.features.std(axis=0), FEATURE_STD_FLOOR),
        position_center=scene.center,
        position_half_extent=scene.half_extents,
    )


@dataclass(frozen=True)
class TrainedModel:
    """A trained network bundled with the normalizer it was trained under"""

    model: Model
    normalizer: Normalizer
    role: ModelRole

    def predict_positions(self, features) -> np.ndarray:
        """Metric positions from path gains (position model)."""
        normalized = self.normalizer.normalize_features(
            ArrayValidator.as_matrix(features, width=self.model.arch.input_dim, name="features")
        )
        return self.normalizer.denormalize_positions(forward(self.model, normalized))

    def predict_signals(self, positions) -> np.ndarray:
        """Path gains in dB from metric positions (signal model)."""
        normalized = self.normalizer.normalize_positions(
            ArrayValidator.as_matrix(positions, width=self.model.arch.input_dim, name="positions")
        )
        return self.normalizer.denormalize_features(forward(self.model, normalized))

    def training_pairs(self, dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
        """Normalized (input, target) arrays for this model's role."""
        features = self.normalizer.normalize_features(dataset.features)
        positions = self.normalizer.normalize_positions(dataset.positions)
        if self.role == ModelRole.POSITION:
            return features, positions
        return positions, features


def _seeded(config: TrainConfig, seed: int) -> TrainConfig:
    return config.model_copy(update={"seed": seed})


def train_model(dataset: Dataset, scene: Scene, config: TrainConfig, role: ModelRole, seed: int) -> TrainedModel:
    """Fit a fresh network of the given role on ``dataset``."""
    normalizer = fit_normalizer(dataset, scene)
    if role == ModelRole.POSITION:
        arch = config.arch(dataset.n_features, 2)
    else:
        arch = config.arch(2, dataset.n_features)
    untrained = TrainedModel(model=init_model(arch, derive_seed(seed, "init")), normalizer=normalizer, role=role)
    inputs, targets = untrained.training_pairs(dataset)
    model, history = train(
        untrained.model, inputs, targets, _seeded(config, derive_seed(seed, "shuffle")), stage=f"train_{role.value}"
    )
    logger.info(
        f"Trained {role.value} model on {len(dataset)} samples",
        extra={"seed": seed, "loss": history[-1], "stage": f"train_{role.value}"}
    )
    return TrainedModel(model=model, normalizer=normalizer, role=role)


def fine_tune_model(trained: TrainedModel, dataset: Dataset, config: TrainConfig, seed: int) -> TrainedModel:
    """Fine-tune on ``dataset`` under the normalizer fitted at initial training."""
    inputs, targets = trained.training_pairs(dataset)
    model, _ = fine_tune(trained.model, inputs, targets, _seeded(config, seed))
    return TrainedModel(model=model, normalizer=trained.normalizer, role=trained.role)
