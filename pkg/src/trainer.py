"""Mini-batch SGD training and defensive distillation."""

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from tqdm import tqdm

from .config import DistillConfig, TrainConfig
from .datasets import LabeledDataset
from .network import (
    Activation,
    DenseLayer,
    JacobianLayer,
    NetworkModel,
    input_jacobian,
)
from .storage import PathLike, atomic_write_text


logger = logging.getLogger(__name__)


class TrainingError(ValueError):
    """Raised for empty datasets and diverging runs."""


@dataclass(frozen=True)
class EpochRecord:
    """One line of the training log."""
    epoch: int
    loss: float
    train_accuracy: float
    test_accuracy: Optional[float] = None


def init_model(input_dim: int, hidden_dims, class_count: int, seed: int) -> NetworkModel:
    """Uniform init in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_dims, class_count]
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        s = math.sqrt(6.0 / (fan_in + fan_out))
        last = k == len(dims) - 2
        layers.append(DenseLayer(
            weights=rng.uniform(-s, s, size=(fan_out, fan_in)),
            bias=np.zeros(fan_out),
            activation=Activation.IDENTITY if last else Activation.RELU,
        ))
    return NetworkModel(layers)


def rescale_output(model: NetworkModel, temperature: float) -> NetworkModel:
    """
    Copy of `model` with the output layer multiplied by `temperature`.

    The copy's softmax at that temperature equals the original's softmax at 1.
    """
    *hidden, last = model.layers
    scaled = DenseLayer(last.weights * temperature, last.bias * temperature, last.activation)
    return NetworkModel([*hidden, scaled])


def batch_logits(model: NetworkModel, features: np.ndarray) -> np.ndarray:
    """Logits for a (N, n) matrix; used for soft labels and accuracy."""
    a = np.asarray(features, dtype=np.float64)
    for layer in model.layers:
        a = a @ layer.weights.T + layer.bias
        if layer.activation is Activation.RELU:
            a = np.maximum(a, 0.0)
    return a


def _softmax_rows(logits: np.ndarray, temperature: float) -> np.ndarray:
    scaled = logits / temperature
    e = np.exp(scaled - scaled.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def soft_targets(teacher: NetworkModel, features: np.ndarray, temperature: float) -> np.ndarray:
    """Teacher probabilities softmax(Z(x) / T), one row per sample."""
    return _softmax_rows(batch_logits(teacher, features), temperature)


def accuracy(model: NetworkModel, dataset: LabeledDataset) -> float:
    if len(dataset) == 0:
        return float("nan")
    predictions = np.argmax(batch_logits(model, dataset.features), axis=1)
    return float(np.mean(predictions == dataset.labels))


def mean_gradient_magnitude(model: NetworkModel, dataset: LabeledDataset, temperature: float = 1.0) -> float:
    """Mean over inputs of the mean |∂f_c/∂x_i| of the softmax Jacobian."""
    total = 0.0
    for x, _ in dataset:
        total += float(np.mean(np.abs(input_jacobian(model, x, JacobianLayer.SOFTMAX, temperature).matrix)))
    return total / len(dataset)


def _cross_entropy(logits: np.ndarray, targets: np.ndarray, temperature: float) -> float:
    """Mean cross-entropy from logits through log-softmax; non-finite logits give a non-finite loss."""
    scaled = logits / temperature
    shift = scaled.max(axis=1, keepdims=True)
    log_probs = scaled - shift - np.log(np.exp(scaled - shift).sum(axis=1, keepdims=True))
    return float(-np.sum(targets * log_probs) / logits.shape[0])


class SGDTrainer:
    """
    Plain mini-batch SGD on softmax cross-entropy, optionally at a temperature.

    The gradient with respect to the logits is (softmax(Z/T) - target) / T; it
    is not rescaled by T². The shuffling order and initialization are drawn
    from one generator seeded with `config.seed`.
    """

    def __init__(self, config: TrainConfig, temperature: float = 1.0, progress: bool = False):
        """
        Initialize the trainer.

        Args:
            config: SGD settings
            temperature: Softmax temperature used during training
            progress: Show a tqdm bar over epochs
        """
        if not temperature > 0:
            raise ValueError(f"temperature must be > 0, got {temperature}")
        self.config = config
        self.temperature = temperature
        self.progress = progress
        self.history: list[EpochRecord] = []

    def fit(
        self,
        dataset: LabeledDataset,
        targets: Optional[np.ndarray] = None,
        init: Optional[NetworkModel] = None,
        evaluation: Optional[LabeledDataset] = None,
        hidden_dims: Optional[tuple[int, ...]] = None,
    ) -> NetworkModel:
        """
        Train a model.

        Args:
            dataset: Training samples
            targets: Per-sample target distributions; one-hot labels if None
            init: Starting model; a fresh seeded initialization if None
            evaluation: Held-out set whose accuracy is logged per epoch
            hidden_dims: Architecture for a fresh model (defaults to config)

        Returns:
            The trained model

        Raises:
            TrainingError: If the dataset is empty or the loss stops being finite
        """
        if len(dataset) == 0:
            raise TrainingError("Cannot train on an empty dataset")

        if targets is None:
            targets = np.eye(dataset.class_count)[dataset.labels]
        if targets.shape != (len(dataset), dataset.class_count):
            raise TrainingError(f"targets of shape {targets.shape} do not match the dataset")

        rng = np.random.default_rng(self.config.seed)
        if init is None:
            dims = self.config.hidden_dims if hidden_dims is None else hidden_dims
            init_seed = int(rng.integers(0, 2 ** 63))
            init = init_model(dataset.feature_count, dims, dataset.class_count, init_seed)
        elif init.input_dim != dataset.feature_count or init.class_count != dataset.class_count:
            raise TrainingError(f"{init!r} does not fit {dataset.feature_count} features / {dataset.class_count} classes")

        weights = [np.array(layer.weights) for layer in init.layers]
        biases = [np.array(layer.bias) for layer in init.layers]
        relu = [layer.activation is Activation.RELU for layer in init.layers]
        features = dataset.features
        lr, batch_size, T = self.config.learning_rate, self.config.batch_size, self.temperature

        self.history = []
        epochs = range(1, self.config.epochs + 1)
        for epoch in tqdm(epochs, desc="epochs", disable=not self.progress, leave=False):
            order = rng.permutation(len(dataset))
            for start in range(0, len(order), batch_size):
                batch = order[start:start + batch_size]
                acts, pres = [features[batch]], []
                for W, b, r in zip(weights, biases, relu):
                    z = acts[-1] @ W.T + b
                    pres.append(z)
                    acts.append(np.maximum(z, 0.0) if r else z)

                delta = (_softmax_rows(acts[-1], T) - targets[batch]) / (T * len(batch))
                for k in reversed(range(len(weights))):
                    grad_w = delta.T @ acts[k]
                    grad_b = delta.sum(axis=0)
                    if k > 0:
                        delta = delta @ weights[k]
                        if relu[k - 1]:
                            delta = delta * (pres[k - 1] > 0.0)
                    weights[k] -= lr * grad_w
                    biases[k] -= lr * grad_b

            model = self._assemble(weights, biases, init)
            logits = batch_logits(model, features)
            loss = _cross_entropy(logits, targets, T)
            if not math.isfinite(loss):
                raise TrainingError(f"Training diverged at epoch {epoch}: loss is {loss}")

            record = EpochRecord(
                epoch=epoch,
                loss=loss,
                train_accuracy=float(np.mean(np.argmax(logits, axis=1) == dataset.labels)),
                test_accuracy=accuracy(model, evaluation) if evaluation is not None else None,
            )
            self.history.append(record)
            logger.info(
                f"[Trainer] Epoch {epoch}/{self.config.epochs}: loss={record.loss:.6f} "
                f"train_acc={record.train_accuracy:.4f}"
                + (f" test_acc={record.test_accuracy:.4f}" if record.test_accuracy is not None else "")
            )

        return self._assemble(weights, biases, init)

    @staticmethod
    def _assemble(weights, biases, template: NetworkModel) -> NetworkModel:
        return NetworkModel([
            DenseLayer(W, b, layer.activation)
            for W, b, layer in zip(weights, biases, template.layers)
        ])


def train(
    dataset: LabeledDataset,
    config: TrainConfig,
    temperature: float = 1.0,
    init: Optional[NetworkModel] = None,
    evaluation: Optional[LabeledDataset] = None,
) -> NetworkModel:
    """Train a classifier on hard labels; see `SGDTrainer.fit`."""
    return SGDTrainer(config, temperature).fit(dataset, init=init, evaluation=evaluation)


def distill(
    teacher: NetworkModel,
    dataset: LabeledDataset,
    config: DistillConfig,
    init: Optional[NetworkModel] = None,
    evaluation: Optional[LabeledDataset] = None,
    trainer: Optional[SGDTrainer] = None,
) -> NetworkModel:
    """
    Train a student on the teacher's temperature-T soft labels.

    The student's own softmax is taken at T during training; the returned
    model is meant to be used at T = 1.

    Args:
        teacher: Model providing soft labels softmax(Z_teacher(x) / T)
        dataset: Training inputs (labels are only used for accuracy logging)
        config: Temperature and SGD settings
        init: Starting point for the student; fresh initialization if None
        evaluation: Held-out set for per-epoch accuracy
        trainer: Trainer to use (to read its history afterwards)

    Raises:
        TrainingError: On class-count mismatch, empty data or divergence
    """
    if teacher.class_count != dataset.class_count:
        raise TrainingError(
            f"Teacher predicts {teacher.class_count} classes but the dataset has {dataset.class_count}"
        )
    if len(dataset) == 0:
        raise TrainingError("Cannot distill on an empty dataset")

    hidden_dims = config.student_hidden_dims or teacher.hidden_dims
    if trainer is None:
        trainer = SGDTrainer(config.train, temperature=config.temperature)
    targets = soft_targets(teacher, dataset.features, config.temperature)
    logger.info(f"[Trainer] Distilling at T={config.temperature} into hidden dims {hidden_dims}")
    return trainer.fit(dataset, targets=targets, init=init, evaluation=evaluation, hidden_dims=hidden_dims)


@dataclass(frozen=True)
class DistillationRun:
    """Models and histories produced by `defensive_distillation`."""
    teacher: NetworkModel
    student: NetworkModel
    teacher_history: list[EpochRecord]
    student_history: list[EpochRecord]


def defensive_distillation(
    baseline: NetworkModel,
    dataset: LabeledDataset,
    config: DistillConfig,
    evaluation: Optional[LabeledDataset] = None,
    progress: bool = False,
) -> "DistillationRun":
    """
    Full distillation defense at temperature T.

    A temperature-T teacher is trained on hard labels, its soft labels at T
    train the student at T, and both start from `baseline` with the output
    layer rescaled by T.

    Returns:
        DistillationRun with both models and their training histories
    """
    T = config.temperature
    start = rescale_output(baseline, T)

    student_dims = config.student_hidden_dims
    student_init = start
    if student_dims is not None and tuple(student_dims) != baseline.hidden_dims:
        logger.warning(
            f"[Trainer] Student hidden dims {student_dims} differ from the baseline; "
            "student starts from a fresh initialization"
        )
        student_init = None

    logger.info(f"[Trainer] Training temperature-{T} teacher")
    teacher_trainer = SGDTrainer(config.train, temperature=T, progress=progress)
    teacher = teacher_trainer.fit(dataset, init=start, evaluation=evaluation)

    logger.info("[Trainer] Training distilled student")
    trainer = SGDTrainer(config.train, temperature=T, progress=progress)
    student = distill(teacher, dataset, config, init=student_init, evaluation=evaluation, trainer=trainer)
    return DistillationRun(teacher, student, teacher_trainer.history, trainer.history)


def training_log_csv(history) -> str:
    """Render epoch records as CSV: epoch, loss, train_acc, test_acc."""
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=["epoch", "loss", "train_acc", "test_acc"], lineterminator="\n")
    writer.writeheader()
    for record in history:
        writer.writerow({
            "epoch": record.epoch,
            "loss": repr(record.loss),
            "train_acc": repr(record.train_accuracy),
            "test_acc": "" if record.test_accuracy is None else repr(record.test_accuracy),
        })
    return buf.getvalue()


def write_training_log(path: PathLike, history):
    atomic_write_text(path, training_log_csv(history))
    logger.info(f"[Trainer] Training log written to {path}")
