"""Tests for SGD training and distillation."""

import unittest
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, os.path.dirname(__file__))

from src.config import DistillConfig, TrainConfig
from src.datasets import LabeledDataset
from src.network import forward_logits, model_to_text, softmax
from src.trainer import (
    SGDTrainer,
    TrainingError,
    accuracy,
    distill,
    init_model,
    rescale_output,
    soft_targets,
    train,
    training_log_csv,
)
from oracles import affine_model, fixture_data


def blobs(seed: int, count: int = 200) -> LabeledDataset:
    """Two well separated Gaussian blobs in [0, 1]^4."""
    rng = np.random.default_rng(seed)
    labels = np.arange(count) % 2
    centers = np.where(labels[:, None] == 0, 0.25, 0.75)
    features = np.clip(centers + rng.normal(0.0, 0.05, size=(count, 4)), 0.0, 1.0)
    return LabeledDataset(features, labels, 2, (1, 4, 1))


class TestTraining(unittest.TestCase):
    """Test cases for SGDTrainer."""

    def setUp(self):
        """Set up test fixtures."""
        self.config = TrainConfig(epochs=20, batch_size=16, learning_rate=0.1, seed=3, hidden_dims=(8,))
        self.train_set = blobs(0)
        self.test_set = blobs(1)

    def test_separable_blobs(self):
        """Test held-out accuracy on linearly separable data."""
        model = train(self.train_set, self.config)
        self.assertGreaterEqual(accuracy(model, self.test_set), 0.95)

    def test_same_seed_same_weights(self):
        """Test that the seed fixes the trained weights."""
        first = train(self.train_set, self.config)
        second = train(self.train_set, self.config)
        self.assertEqual(model_to_text(first), model_to_text(second))

    def test_zero_epochs_returns_initialization(self):
        """Test that zero epochs return the initial model."""
        config = TrainConfig(epochs=0, seed=3, hidden_dims=(8,))
        model = train(self.train_set, config)
        init_seed = int(np.random.default_rng(3).integers(0, 2 ** 63))
        self.assertEqual(model, init_model(4, (8,), 2, init_seed))

    def test_empty_dataset(self):
        """Test TrainingError for an empty dataset."""
        empty = LabeledDataset(np.zeros((0, 4)), np.zeros(0, dtype=int), 2, (1, 4, 1))
        with self.assertRaises(TrainingError):
            train(empty, self.config)

    def test_divergence_names_the_epoch(self):
        """Test that a diverging run names the failing epoch."""
        config = TrainConfig(epochs=3, batch_size=16, learning_rate=1e300, seed=0, hidden_dims=(8,))
        with np.errstate(all="ignore"):
            with self.assertRaises(TrainingError) as ctx:
                train(self.train_set, config)
        self.assertIn("epoch", str(ctx.exception))

    def test_history_and_log(self):
        """Test one history record per epoch and the log CSV."""
        trainer = SGDTrainer(self.config)
        trainer.fit(self.train_set, evaluation=self.test_set)
        self.assertEqual([r.epoch for r in trainer.history], list(range(1, 21)))
        self.assertIsNotNone(trainer.history[-1].test_accuracy)
        lines = training_log_csv(trainer.history).splitlines()
        self.assertEqual(lines[0], "epoch,loss,train_acc,test_acc")
        self.assertEqual(len(lines), 21)

    def test_loss_decreases_on_fixture(self):
        """Test a non-increasing training loss at a small learning rate."""
        train_set, _ = fixture_data()
        trainer = SGDTrainer(TrainConfig(epochs=8, batch_size=32, learning_rate=0.01, seed=0, hidden_dims=(32,)))
        trainer.fit(train_set)
        losses = [r.loss for r in trainer.history]
        for before, after in zip(losses, losses[1:]):
            self.assertLessEqual(after, before + 1e-9)

    def test_rejects_bad_temperature(self):
        """Test rejection of T ≤ 0."""
        with self.assertRaises(ValueError):
            SGDTrainer(self.config, temperature=0.0)


class TestSoftLabels(unittest.TestCase):
    """Test cases for soft targets and temperature rescaling."""

    def test_high_temperature_example(self):
        """Test soft targets of a fixed teacher at high temperature."""
        teacher = affine_model(np.zeros((2, 3)), np.array([5.0, 0.0]))
        targets = soft_targets(teacher, np.zeros((1, 3)), 100.0)
        np.testing.assert_allclose(targets[0], [0.5125, 0.4875], atol=1e-4)

    def test_rows_sum_to_one(self):
        """Test that every soft-target row sums to one."""
        train_set, _ = fixture_data()
        teacher = init_model(train_set.feature_count, (16,), 10, seed=1)
        for temperature in (1.0, 20.0, 100.0):
            targets = soft_targets(teacher, train_set.features[:50], temperature)
            np.testing.assert_allclose(targets.sum(axis=1), np.ones(50), atol=1e-12)

    def test_unit_temperature_is_plain_softmax(self):
        """Test that T=1 soft targets equal the softmax."""
        teacher = init_model(4, (5,), 3, seed=2)
        features = np.random.default_rng(0).uniform(size=(6, 4))
        targets = soft_targets(teacher, features, 1.0)
        for row, x in zip(targets, features):
            np.testing.assert_allclose(row, softmax(forward_logits(teacher, x)), atol=1e-12)

    def test_rescale_output(self):
        """Test that the rescaled model at T matches the original at 1."""
        model = init_model(4, (5,), 3, seed=4)
        scaled = rescale_output(model, 50.0)
        x = np.full(4, 0.4)
        np.testing.assert_allclose(
            softmax(forward_logits(scaled, x), 50.0), softmax(forward_logits(model, x)), atol=1e-12
        )


class TestDistill(unittest.TestCase):
    """Test cases for distill."""

    def test_class_count_mismatch(self):
        """Test rejection of a teacher with another class count."""
        teacher = init_model(4, (5,), 3, seed=0)
        with self.assertRaises(TrainingError):
            distill(teacher, blobs(0), DistillConfig(temperature=10.0))

    def test_student_learns_teacher(self):
        """Test that the student keeps the teacher's shape and reaches 95% accuracy."""
        config = TrainConfig(epochs=20, batch_size=16, learning_rate=0.1, seed=3, hidden_dims=(8,))
        teacher = train(blobs(0), config)
        student = distill(teacher, blobs(0), DistillConfig(temperature=2.0, train=config))
        self.assertEqual(student.hidden_dims, teacher.hidden_dims)
        self.assertGreaterEqual(accuracy(student, blobs(1)), 0.95)


if __name__ == '__main__':
    unittest.main()
