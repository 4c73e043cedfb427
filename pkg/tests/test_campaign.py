"""Tests for metrics, best-target sweeps and campaign reports."""

import unittest
import math
import os
import sys
import tempfile

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, os.path.dirname(__file__))

from src.attacks import StopReason, run_targeted
from src.campaign import (
    REPORT_FIELDS,
    CampaignRunner,
    EmptyCampaignError,
    MetricsRecord,
    VariantSummary,
    best_target_attack,
    dump_adversaries,
    metrics,
    outcome_metrics,
    render_table,
    report_csv,
    run_campaign,
    summarize,
)
from src.config import AttackConfig, AttackFamily
from src.datasets import LabeledDataset
from src.network import JacobianLayer, predict
from oracles import affine_model, random_mlp


JSMA_F = AttackConfig(AttackFamily.TARGETED_INCREASING)
NT_F = AttackConfig(AttackFamily.NON_TARGETED_INCREASING)
M_F = AttackConfig(AttackFamily.MAXIMAL)


def random_dataset(seed: int, count: int = 12) -> tuple:
    """A random 3-class model on 3x3 images and inputs labelled by it."""
    rng = np.random.default_rng(seed)
    model = random_mlp(rng, 9, (6,), 3)
    features = rng.uniform(size=(count, 9))
    labels = np.array([predict(model, x) for x in features])
    return model, LabeledDataset(features, labels, 3, (3, 3, 1))


class TestMetrics(unittest.TestCase):
    """Test cases for metrics."""

    def test_example(self):
        """Test L0, L2 and entropy on a hand-worked case."""
        record = metrics([0.0, 0.0, 0.5], [1.0, 0.0, 0.5], [0.5, 0.5])
        self.assertEqual(record.l0, 1)
        self.assertEqual(record.l2, 1.0)
        self.assertAlmostEqual(record.entropy, math.log(2), places=12)

    def test_identical_inputs(self):
        """Test zero distances for an unchanged input."""
        record = metrics([0.2, 0.4], [0.2, 0.4], [1.0, 0.0, 0.0])
        self.assertEqual((record.l0, record.l2, record.entropy), (0, 0.0, 0.0))

    def test_entropy_bounds(self):
        """Test that entropy stays in [0, ln C]."""
        probs = np.full(10, 0.1)
        record = metrics([0.0], [0.0], probs)
        self.assertLessEqual(record.entropy, math.log(10))
        self.assertGreaterEqual(record.entropy, 0.0)

    def test_length_mismatch(self):
        """Test rejection of inputs of different lengths."""
        with self.assertRaises(ValueError):
            metrics([0.0, 0.0], [0.0], [0.5, 0.5])

    def test_matches_naive_computation(self):
        """Test metrics against plain Python sums."""
        rng = np.random.default_rng(3)
        x = rng.uniform(size=20)
        x_prime = x.copy()
        x_prime[[2, 5, 11]] = [0.0, 1.0, 0.3]
        probs = rng.dirichlet(np.ones(4))
        record = metrics(x, x_prime, probs)
        self.assertEqual(record.l0, sum(1 for a, b in zip(x, x_prime) if a != b))
        self.assertAlmostEqual(record.l2, math.sqrt(sum((a - b) ** 2 for a, b in zip(x, x_prime))), places=12)
        self.assertAlmostEqual(record.entropy, -sum(p * math.log(p) for p in probs), places=12)


class TestBestTarget(unittest.TestCase):
    """Test cases for best_target_attack."""

    def test_two_classes_equals_single_target(self):
        """Test that with two classes the sweep is the single targeted run."""
        model = affine_model([[1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]])
        x = np.array([0.8, 0.0, 0.5])
        outcome, target = best_target_attack(model, x, 0, JSMA_F)
        single = run_targeted(model, x, 1, JSMA_F)
        self.assertEqual(target, 1)
        self.assertEqual(outcome.trace, single.trace)
        self.assertEqual(outcome.adversary.tolist(), single.adversary.tolist())

    def test_picks_the_reachable_target(self):
        """Test that an unreachable class loses to one that can be reached."""
        model = affine_model(
            [[0.0, 0.0, 0.0, 0.0], [2.0, 2.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]],
            [0.5, 0.0, -5.0],
        )
        x = np.array([0.0, 0.0, 0.5, 0.5])
        outcome, target = best_target_attack(model, x, 0, JSMA_F)
        self.assertEqual(target, 1)
        self.assertTrue(outcome.success)
        self.assertEqual(outcome.iterations, 1)

    def test_all_failures_pick_best_stop_reason(self):
        """Test the tie-break among targets that all fail."""
        model = affine_model([[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0], [-2.0, -2.0, -2.0]])
        outcome, target = best_target_attack(model, np.full(3, 0.5), 0, AttackConfig(AttackFamily.TARGETED_INCREASING, JacobianLayer.LOGIT))
        self.assertFalse(outcome.success)
        self.assertEqual(outcome.stop_reason, StopReason.NO_SALIENT_PAIR)
        self.assertEqual(target, 1)

    def test_fewest_iterations_over_every_target(self):
        """Test the sweep against running every target class one by one."""
        for seed in range(4):
            model, dataset = random_dataset(seed, count=6)
            for config in (JSMA_F, AttackConfig(AttackFamily.TARGETED_DECREASING, JacobianLayer.LOGIT, theta=0.5)):
                for x, y in dataset:
                    outcome, target = best_target_attack(model, x, y, config)
                    singles = {t: run_targeted(model, x, t, config) for t in range(3) if t != y}
                    with self.subTest(seed=seed, variant=config.label):
                        self.assertNotEqual(target, y)
                        self.assertEqual(outcome.trace, singles[target].trace)
                        succeeded = [s.iterations for s in singles.values() if s.success]
                        self.assertEqual(outcome.success, bool(succeeded))
                        if succeeded:
                            self.assertEqual(outcome.iterations, min(succeeded))

    def test_rejects_other_families(self):
        """Test that only targeted families are swept."""
        with self.assertRaises(ValueError):
            best_target_attack(affine_model(np.eye(2)), np.zeros(2), 0, M_F)


class TestSummary(unittest.TestCase):
    """Test cases for VariantSummary aggregation."""

    def test_means_over_successes_only(self):
        """Test that failed attempts do not enter the means."""
        records = [
            MetricsRecord(4, 2.0, 0.5, success=True),
            MetricsRecord(100, 9.0, 2.0, success=False),
            MetricsRecord(2, 1.0, 0.1, success=True),
        ]
        summary = summarize(JSMA_F, records)
        self.assertAlmostEqual(summary.success_pct, 200.0 / 3.0)
        self.assertEqual(summary.mean_l0, 3.0)
        self.assertEqual(summary.mean_l2, 1.5)
        self.assertAlmostEqual(summary.mean_entropy, 0.3)

    def test_no_successes_gives_nan_means(self):
        """Test NaN means when nothing succeeds."""
        summary = summarize(JSMA_F, [MetricsRecord(3, 1.0, 0.2)])
        self.assertEqual(summary.success_pct, 0.0)
        self.assertTrue(math.isnan(summary.mean_l0))

    def test_merge_is_linear(self):
        """Test that merging partial summaries equals summarizing everything."""
        a = [MetricsRecord(2, 1.0, 0.1, success=True), MetricsRecord(5, 3.0, 0.2, success=False)]
        b = [MetricsRecord(6, 2.0, 0.4, success=True)]
        merged = summarize(JSMA_F, a).merge(summarize(JSMA_F, b))
        whole = summarize(JSMA_F, a + b)
        self.assertEqual(
            (merged.attempts, merged.successes, merged.total_l0, merged.total_l2),
            (whole.attempts, whole.successes, whole.total_l0, whole.total_l2),
        )
        self.assertIsInstance(merged, VariantSummary)


class TestCampaign(unittest.TestCase):
    """Test cases for CampaignRunner and reports."""

    def setUp(self):
        """Set up test fixtures."""
        self.model, self.dataset = random_dataset(0)
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        """Clean up after tests."""
        self.tmp.cleanup()

    def test_all_misclassified_raises(self):
        """Test EmptyCampaignError when no sample is classified correctly."""
        wrong = LabeledDataset(self.dataset.features, (self.dataset.labels + 1) % 3, 3, (3, 3, 1))
        with self.assertRaises(EmptyCampaignError):
            run_campaign(self.model, wrong, [JSMA_F])

    def test_requires_variants(self):
        """Test rejection of an empty variant list."""
        with self.assertRaises(ValueError):
            run_campaign(self.model, self.dataset, [])

    def test_single_sample_row_equals_record(self):
        """Test that a one-sample row repeats that sample's metrics."""
        report = run_campaign(self.model, self.dataset, [NT_F], sample_limit=1)
        self.assertEqual(report.sample_count, 1)
        result = report.results[NT_F.label][0]
        x = self.dataset.features[result.sample_index]
        record = outcome_metrics(x, result.outcome)
        row = report.rows[0]
        self.assertEqual(row.attempts, 1)
        if record.success:
            self.assertEqual(row.mean_l0, record.l0)
            self.assertEqual(row.mean_l2, record.l2)
        else:
            self.assertTrue(math.isnan(row.mean_l0))

    def test_worker_count_does_not_change_results(self):
        """Test identical reports for 1 and 4 workers."""
        variants = [JSMA_F, NT_F, M_F]
        serial = CampaignRunner(self.model, workers=1).run(self.dataset, variants)
        parallel = CampaignRunner(self.model, workers=4).run(self.dataset, variants)
        self.assertEqual(report_csv(serial), report_csv(parallel))
        self.assertEqual(render_table(serial), render_table(parallel))

    def test_report_layout(self):
        """Test the CSV header, row order and table footer."""
        report = run_campaign(self.model, self.dataset, [JSMA_F, M_F])
        lines = report_csv(report).splitlines()
        self.assertEqual(lines[0], ",".join(REPORT_FIELDS))
        self.assertEqual([line.split(",")[0] for line in lines[1:]], ["JSMA+F", "M-JSMA_F"])
        table = render_table(report)
        self.assertIn("means over successful adversaries only", table)
        self.assertIn("M-JSMA_F", table)
        self.assertEqual(report.config_echo()["sample_count"], report.sample_count)

    def test_select_samples_respects_limit(self):
        """Test that sample_limit keeps the first indices."""
        runner = CampaignRunner(self.model)
        self.assertEqual(runner.select_samples(self.dataset, 5), list(range(5)))

    def test_dump_adversaries(self):
        """Test one image per sample under the variant directory."""
        report = run_campaign(self.model, self.dataset, [NT_F], sample_limit=3)
        dump_adversaries(self.tmp.name, report, self.dataset.image_shape)
        files = sorted(os.listdir(os.path.join(self.tmp.name, NT_F.label)))
        self.assertEqual(files, [f"{i:05d}.pgm" for i in report.sample_indices])

    def test_rejects_bad_worker_count(self):
        """Test rejection of a zero worker count."""
        with self.assertRaises(ValueError):
            CampaignRunner(self.model, workers=0)


if __name__ == '__main__':
    unittest.main()
