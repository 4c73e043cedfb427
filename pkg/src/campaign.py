"""Batch evaluation: per-sample metrics, best-target sweeps and report tables."""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from tqdm import tqdm

from .attacks import AttackOutcome, SaliencyAttack
from .config import AttackConfig
from .datasets import LabeledDataset
from .images import ImageRecord, save_image
from .network import NetworkModel, as_features, predict
from .storage import PathLike, atomic_write_text


logger = logging.getLogger(__name__)

CHANGE_TOLERANCE = 1e-12

REPORT_NOTE = "means over successful adversaries only; entropy H in nats"


class EmptyCampaignError(ValueError):
    """Raised when no sample survives the correctly-classified filter."""


@dataclass(frozen=True)
class MetricsRecord:
    """Distances and prediction entropy of one adversary."""
    l0: int
    l2: float
    entropy: float
    success: bool = False
    iterations: int = 0


def metrics(x, x_prime, probs, success: bool = False, iterations: int = 0) -> MetricsRecord:
    """
    L0, L2 and softmax entropy of an adversary.

    Args:
        x: Clean input
        x_prime: Adversary
        probs: Softmax output for x_prime
        success: Recorded as-is
        iterations: Recorded as-is

    Raises:
        ValueError: If x and x_prime differ in length
    """
    x = np.asarray(x, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if x.shape != x_prime.shape:
        raise ValueError(f"x {x.shape} and x_prime {x_prime.shape} differ in length")

    diff = x_prime - x
    positive = probs[probs > 0]
    entropy = float(-np.sum(positive * np.log(positive)))
    entropy = min(max(entropy, 0.0), math.log(probs.size))
    return MetricsRecord(
        l0=int(np.count_nonzero(np.abs(diff) > CHANGE_TOLERANCE)),
        l2=float(np.sqrt(np.sum(diff * diff))),
        entropy=entropy,
        success=success,
        iterations=iterations,
    )


def outcome_metrics(x, outcome: AttackOutcome) -> MetricsRecord:
    return metrics(x, outcome.adversary, outcome.probabilities, outcome.success, outcome.iterations)


def _failure_key(item: tuple[AttackOutcome, int]):
    outcome, t = item
    return outcome.stop_reason.rank, outcome.iterations, t


def best_target_attack(model: NetworkModel, x, y: int, config: AttackConfig) -> tuple[AttackOutcome, int]:
    """
    Targeted attack towards every t ≠ y; keep the fastest success.

    Successes are ordered by (iterations, t). Without any success the
    failure with the smallest (stop reason, iterations, t) is returned.
    """
    if not config.family.is_targeted:
        raise ValueError(f"best_target_attack needs a targeted family, got {config.family.value}")

    attack = SaliencyAttack(model, config)
    runs = [(attack.run(x, t), t) for t in range(model.class_count) if t != y]

    successes = [run for run in runs if run[0].success]
    if successes:
        return min(successes, key=lambda run: (run[0].iterations, run[1]))
    return min(runs, key=_failure_key)


@dataclass
class VariantSummary:
    """Running totals for one variant; means are over successes only."""

    config: AttackConfig
    attempts: int = 0
    successes: int = 0
    total_l0: float = 0.0
    total_l2: float = 0.0
    total_entropy: float = 0.0

    def add(self, record: MetricsRecord):
        self.attempts += 1
        if record.success:
            self.successes += 1
            self.total_l0 += record.l0
            self.total_l2 += record.l2
            self.total_entropy += record.entropy

    def merge(self, other: "VariantSummary") -> "VariantSummary":
        return replace(
            self,
            attempts=self.attempts + other.attempts,
            successes=self.successes + other.successes,
            total_l0=self.total_l0 + other.total_l0,
            total_l2=self.total_l2 + other.total_l2,
            total_entropy=self.total_entropy + other.total_entropy,
        )

    def _mean(self, total: float) -> float:
        return total / self.successes if self.successes else float("nan")

    @property
    def success_pct(self) -> float:
        return 100.0 * self.successes / self.attempts if self.attempts else float("nan")

    @property
    def mean_l0(self) -> float:
        return self._mean(self.total_l0)

    @property
    def mean_l2(self) -> float:
        return self._mean(self.total_l2)

    @property
    def mean_entropy(self) -> float:
        return self._mean(self.total_entropy)


def summarize(config: AttackConfig, records: Sequence[MetricsRecord]) -> VariantSummary:
    summary = VariantSummary(config)
    for record in records:
        summary.add(record)
    return summary


@dataclass
class SampleResult:
    """One attacked sample of one variant."""
    sample_index: int
    true_class: int
    target: Optional[int]
    outcome: AttackOutcome
    record: MetricsRecord


@dataclass
class CampaignReport:
    """Per-variant rows plus the per-sample results they were built from."""

    rows: list[VariantSummary]
    sample_count: int
    sample_indices: list[int]
    results: dict[str, list[SampleResult]] = field(default_factory=dict)

    def config_echo(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "variants": [row.config.as_dict() for row in self.rows],
        }


class CampaignRunner:
    """Runs a list of attack variants over the correctly-classified samples of a dataset."""

    def __init__(self, model: NetworkModel, workers: int = 1, progress: bool = False):
        """
        Initialize the runner.

        Args:
            model: Victim classifier, shared read-only by all workers
            workers: Thread count for per-sample attacks
            progress: Show a tqdm bar per variant
        """
        if workers < 1:
            raise ValueError(f"workers must be >= 1, got {workers}")
        self.model = model
        self.workers = workers
        self.progress = progress

    def select_samples(self, dataset: LabeledDataset, sample_limit: Optional[int] = None) -> list[int]:
        """Indices of correctly classified samples, in dataset order, capped at `sample_limit`."""
        chosen = []
        for index, (x, y) in enumerate(dataset):
            if sample_limit is not None and len(chosen) >= sample_limit:
                break
            if predict(self.model, x) == y:
                chosen.append(index)
        return chosen

    def attack_sample(self, config: AttackConfig, x, y: int, index: int) -> SampleResult:
        x = as_features(self.model, x)
        if config.family.is_targeted:
            outcome, target = best_target_attack(self.model, x, y, config)
        else:
            outcome, target = SaliencyAttack(self.model, config).run(x, y), None
        return SampleResult(index, y, target, outcome, outcome_metrics(x, outcome))

    def run(
        self,
        dataset: LabeledDataset,
        variants: Sequence[AttackConfig],
        sample_limit: Optional[int] = None,
    ) -> CampaignReport:
        """
        Attack every selected sample with every variant.

        Raises:
            ValueError: If `variants` is empty
            EmptyCampaignError: If no sample is correctly classified
        """
        if not variants:
            raise ValueError("At least one attack variant is required")

        indices = self.select_samples(dataset, sample_limit)
        if not indices:
            raise EmptyCampaignError("No correctly-classified sample to attack")
        logger.info(f"[Campaign] Attacking {len(indices)} correctly-classified samples with {len(variants)} variants")

        rows, results = [], {}
        for config in variants:
            jobs = [(config, dataset.features[i], int(dataset.labels[i]), i) for i in indices]
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                # map keeps submission order, so the reduction below is deterministic
                iterator = pool.map(lambda job: self.attack_sample(*job), jobs)
                sample_results = list(tqdm(
                    iterator, total=len(jobs), desc=config.label, disable=not self.progress, leave=False
                ))
            summary = summarize(config, [r.record for r in sample_results])
            rows.append(summary)
            results[config.label] = sample_results
            logger.info(
                f"[Campaign] {config.label}: success={summary.success_pct:.1f}% "
                f"L0={summary.mean_l0:.2f} L2={summary.mean_l2:.3f} H={summary.mean_entropy:.3f}"
            )

        return CampaignReport(rows=rows, sample_count=len(indices), sample_indices=indices, results=results)


def run_campaign(
    model: NetworkModel,
    dataset: LabeledDataset,
    variants: Sequence[AttackConfig],
    sample_limit: Optional[int] = None,
    workers: int = 1,
) -> CampaignReport:
    return CampaignRunner(model, workers).run(dataset, variants, sample_limit)


def _fmt(value: float, digits: int) -> str:
    return "n/a" if math.isnan(value) else f"{value:.{digits}f}"


def render_table(report: CampaignReport) -> str:
    """Aligned plain-text table, one row per variant."""
    header = ["Attack", "theta", "eps", "%", "L0", "L2", "H"]
    body = [
        [
            row.config.label,
            f"{row.config.theta:g}",
            f"{row.config.epsilon:g}",
            _fmt(row.success_pct, 1),
            _fmt(row.mean_l0, 1),
            _fmt(row.mean_l2, 2),
            _fmt(row.mean_entropy, 2),
        ]
        for row in report.rows
    ]
    widths = [max(len(r[k]) for r in [header] + body) for k in range(len(header))]

    def line(cells):
        first = cells[0].ljust(widths[0])
        rest = [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return " | ".join([first] + rest)

    rule = "-+-".join("-" * w for w in widths)
    lines = [f"# {report.sample_count} samples; {REPORT_NOTE}", line(header), rule]
    lines += [line(cells) for cells in body]
    return "\n".join(lines) + "\n"


REPORT_FIELDS = [
    "variant", "theta", "epsilon", "max_iters", "samples", "successes",
    "success_pct", "mean_l0", "mean_l2", "mean_entropy",
]


def report_csv(report: CampaignReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in report.rows:
        writer.writerow({
            "variant": row.config.label,
            "theta": repr(row.config.theta),
            "epsilon": repr(row.config.epsilon),
            "max_iters": "" if row.config.max_iters is None else row.config.max_iters,
            "samples": row.attempts,
            "successes": row.successes,
            "success_pct": _fmt(row.success_pct, 6),
            "mean_l0": _fmt(row.mean_l0, 6),
            "mean_l2": _fmt(row.mean_l2, 6),
            "mean_entropy": _fmt(row.mean_entropy, 6),
        })
    return buf.getvalue()


def write_report(path: PathLike, report: CampaignReport):
    atomic_write_text(path, report_csv(report))
    logger.info(f"[Campaign] Report written to {path}")


def dump_adversaries(directory: PathLike, report: CampaignReport, image_shape: tuple[int, int, int]):
    """Write every adversary as ``<dir>/<variant>/<sample>.pgm`` (or ``.ppm``)."""
    height, width, channels = image_shape
    suffix = "pgm" if channels == 1 else "ppm"
    count = 0
    for label, sample_results in report.results.items():
        folder = Path(directory) / label
        for result in sample_results:
            record = ImageRecord.from_features(result.outcome.adversary, width, height, channels)
            save_image(folder / f"{result.sample_index:05d}.{suffix}", record)
            count += 1
    logger.info(f"[Campaign] Dumped {count} adversaries under {directory}")
