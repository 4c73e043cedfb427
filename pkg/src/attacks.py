"""Attack loops for targeted, non-targeted and maximal saliency-map attacks."""

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .config import AttackConfig, AttackFamily
from .network import NetworkModel, as_features, forward_logits, input_jacobian, softmax
from .saliency import (
    PairChoice,
    SaliencyMap,
    all_feature_terms,
    best_pair_constrained,
    best_pair_maximal,
    feature_terms,
)
from .storage import PathLike, atomic_write_text


logger = logging.getLogger(__name__)


class StopReason(Enum):
    """Why an attack loop ended, in best-to-worst order."""
    MISCLASSIFIED = "misclassified"
    MAX_ITERS = "max_iters"
    DOMAIN_EXHAUSTED = "domain_exhausted"
    NO_SALIENT_PAIR = "no_salient_pair"

    @property
    def rank(self) -> int:
        return list(StopReason).index(self)


def clip_step(original: float, candidate: float, epsilon: float) -> float:
    """min{1, x + ε, max{0, x - ε, x′}}"""
    return min(1.0, original + epsilon, max(0.0, original - epsilon, candidate))


@dataclass
class SearchState:
    """Mutable loop state owned by a single attack run."""

    x_prime: np.ndarray
    domain: np.ndarray  # boolean mask over features: Γ
    history: np.ndarray  # η
    iteration: int = 0

    @classmethod
    def start(cls, x: np.ndarray) -> "SearchState":
        n = x.shape[0]
        return cls(x_prime=x.copy(), domain=np.ones(n, dtype=bool), history=np.zeros(n))

    @property
    def domain_size(self) -> int:
        return int(np.count_nonzero(self.domain))


@dataclass(frozen=True)
class TraceStep:
    """One iteration: the chosen pair and the prediction after applying it."""
    iteration: int
    target: int
    p: int
    q: int
    score: float
    direction: float
    predicted: int
    confidence: float
    removed: tuple[int, ...] = ()
    blocked: tuple[int, ...] = ()


@dataclass(frozen=True)
class AttackOutcome:
    """Result of one attack run; success holds exactly when it stopped misclassified."""
    adversary: np.ndarray
    success: bool
    iterations: int
    predicted: int
    stop_reason: StopReason
    probabilities: np.ndarray
    trace: tuple[TraceStep, ...] = field(default_factory=tuple)

    def applied_directions(self) -> dict[int, set[float]]:
        """Signs of the steps actually applied to each feature."""
        applied: dict[int, set[float]] = {}
        for step in self.trace:
            for k in (step.p, step.q):
                if k not in step.blocked:
                    applied.setdefault(k, set()).add(float(np.sign(step.direction)))
        return applied


class SaliencyAttack:
    """
    One saliency-map attack family bound to a model.

    Every family shares one loop: check the stop conditions, take the
    Jacobian of x′, pick a pair, move both features by θ′ through the ε clip,
    and drop features that saturate, pin at their ε bound or would reverse
    their last direction.
    """

    def __init__(self, model: NetworkModel, config: AttackConfig):
        """
        Initialize the attack.

        Args:
            model: Victim classifier (shared, never modified)
            config: Family, Jacobian layer, θ, ε and iteration cap
        """
        self.model = model
        self.config = config

    def run(self, x, label: int) -> AttackOutcome:
        """
        Attack `x`.

        Args:
            x: Clean input in [0, 1]^n
            label: Target class t for targeted families, true class y otherwise

        Returns:
            AttackOutcome; failures are reported through its stop_reason
        """
        x = as_features(self.model, x)
        if not 0 <= label < self.model.class_count:
            raise ValueError(f"class {label} outside [0, {self.model.class_count})")

        cfg = self.config
        state = SearchState.start(x)
        trace: list[TraceStep] = []

        while True:
            probs = softmax(forward_logits(self.model, state.x_prime))
            predicted = int(np.argmax(probs))

            if self._goal_reached(predicted, label):
                reason = StopReason.MISCLASSIFIED
                break
            if cfg.max_iters is not None and state.iteration >= cfg.max_iters:
                reason = StopReason.MAX_ITERS
                break
            if state.domain_size < 2:
                reason = StopReason.DOMAIN_EXHAUSTED
                break

            choice = self._choose(state, label)
            if choice is None:
                reason = StopReason.NO_SALIENT_PAIR
                break

            removed, blocked = self._apply(state, x, choice)

            after = softmax(forward_logits(self.model, state.x_prime))
            step = TraceStep(
                iteration=state.iteration,
                target=choice.swept_class,
                p=choice.pair.p,
                q=choice.pair.q,
                score=choice.score,
                direction=choice.direction,
                predicted=int(np.argmax(after)),
                confidence=float(np.max(after)),
                removed=removed,
                blocked=blocked,
            )
            trace.append(step)
            state.iteration += 1
            logger.debug(
                f"[Attack] {cfg.label} i={step.iteration} t={step.target} pair=({step.p},{step.q}) "
                f"gamma={step.score:.6g} theta'={step.direction:+g} y_hat={step.predicted}"
            )

        outcome = AttackOutcome(
            adversary=state.x_prime,
            success=reason is StopReason.MISCLASSIFIED,
            iterations=state.iteration,
            predicted=predicted,
            stop_reason=reason,
            probabilities=probs,
            trace=tuple(trace),
        )
        logger.debug(f"[Attack] {cfg.label} stopped: {reason.value} after {state.iteration} iterations")
        return outcome

    def _goal_reached(self, predicted: int, label: int) -> bool:
        if self.config.family.is_targeted:
            return predicted == label
        return predicted != label

    def _choose(self, state: SearchState, label: int) -> Optional[PairChoice]:
        cfg = self.config
        jac = input_jacobian(self.model, state.x_prime, cfg.layer)

        if cfg.family is AttackFamily.MAXIMAL:
            return best_pair_maximal(all_feature_terms(jac), state.domain, label, cfg.theta)

        terms = feature_terms(jac, label)
        direction = cfg.theta if cfg.family.increases else -cfg.theta
        if cfg.family.is_targeted:
            saliency_map = SaliencyMap.INCREASING if cfg.family.increases else SaliencyMap.DECREASING
        else:
            # non-targeted families push the true class down: maps swap
            saliency_map = SaliencyMap.DECREASING if cfg.family.increases else SaliencyMap.INCREASING
        return best_pair_constrained(terms, state.domain, saliency_map, direction)

    def _apply(self, state: SearchState, x: np.ndarray, choice: PairChoice) -> tuple[tuple[int, ...], tuple[int, ...]]:
        eps = self.config.epsilon
        d = choice.direction
        removed, blocked = [], []

        for k in (choice.pair.p, choice.pair.q):
            if state.history[k] == -d:
                # a reversal is never applied; the feature leaves Γ instead
                blocked.append(k)
                state.domain[k] = False
                removed.append(k)
                continue

            value = clip_step(x[k], state.x_prime[k] + d, eps)
            state.x_prime[k] = value
            bound = x[k] + eps if d > 0 else x[k] - eps
            if not 0.0 < value < 1.0 or value == bound:
                state.domain[k] = False
                removed.append(k)
            state.history[k] = d

        return tuple(removed), tuple(blocked)


def run_targeted(model: NetworkModel, x, target: int, config: AttackConfig) -> AttackOutcome:
    """JSMA±: push x′ into class `target`."""
    if not config.family.is_targeted:
        raise ValueError(f"run_targeted needs a targeted family, got {config.family.value}")
    return SaliencyAttack(model, config).run(x, target)


def run_non_targeted(model: NetworkModel, x, true_class: int, config: AttackConfig) -> AttackOutcome:
    """NT-JSMA±: push x′ out of `true_class`."""
    if not config.family.is_non_targeted:
        raise ValueError(f"run_non_targeted needs a non-targeted family, got {config.family.value}")
    return SaliencyAttack(model, config).run(x, true_class)


def run_maximal(model: NetworkModel, x, true_class: int, config: AttackConfig) -> AttackOutcome:
    """M-JSMA: sweep every class and both directions."""
    if config.family is not AttackFamily.MAXIMAL:
        raise ValueError(f"run_maximal needs the maximal family, got {config.family.value}")
    return SaliencyAttack(model, config).run(x, true_class)


def run_attack(model: NetworkModel, x, label: int, config: AttackConfig) -> AttackOutcome:
    """Dispatch on the family; `label` is t for targeted families and y otherwise."""
    return SaliencyAttack(model, config).run(x, label)


TRACE_FIELDS = ["i", "t", "p", "q", "gamma", "theta_prime", "y_hat", "f_y_hat"]


def trace_csv(outcome: AttackOutcome) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=TRACE_FIELDS, lineterminator="\n")
    writer.writeheader()
    for step in outcome.trace:
        writer.writerow({
            "i": step.iteration,
            "t": step.target,
            "p": step.p,
            "q": step.q,
            "gamma": repr(step.score),
            "theta_prime": repr(step.direction),
            "y_hat": step.predicted,
            "f_y_hat": repr(step.confidence),
        })
    return buf.getvalue()


def write_trace(path: PathLike, outcome: AttackOutcome):
    atomic_write_text(path, trace_csv(outcome))
    logger.info(f"[Attack] Trace of {outcome.iterations} iterations written to {path}")
