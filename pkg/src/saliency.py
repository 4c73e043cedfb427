"""Saliency terms and the pixel-pair searches behind every attack family."""

import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .network import ClassJacobian


logger = logging.getLogger(__name__)


class DomainExhaustedError(ValueError):
    """Raised when fewer than two indices remain in the search domain."""


class SaliencyMap(Enum):
    """Sign conditions on the pair sums A = α_p+α_q and B = β_p+β_q."""
    INCREASING = "S+"  # A > 0 and B < 0
    DECREASING = "S-"  # A < 0 and B > 0


@dataclass(frozen=True)
class FeatureTerms:
    """α_i = ∂out_t/∂x_i and β_i = Σ_{c≠t} ∂out_c/∂x_i for one class t."""
    alpha: np.ndarray
    beta: np.ndarray
    target: int


@dataclass(frozen=True, order=True)
class PixelPair:
    p: int
    q: int

    def __post_init__(self):
        if not 0 <= self.p < self.q:
            raise ValueError(f"PixelPair needs 0 <= p < q, got ({self.p}, {self.q})")


@dataclass(frozen=True)
class PairChoice:
    """Winning pair, its score γ > 0, the signed step θ′ and the class it was found for."""
    pair: PixelPair
    score: float
    direction: float
    swept_class: int


def _terms_from_matrix(matrix: np.ndarray, column_sums: np.ndarray, t: int) -> FeatureTerms:
    alpha = matrix[t].copy()
    return FeatureTerms(alpha=alpha, beta=column_sums - alpha, target=t)


def feature_terms(jac: ClassJacobian, t: int) -> FeatureTerms:
    """α and β for class `t`; β is the column sum minus α."""
    if not 0 <= t < jac.class_count:
        raise ValueError(f"class {t} outside [0, {jac.class_count})")
    return _terms_from_matrix(jac.matrix, jac.matrix.sum(axis=0), t)


def all_feature_terms(jac: ClassJacobian) -> list[FeatureTerms]:
    """Terms for every class, sharing one column sum (O(Cn) overall)."""
    column_sums = jac.matrix.sum(axis=0)
    return [_terms_from_matrix(jac.matrix, column_sums, t) for t in range(jac.class_count)]


def domain_indices(domain: Iterable[int]) -> np.ndarray:
    """Sorted index array for a set, list or boolean mask."""
    values = np.asarray(list(domain) if not isinstance(domain, np.ndarray) else domain)
    if values.dtype == bool:
        return np.flatnonzero(values)
    return np.unique(values.astype(np.int64))


def _pair_sums(values: np.ndarray) -> np.ndarray:
    return values[..., :, None] + values[..., None, :]


def best_pair_constrained(
    terms: FeatureTerms,
    domain: Iterable[int],
    saliency_map: SaliencyMap,
    direction: float,
) -> Optional[PairChoice]:
    """
    Most salient pair under the S+ or S- sign conditions.

    Scores are -A·B over pairs p < q of the domain; the first maximum in
    (p, q) lexicographic order wins, and only strictly positive scores count.

    Args:
        terms: α/β for the fixed class
        domain: Active indices Γ
        saliency_map: Which sign conditions the pair sums must meet
        direction: θ′ recorded in the returned choice

    Returns:
        The winning PairChoice, or None when no pair qualifies

    Raises:
        DomainExhaustedError: If |Γ| < 2
    """
    idx = domain_indices(domain)
    if idx.size < 2:
        raise DomainExhaustedError(f"Search domain has {idx.size} indices")

    A = _pair_sums(terms.alpha[idx])
    B = _pair_sums(terms.beta[idx])
    valid = np.triu(np.ones(A.shape, dtype=bool), k=1)
    if saliency_map is SaliencyMap.INCREASING:
        valid &= (A > 0) & (B < 0)
    else:
        valid &= (A < 0) & (B > 0)

    scores = np.where(valid, -A * B, 0.0)
    flat = int(np.argmax(scores))
    best = scores.flat[flat]
    if not best > 0:
        return None

    i, j = divmod(flat, idx.size)
    return PairChoice(PixelPair(int(idx[i]), int(idx[j])), float(best), float(direction), terms.target)


def best_pair_maximal(
    terms_per_class: Sequence[FeatureTerms],
    domain: Iterable[int],
    true_class: int,
    theta: float,
    counter: Optional[Counter] = None,
) -> Optional[PairChoice]:
    """
    Most salient (class, pair) with no sign conditions.

    The direction is -sign(A)·θ when the winning class is the true class and
    +sign(A)·θ otherwise, with sign(0) taken as +1. Ties go to the smallest
    (t, p, q).

    Args:
        terms_per_class: α/β for every class, indexed by class
        domain: Active indices Γ
        true_class: y
        theta: Step magnitude in (0, 1]
        counter: If given, ``counter["pair_combine"]`` is increased by the
            number of (class, unordered pair) scores taken into the argmax and
            ``counter["pair_sum_entry"]`` by the full C·|Γ|² pair-sum entries
            computed

    Returns:
        The winning PairChoice, or None when every score is 0 or negative

    Raises:
        DomainExhaustedError: If |Γ| < 2
    """
    idx = domain_indices(domain)
    if idx.size < 2:
        raise DomainExhaustedError(f"Search domain has {idx.size} indices")

    alpha = np.stack([terms.alpha[idx] for terms in terms_per_class])
    beta = np.stack([terms.beta[idx] for terms in terms_per_class])
    A = _pair_sums(alpha)
    B = _pair_sums(beta)
    upper = np.triu(np.ones((idx.size, idx.size), dtype=bool), k=1)

    scores = np.where(upper, -A * B, 0.0)
    if counter is not None:
        counter["pair_sum_entry"] += A.size
        counter["pair_combine"] += int(np.count_nonzero(np.broadcast_to(upper, scores.shape)))

    flat = int(np.argmax(scores))
    best = scores.flat[flat]
    if not best > 0:
        return None

    k, rest = divmod(flat, idx.size * idx.size)
    i, j = divmod(rest, idx.size)
    t = terms_per_class[k].target
    sign = 1.0 if A[k, i, j] >= 0 else -1.0
    direction = -sign * theta if t == true_class else sign * theta
    return PairChoice(PixelPair(int(idx[i]), int(idx[j])), float(best), float(direction), int(t))
