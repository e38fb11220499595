"""Classification metrics and the Wilcoxon signed-rank test."""

import dataclasses
import logging
from typing import List, Sequence

import numpy as np
from scipy import stats

#
# Constants
#

WILCOXON_AUTO = "auto"
WILCOXON_EXACT = "exact"
WILCOXON_NORMAL = "normal"
WILCOXON_METHODS = (WILCOXON_AUTO, WILCOXON_EXACT, WILCOXON_NORMAL)

# Largest number of non-zero differences for which "auto" enumerates exactly
EXACT_MAX_N = 20

#
# Confusion matrices
#


@dataclasses.dataclass(frozen=True)
class ConfusionMatrix:
    """
    Attributes:
        counts: C x C integer matrix, rows are true classes and columns are
                predicted classes
        classes: the C class labels, in row/column order
    """
    counts: np.ndarray
    classes: Sequence[str]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "classes", tuple(self.classes))
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError(f"confusion matrix must be square, got shape "
                             f"{counts.shape}")
        if counts.shape[0] != len(self.classes):
            raise ValueError(f"{counts.shape[0]} rows but "
                             f"{len(self.classes)} classes")
        if np.any(counts < 0):
            raise ValueError("confusion matrix has negative counts")

    @staticmethod
    def from_predictions(truth: Sequence[str], predicted: Sequence[str],
                         classes: Sequence[str]) -> "ConfusionMatrix":
        classes = np.asarray(classes).astype(str)
        truth = np.asarray(truth).astype(str)
        predicted = np.asarray(predicted).astype(str)
        unknown = set(truth) | set(predicted)
        unknown.difference_update(classes)
        if unknown:
            raise ValueError(f"labels not among the classes: {sorted(unknown)}")
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
        np.add.at(counts, ([index[t] for t in truth],
                           [index[p] for p in predicted]), 1)
        return ConfusionMatrix(counts, classes)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.classes != other.classes:
            raise ValueError("cannot add confusion matrices over different "
                             "classes")
        return ConfusionMatrix(self.counts + other.counts, self.classes)


def _check_nonempty(cm: ConfusionMatrix):
    if cm.total == 0:
        raise ValueError("confusion matrix is empty")


def accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of samples on the diagonal"""
    _check_nonempty(cm)
    return float(np.trace(cm.counts) / cm.total)


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    """
    F1 of every class, treating it as the positive class. Precision and recall
    with a zero denominator are 0, and so is F1 when both are 0.
    """
    _check_nonempty(cm)
    tp = np.diag(cm.counts).astype(float)
    predicted = cm.counts.sum(axis=0)
    actual = cm.counts.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp),
                          where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    both = precision + recall
    return np.divide(2 * precision * recall, both, out=np.zeros_like(tp),
                     where=both > 0)


def f1_score(cm: ConfusionMatrix) -> float:
    """Macro (unweighted mean) F1 over all classes of the matrix"""
    return float(np.mean(per_class_f1(cm)))


def positive_f1(cm: ConfusionMatrix) -> float:
    """F1 of the second class of a binary matrix"""
    if len(cm.classes) != 2:
        raise ValueError(f"positive-class F1 needs 2 classes, got "
                         f"{len(cm.classes)}")
    return float(per_class_f1(cm)[1])


#
# Wilcoxon signed-rank test
#


@dataclasses.dataclass(frozen=True)
class WilcoxonResult:
    """
    Attributes:
        r_plus: rank sum of the positive differences a - b
        r_minus: rank sum of the negative differences
        p_value: two-sided p-value
        n_effective: number of non-zero differences
        method: exact or normal
        undefined: True when every difference is zero; p_value is then 1
    """
    r_plus: float
    r_minus: float
    p_value: float
    n_effective: int
    method: str
    undefined: bool = False


def _exact_p(doubled_ranks: np.ndarray, statistic: int) -> float:
    """
    Two-sided exact p-value. doubled_ranks are twice the (possibly
    half-integer) ranks; statistic is twice min(R+, R-). The null distribution
    of the doubled positive rank sum is built by counting sign assignments.
    """
    total = int(doubled_ranks.sum())
    ways = np.zeros(total + 1)
    ways[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(ways)
        shifted[r:] = ways[:total + 1 - r]
        ways = ways + shifted
    cdf = ways[:statistic + 1].sum() / ways.sum()
    return float(min(1.0, 2 * cdf))


def _normal_p(n: int, statistic: float) -> float:
    """Two-sided p-value from the normal approximation, no corrections"""
    mean = n * (n + 1) / 4
    sd = np.sqrt(n * (n + 1) * (2 * n + 1) / 24)
    z = (statistic - mean) / sd
    return float(min(1.0, 2 * stats.norm.cdf(z)))


def wilcoxon_signed_rank(a: Sequence[float],
                         b: Sequence[float],
                         method: str = WILCOXON_AUTO) -> WilcoxonResult:
    """
    Paired two-sided signed-rank test of a against b. Zero differences are
    dropped and tied magnitudes get average ranks. With method "auto" the
    p-value is exact for up to EXACT_MAX_N non-zero differences and from the
    normal approximation above that.
    """
    if method not in WILCOXON_METHODS:
        raise ValueError(f"unknown Wilcoxon method {method!r}, expected one "
                         f"of {WILCOXON_METHODS}")
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired samples must be 1-D and of equal length, "
                         f"got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise ValueError(f"need at least 2 pairs, got {len(a)}")

    diffs = a - b
    diffs = diffs[diffs != 0]
    n = len(diffs)
    if method == WILCOXON_AUTO:
        method = WILCOXON_EXACT if n <= EXACT_MAX_N else WILCOXON_NORMAL
    if n == 0:
        logging.warning("All paired differences are zero; the Wilcoxon test "
                        "is undefined")
        return WilcoxonResult(0.0, 0.0, 1.0, 0, method, undefined=True)

    ranks = stats.rankdata(np.abs(diffs))
    r_plus = float(ranks[diffs > 0].sum())
    r_minus = float(ranks[diffs < 0].sum())
    statistic = min(r_plus, r_minus)
    if method == WILCOXON_EXACT:
        doubled = np.rint(2 * ranks).astype(np.int64)
        p_value = _exact_p(doubled, int(round(2 * statistic)))
    else:
        p_value = _normal_p(n, statistic)
    return WilcoxonResult(r_plus, r_minus, p_value, n, method)


def summarize(values: Sequence[float]) -> List[float]:
    """Mean and population standard deviation of a list of fold scores"""
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return [0.0, 0.0]
    return [float(np.mean(values)), float(np.std(values))]
