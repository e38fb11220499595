"""Adaptive distribution-distance feature selection (ADDFS).

Each feature is Min-Max scaled, discretized with supervised ChiMerge, and
turned into one relative-frequency distribution per class over the ChiMerge
intervals. The feature's score is the sum of the 1-D Wasserstein (earth
mover's) distances between every pair of class distributions, with the
intervals placed one unit apart (or at their midpoints on request). Features
are ranked by descending score, ties broken by ascending column index.
"""

import dataclasses
import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from vtid import vtidrunbase

#
# Constants
#

DEFAULT_MAX_INTERVALS = 15
DEFAULT_CONFIDENCE = 0.95

SUPPORT_MIDPOINT = "midpoint"
SUPPORT_INDEX = "index"
SUPPORTS = (SUPPORT_MIDPOINT, SUPPORT_INDEX)
# Consecutive intervals one unit apart
DEFAULT_SUPPORT = SUPPORT_INDEX

# Decimals kept in interval midpoints; with them a positive affine rescaling of
# a raw column leaves its support and score bit-identical.
SUPPORT_DECIMALS = 9

# Chi-square quantiles for df = 1..20 at the supported confidence levels
CHI2_CRITICAL = {
    0.90: (2.706, 4.605, 6.251, 7.779, 9.236, 10.645, 12.017, 13.362, 14.684,
           15.987, 17.275, 18.549, 19.812, 21.064, 22.307, 23.542, 24.769,
           25.989, 27.204, 28.412),
    0.95: (3.841, 5.991, 7.815, 9.488, 11.070, 12.592, 14.067, 15.507, 16.919,
           18.307, 19.675, 21.026, 22.362, 23.685, 24.996, 26.296, 27.587,
           28.869, 30.144, 31.410),
    0.99: (6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090,
           21.666, 23.209, 24.725, 26.217, 27.688, 29.141, 30.578, 32.000,
           33.409, 34.805, 36.191, 37.566),
}

#
# Classes
#


@dataclasses.dataclass(frozen=True)
class LabeledDataset:
    """
    m samples of n real features with one class label each.

    Attributes:
        values: float array of shape (m, n)
        labels: array of m class labels (strings)
        feature_names: n column names
    """
    values: np.ndarray
    labels: np.ndarray
    feature_names: Sequence[str]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        labels = np.asarray(self.labels).astype(str)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if len(labels) != values.shape[0]:
            raise ValueError(f"{values.shape[0]} rows but {len(labels)} labels")
        if len(self.feature_names) != values.shape[1]:
            raise ValueError(f"{values.shape[1]} columns but "
                             f"{len(self.feature_names)} feature names")
        if not np.all(np.isfinite(values)):
            raise ValueError("dataset contains missing or non-finite values")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def classes(self) -> np.ndarray:
        """Sorted distinct labels"""
        return np.unique(self.labels)

    def check_trainable(self):
        """Raises ValueError unless there are >= 2 samples and >= 2 classes"""
        if self.n_samples < 2 or len(self.classes) < 2:
            raise ValueError(f"need at least 2 samples and 2 classes, got "
                             f"{self.n_samples} samples and "
                             f"{len(self.classes)} classes")

    def subset(self, rows=None, columns=None) -> "LabeledDataset":
        """Returns the given rows and/or columns (index arrays) as a dataset"""
        values, labels, names = self.values, self.labels, self.feature_names
        if rows is not None:
            values, labels = values[rows], labels[rows]
        if columns is not None:
            columns = list(columns)
            values = values[:, columns]
            names = [names[c] for c in columns]
        return LabeledDataset(values, labels, names)


@dataclasses.dataclass(frozen=True)
class IntervalPartition:
    """
    Consecutive intervals over the observed range of one feature.

    Attributes:
        edges: k + 1 ascending boundaries; edges[0] and edges[-1] are the
               observed minimum and maximum, the rest are the cut points.
               Intervals are left-closed and right-open except the last; a
               value equal to a cut point belongs to the interval on its left.
    """
    edges: np.ndarray

    @property
    def k(self) -> int:
        return len(self.edges) - 1

    @property
    def cut_points(self) -> np.ndarray:
        return self.edges[1:-1]

    def assign(self, values: np.ndarray) -> np.ndarray:
        """Interval index (0-based) of each value"""
        return np.searchsorted(self.cut_points, values, side="left")

    def midpoints(self) -> np.ndarray:
        return np.round((self.edges[:-1] + self.edges[1:]) / 2,
                        SUPPORT_DECIMALS)


@dataclasses.dataclass(frozen=True)
class ClassDistributionMatrix:
    """
    Attributes:
        p: (C, k) per-class relative frequencies over the intervals
        support: k ascending ground positions of the intervals
        classes: the C classes, in row order
    """
    p: np.ndarray
    support: np.ndarray
    classes: np.ndarray


@dataclasses.dataclass(frozen=True)
class FeatureRanking:
    """
    Attributes:
        scores: n feature scores
        order: feature indices by descending score, ties by ascending index
        feature_names: the n feature names
    """
    scores: np.ndarray
    order: np.ndarray
    feature_names: Sequence[str]

    def ranked_names(self) -> List[str]:
        return [self.feature_names[i] for i in self.order]


#
# Functions
#


def min_max_scale(dataset: LabeledDataset) -> LabeledDataset:
    """Maps each column onto [0, 1]; constant columns become all zeros"""
    values = dataset.values
    low, high = values.min(axis=0), values.max(axis=0)
    span = high - low
    constant = span == 0
    scaled = (values - low) / np.where(constant, 1.0, span)
    return LabeledDataset(scaled, dataset.labels, dataset.feature_names)


def chi2_critical(df: int, confidence: float) -> float:
    """Chi-square quantile; table lookup, scipy outside the table"""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if confidence in CHI2_CRITICAL and df <= 20:
        return CHI2_CRITICAL[confidence][df - 1]
    return float(stats.chi2.ppf(confidence, df))


def _adjacent_chi_square(counts: np.ndarray) -> np.ndarray:
    """Chi-square of every adjacent pair of rows of a (k, C) count table"""
    first, second = counts[:-1], counts[1:]
    row1 = first.sum(axis=1, keepdims=True)
    row2 = second.sum(axis=1, keepdims=True)
    total = np.where(row1 + row2 == 0, 1.0, row1 + row2)
    expected1 = row1 * (first + second) / total
    expected2 = row2 * (first + second) / total
    with np.errstate(divide="ignore", invalid="ignore"):
        terms1 = np.where(expected1 > 0, (first - expected1)**2 / expected1, 0.0)
        terms2 = np.where(expected2 > 0, (second - expected2)**2 / expected2,
                          0.0)
    return (terms1 + terms2).sum(axis=1)


def chi_square(intervals: np.ndarray) -> float:
    """
    Chi-square statistic of a 2 x C table of class counts for two adjacent
    intervals. Cells with an expected frequency of 0 contribute 0; two empty
    intervals give 0.
    """
    table = np.asarray(intervals, dtype=float)
    if table.shape[0] != 2:
        raise ValueError(f"expected 2 intervals, got {table.shape[0]}")
    return float(_adjacent_chi_square(table)[0])


def chimerge(values: np.ndarray,
             labels: np.ndarray,
             max_intervals: int = DEFAULT_MAX_INTERVALS,
             confidence: float = DEFAULT_CONFIDENCE,
             classes: Optional[np.ndarray] = None) -> IntervalPartition:
    """
    Supervised bottom-up discretization. Starting from one interval per
    distinct value, the adjacent pair with the smallest chi-square (leftmost on
    ties) is merged while there are more than max_intervals intervals or the
    smallest chi-square is below the critical value for C - 1 degrees of
    freedom, until a single interval is left. Cut points lie halfway between
    the distinct values on either side of them.
    """
    values = np.asarray(values, dtype=float)
    labels = np.asarray(labels).astype(str)
    if len(values) == 0:
        raise ValueError("cannot discretize an empty feature")
    if max_intervals < 1:
        raise ValueError(f"max_intervals must be >= 1, got {max_intervals}")
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    if classes is None:
        classes = np.unique(labels)
    critical = chi2_critical(max(len(classes) - 1, 1), confidence)

    distinct, value_index = np.unique(values, return_inverse=True)
    counts = np.zeros((len(distinct), len(classes)))
    np.add.at(counts, (value_index.ravel(), np.searchsorted(classes, labels)),
              1)

    # interval i spans the distinct values lower[i] .. upper[i]
    lower, upper = distinct.copy(), distinct.copy()
    chis = _adjacent_chi_square(counts)
    while len(counts) > 1:
        i = int(np.argmin(chis))
        if len(counts) <= max_intervals and chis[i] >= critical:
            break
        counts[i] += counts[i + 1]
        upper[i] = upper[i + 1]
        counts = np.delete(counts, i + 1, axis=0)
        lower = np.delete(lower, i + 1)
        upper = np.delete(upper, i + 1)
        chis = np.delete(chis, i)
        lo, hi = max(i - 1, 0), min(i + 2, len(counts))
        chis[lo:hi - 1] = _adjacent_chi_square(counts[lo:hi])

    cuts = (upper[:-1] + lower[1:]) / 2
    return IntervalPartition(np.concatenate(([distinct[0]], cuts,
                                             [distinct[-1]])))


def class_distributions(values: np.ndarray,
                        labels: np.ndarray,
                        partition: IntervalPartition,
                        classes: Optional[np.ndarray] = None,
                        support: str = DEFAULT_SUPPORT
                       ) -> ClassDistributionMatrix:
    """Per-class relative frequencies of the samples over the intervals"""
    labels = np.asarray(labels).astype(str)
    if classes is None:
        classes = np.unique(labels)
    counts = np.zeros((len(classes), partition.k))
    np.add.at(counts,
              (np.searchsorted(classes, labels), partition.assign(values)), 1)

    totals = counts.sum(axis=1, keepdims=True)
    empty = [str(c) for c, t in zip(classes, totals[:, 0]) if t == 0]
    if empty:
        raise ValueError(f"classes without samples: {empty}")

    if support == SUPPORT_MIDPOINT:
        positions = partition.midpoints()
    elif support == SUPPORT_INDEX:
        positions = np.arange(partition.k, dtype=float)
    else:
        raise ValueError(f"unknown support {support!r}, expected one of "
                         f"{SUPPORTS}")
    return ClassDistributionMatrix(counts / totals, positions,
                                   np.asarray(classes))


def wasserstein_1d(p: np.ndarray, q: np.ndarray, support: np.ndarray) -> float:
    """
    Earth mover's distance between two distributions over the same ascending
    support with ground metric |x - y|, in closed form as the integral of the
    absolute CDF difference.
    """
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    support = np.asarray(support, dtype=float)
    if not len(p) == len(q) == len(support):
        raise ValueError(f"length mismatch: {len(p)}, {len(q)}, "
                         f"{len(support)}")
    for name, dist in (("p", p), ("q", q)):
        if np.any(dist < 0) or abs(dist.sum() - 1.0) > 1e-9:
            raise ValueError(f"{name} is not a probability vector "
                             f"(sum {dist.sum()})")
    if np.any(np.diff(support) < 0):
        raise ValueError("support must be ascending")
    cdf_gap = np.abs(np.cumsum(p)[:-1] - np.cumsum(q)[:-1])
    return float(np.sum(cdf_gap * np.diff(support)))


def feature_score(distributions: ClassDistributionMatrix) -> float:
    """Sum of the pairwise Wasserstein distances between class rows"""
    p = distributions.p
    return float(
        sum(
            wasserstein_1d(p[a], p[b], distributions.support)
            for a, b in itertools.combinations(range(len(p)), 2)))


def ranking_from_scores(scores: Sequence[float],
                        feature_names: Sequence[str]) -> FeatureRanking:
    """Orders features by descending score, ties by ascending index"""
    scores = np.asarray(scores, dtype=float)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return FeatureRanking(scores, order, tuple(feature_names))


def score_feature(values: np.ndarray,
                  labels: np.ndarray,
                  classes: np.ndarray,
                  max_intervals: int = DEFAULT_MAX_INTERVALS,
                  confidence: float = DEFAULT_CONFIDENCE,
                  support: str = DEFAULT_SUPPORT) -> float:
    """ChiMerge, class distributions and EMD score of one scaled column"""
    partition = chimerge(values, labels, max_intervals, confidence, classes)
    return feature_score(
        class_distributions(values, labels, partition, classes, support))


def _score_column(args) -> float:
    name, values, labels, classes, max_intervals, confidence, support = args
    try:
        score = score_feature(values, labels, classes, max_intervals,
                              confidence, support)
    except ValueError as e:
        raise RuntimeError(f"Could not score feature {name}: {e}") from e
    logging.debug(f"feature {name}: EMD score {score}")
    return score


def rank_features(dataset: LabeledDataset,
                  max_intervals: int = DEFAULT_MAX_INTERVALS,
                  confidence: float = DEFAULT_CONFIDENCE,
                  support: str = DEFAULT_SUPPORT,
                  jobs: int = 1) -> FeatureRanking:
    """Scores every feature of the dataset with ADDFS and ranks them"""
    dataset.check_trainable()
    scaled = min_max_scale(dataset)
    classes = scaled.classes
    tasks = [(name, scaled.values[:, j], scaled.labels, classes, max_intervals,
              confidence, support)
             for j, name in enumerate(scaled.feature_names)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(_score_column, tasks))
    else:
        scores = [_score_column(task) for task in tasks]
    return ranking_from_scores(scores, dataset.feature_names)


def selection_size(n_features: int, fraction: float) -> int:
    """ceil(fraction * n_features), the number of features a fraction keeps"""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    # rounding keeps e.g. 0.3 * 10 from becoming 4
    return math.ceil(round(fraction * n_features, 9))


def select_top(ranking: FeatureRanking, fraction: float) -> List[int]:
    """The first selection_size(n, fraction) feature indices of the ranking"""
    count = selection_size(len(ranking.order), fraction)
    return [int(i) for i in ranking.order[:count]]


class AddfsRanker(vtidrunbase.VtidRunBase):
    """
    Ranks the features of one dataset with ADDFS. After run(), get_data()
    returns the FeatureRanking.

    Attributes:
        _dataset: the LabeledDataset to rank
        _max_intervals: ChiMerge interval cap
        _confidence: ChiMerge stopping confidence
        _support: ground positions of the intervals, midpoint or index
        _jobs: worker processes for per-feature scoring
        _ranking: the result
    """

    def __init__(self,
                 dataset: LabeledDataset,
                 max_intervals: int = DEFAULT_MAX_INTERVALS,
                 confidence: float = DEFAULT_CONFIDENCE,
                 support: str = DEFAULT_SUPPORT,
                 jobs: int = 1):
        super().__init__()
        if support not in SUPPORTS:
            raise ValueError(f"unknown support {support!r}")
        self._dataset = dataset
        self._max_intervals = max_intervals
        self._confidence = confidence
        self._support = support
        self._jobs = jobs
        self._ranking = None

    def run(self):
        super().check_run_fatal()
        logging.info("STARTING RANKING")
        logging.info(f"Ranking {self._dataset.n_features} features of "
                     f"{self._dataset.n_samples} samples "
                     f"(max_intervals={self._max_intervals}, "
                     f"confidence={self._confidence}, "
                     f"support={self._support})")
        self._ranking = rank_features(self._dataset, self._max_intervals,
                                      self._confidence, self._support,
                                      self._jobs)
        logging.info("FINISHED RANKING")

    def get_data(self) -> FeatureRanking:
        super().check_ran_fatal()
        return self._ranking
