"""Reference filter selectors: Relief, Pearson correlation, F-score, random.

Each scorer returns one score per column; the *_ranking functions turn the
scores into a FeatureRanking through vtidaddfs.ranking_from_scores so every
selector shares the same tie rule.
"""

import logging
from typing import Dict, Optional

import numpy as np

from vtid import vtidaddfs

#
# Scores
#


def relief_scores(dataset: vtidaddfs.LabeledDataset,
                  seed: int,
                  iterations: Optional[int] = None) -> np.ndarray:
    """
    Classic Relief weights on Min-Max scaled features. Each iteration draws a
    random sample, finds its nearest hit (same class) and nearest miss (any
    other class) by Manhattan distance, and adds
    (|x - miss| - |x - hit|) / iterations to the weights. Distance ties go to
    the lower row index. Runs m iterations unless told otherwise.
    """
    dataset.check_trainable()
    values = vtidaddfs.min_max_scale(dataset).values
    labels = dataset.labels
    m = dataset.n_samples
    iterations = m if iterations is None else iterations
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")

    rng = np.random.default_rng(seed)
    weights = np.zeros(dataset.n_features)
    for i in rng.integers(0, m, size=iterations):
        gaps = np.abs(values - values[i])
        distances = gaps.sum(axis=1)
        distances[i] = np.inf
        same = labels == labels[i]
        hits = np.where(same, distances, np.inf)
        misses = np.where(~same, distances, np.inf)
        miss = int(np.argmin(misses))
        weights += gaps[miss]
        # a singleton class has no hit
        if np.isfinite(hits.min()):
            weights -= gaps[int(np.argmin(hits))]
    return weights / iterations


def pearson_scores(dataset: vtidaddfs.LabeledDataset) -> np.ndarray:
    """
    Largest absolute Pearson correlation of each feature with a one-vs-rest
    class indicator. A constant feature scores 0.
    """
    dataset.check_trainable()
    centered = dataset.values - dataset.values.mean(axis=0)
    spread = np.sqrt(np.sum(centered**2, axis=0))
    best = np.zeros(dataset.n_features)
    for c in dataset.classes:
        indicator = (dataset.labels == c).astype(float)
        indicator -= indicator.mean()
        cov = indicator @ centered
        denom = spread * np.sqrt(np.sum(indicator**2))
        corr = np.divide(cov, denom, out=np.zeros_like(cov), where=denom > 0)
        best = np.maximum(best, np.abs(corr))
    return best


def fscore_scores(dataset: vtidaddfs.LabeledDataset) -> np.ndarray:
    """
    Multi-class F-score: sum over classes of the squared distance between the
    class mean and the overall mean, divided by the sum of the within-class
    sample variances. A constant feature scores 0; a feature that varies only
    between classes scores inf.
    """
    dataset.check_trainable()
    values = dataset.values
    overall = values.mean(axis=0)
    between = np.zeros(dataset.n_features)
    within = np.zeros(dataset.n_features)
    for c in dataset.classes:
        rows = values[dataset.labels == c]
        between += (rows.mean(axis=0) - overall)**2
        if len(rows) > 1:
            within += rows.var(axis=0, ddof=1)
    scores = np.zeros(dataset.n_features)
    np.divide(between, within, out=scores, where=within > 0)
    scores[(within == 0) & (between > 0)] = np.inf
    return scores


#
# Rankings
#


def relief_ranking(dataset: vtidaddfs.LabeledDataset,
                   seed: int) -> vtidaddfs.FeatureRanking:
    return vtidaddfs.ranking_from_scores(relief_scores(dataset, seed),
                                         dataset.feature_names)


def pearson_ranking(dataset: vtidaddfs.LabeledDataset,
                    seed: int = 0) -> vtidaddfs.FeatureRanking:
    return vtidaddfs.ranking_from_scores(pearson_scores(dataset),
                                         dataset.feature_names)


def fscore_ranking(dataset: vtidaddfs.LabeledDataset,
                   seed: int = 0) -> vtidaddfs.FeatureRanking:
    return vtidaddfs.ranking_from_scores(fscore_scores(dataset),
                                         dataset.feature_names)


def random_ranking(dataset: vtidaddfs.LabeledDataset,
                   seed: int) -> vtidaddfs.FeatureRanking:
    """A seeded random permutation of the features"""
    n = dataset.n_features
    permutation = np.random.default_rng(seed).permutation(n)
    scores = np.empty(n)
    scores[permutation] = np.arange(n, 0, -1)
    return vtidaddfs.ranking_from_scores(scores, dataset.feature_names)


def identity_ranking(dataset: vtidaddfs.LabeledDataset,
                     seed: int = 0) -> vtidaddfs.FeatureRanking:
    """Keeps the column order; used when no selection is wanted"""
    return vtidaddfs.ranking_from_scores(np.zeros(dataset.n_features),
                                         dataset.feature_names)


def baseline_selectors(dataset: vtidaddfs.LabeledDataset,
                       seed: int) -> Dict[str, vtidaddfs.FeatureRanking]:
    """Relief, Pearson and F-score rankings of one dataset"""
    logging.info(f"Ranking {dataset.n_features} features with the baseline "
                 f"selectors")
    return {
        "relief": relief_ranking(dataset, seed),
        "pearson": pearson_ranking(dataset),
        "fscore": fscore_ranking(dataset),
    }
