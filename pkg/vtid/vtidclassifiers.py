"""Classifiers used by the evaluation harness.

Every classifier implements fit(values, labels) and predict(values) over plain
numpy arrays. Only the decision tree and k-nearest-neighbors are provided; the
Classifier base class is the extension point for others.
"""

import logging
from abc import ABCMeta, abstractmethod
from typing import List, Optional, Tuple

import numpy as np

from vtid import vtidaddfs

#
# Constants
#

DECISION_TREE = "dt"
KNN = "knn"
CLASSIFIERS = (DECISION_TREE, KNN)

DEFAULT_K = 10

# Marks a leaf in DecisionTree._feature
_LEAF = -1


class Classifier(metaclass=ABCMeta):
    """
    Common interface of the classifiers.

    Attributes:
        classes_: sorted distinct training labels, set by fit()
    """

    def __init__(self):
        self.classes_ = None

    @abstractmethod
    def fit(self, values: np.ndarray, labels: np.ndarray) -> "Classifier":
        pass

    @abstractmethod
    def predict(self, values: np.ndarray) -> np.ndarray:
        pass

    def _encode(self, values: np.ndarray,
                labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Checks training data, stores the classes, returns class codes"""
        values = np.asarray(values, dtype=float)
        labels = np.asarray(labels).astype(str)
        if values.ndim != 2 or len(values) == 0:
            raise ValueError(f"training set must be a non-empty 2-D array, "
                             f"got shape {values.shape}")
        if len(labels) != len(values):
            raise ValueError(f"{len(values)} rows but {len(labels)} labels")
        self.classes_, codes = np.unique(labels, return_inverse=True)
        return values, codes.ravel()

    def _check_fitted(self, values: np.ndarray, n_features: int) -> np.ndarray:
        if self.classes_ is None:
            raise RuntimeError(f"This {type(self).__name__} has not been "
                               f"fitted yet")
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[np.newaxis, :]
        if values.shape[1] != n_features:
            raise ValueError(f"expected {n_features} features, got "
                             f"{values.shape[1]}")
        return values


class DecisionTree(Classifier):
    """
    CART tree grown on Gini impurity without a depth cap. A node is split as
    long as it holds at least min_samples_split samples of more than one class
    and some feature takes more than one value in it. The split chosen has the
    lowest weighted child impurity; ties go to the lowest feature index, then
    the lowest threshold. Thresholds lie halfway between consecutive distinct
    values and samples with value <= threshold go left.

    The nodes are stored in parallel arrays:

    Attributes:
        min_samples_split: smallest node that may be split
        _feature: split feature per node, _LEAF for leaves
        _threshold: split threshold per node
        _left, _right: child node indices
        _value: predicted class code per node
    """

    def __init__(self, min_samples_split: int = 2):
        super().__init__()
        if min_samples_split < 2:
            raise ValueError(f"min_samples_split must be >= 2, got "
                             f"{min_samples_split}")
        self.min_samples_split = min_samples_split
        self._feature = None
        self._threshold = None
        self._left = None
        self._right = None
        self._value = None
        self._n_features = 0

    #
    # Public
    #

    def fit(self, values: np.ndarray, labels: np.ndarray) -> "DecisionTree":
        values, codes = self._encode(values, labels)
        self._n_features = values.shape[1]
        n_classes = len(self.classes_)

        feature, threshold, left, right, value = [], [], [], [], []
        # (node index, sample indices)
        stack = [(0, np.arange(len(values)))]
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(0)
        while stack:
            node, rows = stack.pop()
            class_counts = np.bincount(codes[rows], minlength=n_classes)
            value[node] = int(np.argmax(class_counts))
            if (len(rows) < self.min_samples_split or
                    np.count_nonzero(class_counts) < 2):
                continue
            split = self._best_split(values[rows], codes[rows], n_classes)
            if split is None:
                continue
            j, thr = split
            go_left = values[rows, j] <= thr
            feature[node], threshold[node] = j, thr
            for side, child_rows in ((left, rows[go_left]),
                                     (right, rows[~go_left])):
                child = len(feature)
                feature.append(_LEAF)
                threshold.append(0.0)
                left.append(_LEAF)
                right.append(_LEAF)
                value.append(0)
                side[node] = child
                stack.append((child, child_rows))

        self._feature = np.array(feature)
        self._threshold = np.array(threshold)
        self._left = np.array(left)
        self._right = np.array(right)
        self._value = np.array(value)
        logging.debug(f"Grew a decision tree with {self.node_count} nodes, "
                      f"depth {self.depth}")
        return self

    def predict(self, values: np.ndarray) -> np.ndarray:
        values = self._check_fitted(values, self._n_features)
        nodes = np.zeros(len(values), dtype=np.int64)
        rows = np.arange(len(values))
        active = self._feature[nodes] != _LEAF
        while np.any(active):
            at = nodes[active]
            go_left = (values[rows[active], self._feature[at]] <=
                       self._threshold[at])
            nodes[active] = np.where(go_left, self._left[at], self._right[at])
            active = self._feature[nodes] != _LEAF
        return self.classes_[self._value[nodes]]

    @property
    def node_count(self) -> int:
        return 0 if self._feature is None else len(self._feature)

    @property
    def depth(self) -> int:
        """Edges on the longest root-to-leaf path"""
        if self._feature is None:
            return 0
        depths = np.zeros(len(self._feature), dtype=np.int64)
        for node in range(len(self._feature)):
            if self._feature[node] != _LEAF:
                depths[self._left[node]] = depths[node] + 1
                depths[self._right[node]] = depths[node] + 1
        return int(depths.max())

    def structure(self) -> List[Tuple[int, float, int, int, int]]:
        """(feature, threshold, left, right, class code) of every node"""
        return list(
            zip(self._feature.tolist(), self._threshold.tolist(),
                self._left.tolist(), self._right.tolist(),
                self._value.tolist()))

    #
    # Private
    #

    @staticmethod
    def _best_split(values: np.ndarray, codes: np.ndarray,
                    n_classes: int) -> Optional[Tuple[int, float]]:
        """Lowest weighted Gini split of a node, or None if none exists.

        A split is taken even when it does not lower the impurity, so a
        training set with unique rows is fit to accuracy 1.0.
        """
        n = len(codes)
        onehot = np.eye(n_classes)[codes]
        totals = onehot.sum(axis=0)
        best = None
        best_impurity = np.inf
        for j in range(values.shape[1]):
            order = np.argsort(values[:, j], kind="stable")
            x = values[order, j]
            valid = x[:-1] < x[1:]
            if not np.any(valid):
                continue
            left_counts = np.cumsum(onehot[order], axis=0)[:-1]
            right_counts = totals - left_counts
            n_left = np.arange(1, n)[:, np.newaxis]
            n_right = n - n_left
            gini_left = 1 - np.sum((left_counts / n_left)**2, axis=1)
            gini_right = 1 - np.sum((right_counts / n_right)**2, axis=1)
            impurity = (n_left[:, 0] * gini_left +
                        n_right[:, 0] * gini_right) / n
            impurity = np.where(valid, impurity, np.inf)
            i = int(np.argmin(impurity))
            if impurity[i] < best_impurity:
                best_impurity = impurity[i]
                thr = (x[i] + x[i + 1]) / 2
                # adjacent floats: the midpoint may round up onto x[i + 1]
                if thr >= x[i + 1]:
                    thr = x[i]
                best = (j, float(thr))
        return best


class KNearestNeighbors(Classifier):
    """
    Majority vote of the k Euclidean-nearest training rows. Distance ties go to
    the lower training index; vote ties go to the class of the nearest
    neighbor among the tied classes.
    """

    def __init__(self, k: int = DEFAULT_K):
        super().__init__()
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        self.k = k
        self._values = None
        self._codes = None

    def fit(self, values: np.ndarray,
            labels: np.ndarray) -> "KNearestNeighbors":
        values, codes = self._encode(values, labels)
        if self.k > len(values):
            raise ValueError(f"k={self.k} exceeds the {len(values)} training "
                             f"rows")
        self._values, self._codes = values, codes
        return self

    def predict(self, values: np.ndarray) -> np.ndarray:
        values = self._check_fitted(values, self._values.shape[1])
        n_classes = len(self.classes_)
        predictions = np.empty(len(values), dtype=np.int64)
        for q, query in enumerate(values):
            distances = np.sqrt(np.sum((self._values - query)**2, axis=1))
            nearest = self._codes[np.argsort(distances, kind="stable")[:self.k]]
            votes = np.bincount(nearest, minlength=n_classes)
            tied = votes == votes.max()
            predictions[q] = next(c for c in nearest if tied[c])
        return self.classes_[predictions]


#
# Functions
#


def make_classifier(name: str, k: int = DEFAULT_K) -> Classifier:
    """A fresh classifier by name: dt or knn"""
    if name == DECISION_TREE:
        return DecisionTree()
    if name == KNN:
        return KNearestNeighbors(k)
    raise ValueError(f"unknown classifier {name!r}, expected one of "
                     f"{CLASSIFIERS}")


def train_decision_tree(train: vtidaddfs.LabeledDataset,
                        min_samples_split: int = 2) -> DecisionTree:
    """Grows a tree on a dataset"""
    return DecisionTree(min_samples_split).fit(train.values, train.labels)


def knn_classify(train: vtidaddfs.LabeledDataset, query: np.ndarray,
                 k: int = DEFAULT_K) -> str:
    """Class of a single sample by k-nearest-neighbor vote"""
    model = KNearestNeighbors(k).fit(train.values, train.labels)
    return str(model.predict(np.asarray(query, dtype=float))[0])
