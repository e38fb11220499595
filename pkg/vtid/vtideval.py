"""Cross-validated evaluation of feature subsets.

Feature selection runs inside each training fold, so test rows never reach a
selector unless the leaky mode is asked for. Reports carry the configuration
they were produced with.
"""

import dataclasses
import io
import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from vtid import vtidaddfs
from vtid import vtidbaselines
from vtid import vtidclassifiers
from vtid import vtidfeatures
from vtid import vtidingest
from vtid import vtidstats

#
# Constants
#

DEFAULT_FOLDS = 10
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
REFERENCE_SELECTOR = "addfs"

WINDOW = "window"
OFFSET = "offset"
SWEEP_VALUES = {
    WINDOW: (1.0, 2.0, 3.0, 4.0, 5.0, 6.0),
    OFFSET: (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
}

# Selector: (training dataset, seed) -> FeatureRanking
Selector = Callable[[vtidaddfs.LabeledDataset, int], vtidaddfs.FeatureRanking]

#
# Selectors
#


@dataclasses.dataclass(frozen=True)
class AddfsSelector:
    """ADDFS as a selector, with its ChiMerge and support settings bound"""
    max_intervals: int = vtidaddfs.DEFAULT_MAX_INTERVALS
    confidence: float = vtidaddfs.DEFAULT_CONFIDENCE
    support: str = vtidaddfs.DEFAULT_SUPPORT

    def __call__(self, dataset: vtidaddfs.LabeledDataset,
                 seed: int) -> vtidaddfs.FeatureRanking:
        return vtidaddfs.rank_features(dataset, self.max_intervals,
                                       self.confidence, self.support)


SELECTORS = {
    "addfs": AddfsSelector(),
    "relief": vtidbaselines.relief_ranking,
    "pearson": vtidbaselines.pearson_ranking,
    "fscore": vtidbaselines.fscore_ranking,
    "random": vtidbaselines.random_ranking,
    "none": vtidbaselines.identity_ranking,
}


def make_selector(name: str,
                  max_intervals: int = vtidaddfs.DEFAULT_MAX_INTERVALS,
                  confidence: float = vtidaddfs.DEFAULT_CONFIDENCE,
                  support: str = vtidaddfs.DEFAULT_SUPPORT) -> Selector:
    """Looks a selector up by name; the ADDFS options only apply to addfs"""
    if name not in SELECTORS:
        raise ValueError(f"unknown selector {name!r}, expected one of "
                         f"{tuple(SELECTORS)}")
    if name == "addfs":
        return AddfsSelector(max_intervals, confidence, support)
    return SELECTORS[name]


def _resolve_selector(selector: Union[str, Selector]) -> Tuple[str, Selector]:
    if isinstance(selector, str):
        return selector, make_selector(selector)
    if isinstance(selector, AddfsSelector):
        return "addfs", selector
    for name, known in SELECTORS.items():
        if known is selector:
            return name, selector
    return getattr(selector, "__name__", type(selector).__name__), selector


#
# Reports
#


@dataclasses.dataclass(frozen=True)
class EvalReport:
    """
    Cross-validation result for one selector at one feature fraction.

    Attributes:
        selector: name of the selector
        fraction: share of the features kept
        n_features: number of features kept
        classifier: name of the classifier
        seed: seed of the fold split and the selector
        per_fold: (accuracy, macro F1) of every fold, in fold order
        confusion: sum of the fold confusion matrices
        per_fold_positive_f1: F1 of the positive (second) class of every
                              fold; None unless the dataset has two classes
    """
    selector: str
    fraction: float
    n_features: int
    classifier: str
    seed: int
    per_fold: List[Tuple[float, float]]
    confusion: vtidstats.ConfusionMatrix
    per_fold_positive_f1: Optional[List[float]] = None

    @property
    def mean_accuracy(self) -> float:
        return vtidstats.summarize([acc for acc, _ in self.per_fold])[0]

    @property
    def mean_f1(self) -> float:
        return vtidstats.summarize([f1 for _, f1 in self.per_fold])[0]

    @property
    def std_accuracy(self) -> float:
        return vtidstats.summarize([acc for acc, _ in self.per_fold])[1]

    @property
    def std_f1(self) -> float:
        return vtidstats.summarize([f1 for _, f1 in self.per_fold])[1]

    @property
    def mean_positive_f1(self) -> Optional[float]:
        if self.per_fold_positive_f1 is None:
            return None
        return vtidstats.summarize(self.per_fold_positive_f1)[0]

    @property
    def std_positive_f1(self) -> Optional[float]:
        if self.per_fold_positive_f1 is None:
            return None
        return vtidstats.summarize(self.per_fold_positive_f1)[1]


@dataclasses.dataclass(frozen=True)
class AblationReport:
    """Full feature set against the set without peak-point features"""
    full: EvalReport
    reduced: EvalReport

    @property
    def delta_accuracy(self) -> float:
        return self.full.mean_accuracy - self.reduced.mean_accuracy

    @property
    def delta_f1(self) -> float:
        return self.full.mean_f1 - self.reduced.mean_f1


@dataclasses.dataclass(frozen=True)
class ParameterPoint:
    """One point of a sliding-window parameter sweep"""
    parameter: str
    value: float
    report: EvalReport


@dataclasses.dataclass(frozen=True)
class ComparisonReport:
    """
    Attributes:
        rows: (dataset, selector, fraction, mean accuracy) in run order
        wilcoxon: per fraction, (compared selector, test of the reference
                  selector's accuracies against it) pairs
        reference: the selector the others are tested against
    """
    rows: List[Tuple[str, str, float, float]]
    wilcoxon: Dict[float, List[Tuple[str, vtidstats.WilcoxonResult]]]
    reference: str = REFERENCE_SELECTOR


#
# Cross-validation
#


def stratified_kfold(dataset: vtidaddfs.LabeledDataset, k: int,
                     seed: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Splits the rows into k (train, test) index pairs. The rows of each class
    are shuffled and dealt round-robin onto the folds, continuing where the
    previous class stopped, so every fold holds each class within one sample
    of its share. k drops to the smallest class size, with a warning, when a
    class is too small.
    """
    if k < 2:
        raise ValueError(f"need at least 2 folds, got {k}")
    classes, counts = np.unique(dataset.labels, return_counts=True)
    if counts.min() < k:
        if counts.min() < 2:
            raise ValueError(f"class {classes[np.argmin(counts)]} has fewer "
                             f"than 2 samples; cannot cross-validate")
        logging.warning(f"Class {classes[np.argmin(counts)]} has only "
                        f"{counts.min()} samples; using {counts.min()} folds "
                        f"instead of {k}")
        k = int(counts.min())

    rng = np.random.default_rng(seed)
    fold_of = np.empty(dataset.n_samples, dtype=np.int64)
    offset = 0
    for c in classes:
        rows = rng.permutation(np.flatnonzero(dataset.labels == c))
        fold_of[rows] = (offset + np.arange(len(rows))) % k
        offset = (offset + len(rows)) % k

    everything = np.arange(dataset.n_samples)
    return [(everything[fold_of != fold], everything[fold_of == fold])
            for fold in range(k)]


def _evaluate_fold(task) -> List[np.ndarray]:
    """Confusion counts of one fold for every fraction"""
    (dataset, train, test, fold, selector_name, selector, ranking, fractions,
     classifier, k, seed) = task
    train_set = dataset.subset(rows=train)
    if ranking is None:
        try:
            ranking = selector(train_set, seed)
        except (ValueError, RuntimeError) as e:
            raise RuntimeError(f"Selector {selector_name} failed on fold "
                               f"{fold}: {e}") from e

    results = []
    for fraction in fractions:
        # dataset column order, so equal subsets train identical models
        columns = sorted(vtidaddfs.select_top(ranking, fraction))
        try:
            model = vtidclassifiers.make_classifier(classifier, k)
            model.fit(train_set.values[:, columns], train_set.labels)
            predicted = model.predict(dataset.values[test][:, columns])
        except ValueError as e:
            raise RuntimeError(f"Fold {fold}, fraction {fraction}: {e}") from e
        cm = vtidstats.ConfusionMatrix.from_predictions(
            dataset.labels[test], predicted, dataset.classes)
        logging.debug(f"{selector_name} fold {fold} fraction {fraction}: "
                      f"accuracy {vtidstats.accuracy(cm)}")
        results.append(cm.counts)
    return results


def run_sweep(dataset: vtidaddfs.LabeledDataset,
              selector: Union[str, Selector],
              fractions: Sequence[float],
              classifier: str = vtidclassifiers.DECISION_TREE,
              k_folds: int = DEFAULT_FOLDS,
              seed: int = 0,
              k: int = vtidclassifiers.DEFAULT_K,
              leaky: bool = False,
              jobs: int = 1) -> List[EvalReport]:
    """
    Evaluates the top fraction of the selector's ranking for every fraction.
    The selector ranks each training fold once and the ranking serves all
    fractions. With leaky=True the whole dataset is ranked once up front.
    """
    dataset.check_trainable()
    if not fractions:
        raise ValueError("no fractions to evaluate")
    for fraction in fractions:
        if not 0 < fraction <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    name, selector = _resolve_selector(selector)
    logging.info(f"Sweeping {name} over {len(fractions)} fractions with "
                 f"{classifier}, {k_folds} folds, seed {seed}")

    ranking = None
    if leaky:
        logging.warning("Ranking features on the full dataset; test folds "
                        "leak into the selection")
        ranking = selector(dataset, seed)

    splits = stratified_kfold(dataset, k_folds, seed)
    tasks = [(dataset, train, test, fold, name, selector, ranking,
              list(fractions), classifier, k, seed)
             for fold, (train, test) in enumerate(splits)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            fold_results = list(pool.map(_evaluate_fold, tasks))
    else:
        fold_results = [_evaluate_fold(task) for task in tasks]

    reports = []
    for i, fraction in enumerate(fractions):
        matrices = [
            vtidstats.ConfusionMatrix(result[i], dataset.classes)
            for result in fold_results
        ]
        per_fold = [(vtidstats.accuracy(cm), vtidstats.f1_score(cm))
                    for cm in matrices]
        positive = None
        if len(dataset.classes) == 2:
            positive = [vtidstats.positive_f1(cm) for cm in matrices]
        total = matrices[0]
        for cm in matrices[1:]:
            total = total + cm
        reports.append(
            EvalReport(name, fraction,
                       vtidaddfs.selection_size(dataset.n_features, fraction),
                       classifier, seed, per_fold, total, positive))
        logging.info(f"{name} fraction {fraction}: mean accuracy "
                     f"{reports[-1].mean_accuracy:.4f}, mean F1 "
                     f"{reports[-1].mean_f1:.4f}")
    return reports


def cross_validate(dataset: vtidaddfs.LabeledDataset,
                   selector: Union[str, Selector] = "none",
                   fraction: float = 1.0,
                   classifier: str = vtidclassifiers.DECISION_TREE,
                   k_folds: int = DEFAULT_FOLDS,
                   seed: int = 0,
                   k: int = vtidclassifiers.DEFAULT_K,
                   leaky: bool = False,
                   jobs: int = 1) -> EvalReport:
    """Cross-validation at a single fraction"""
    return run_sweep(dataset, selector, [fraction], classifier, k_folds, seed,
                     k, leaky, jobs)[0]


#
# Experiments
#


def ablation_peak_features(dataset: vtidaddfs.LabeledDataset,
                           classifier: str = vtidclassifiers.DECISION_TREE,
                           k_folds: int = DEFAULT_FOLDS,
                           seed: int = 0,
                           k: int = vtidclassifiers.DEFAULT_K,
                           jobs: int = 1) -> AblationReport:
    """Evaluates all features against all but the peak-point features"""
    missing = [
        name for name in vtidfeatures.PEAK_FEATURE_NAMES
        if name not in dataset.feature_names
    ]
    if missing:
        raise ValueError(f"dataset lacks the peak feature columns {missing}")
    peak = set(vtidfeatures.PEAK_FEATURE_NAMES)
    keep = [i for i, name in enumerate(dataset.feature_names)
            if name not in peak]

    logging.info("STARTING PEAK FEATURE ABLATION")
    full = cross_validate(dataset, "none", 1.0, classifier, k_folds, seed, k,
                          jobs=jobs)
    reduced = cross_validate(dataset.subset(columns=keep), "none", 1.0,
                             classifier, k_folds, seed, k, jobs=jobs)
    report = AblationReport(full, reduced)
    logging.info(f"FS ({full.n_features} features) vs FS-PP "
                 f"({reduced.n_features} features): accuracy change "
                 f"{report.delta_accuracy:+.4f}, F1 change "
                 f"{report.delta_f1:+.4f}")
    logging.info("FINISHED PEAK FEATURE ABLATION")
    return report


def run_parameter_sweep(flows: Sequence[vtidingest.Flow],
                        parameter: str,
                        values: Optional[Sequence[float]] = None,
                        params: vtidfeatures.PeakParams = vtidfeatures.PeakParams(),
                        classifier: str = vtidclassifiers.DECISION_TREE,
                        k_folds: int = DEFAULT_FOLDS,
                        seed: int = 0,
                        k: int = vtidclassifiers.DEFAULT_K,
                        default_label: Optional[str] = None,
                        jobs: int = 1) -> List[ParameterPoint]:
    """
    Re-extracts the BRPPSW columns for every window length (parameter
    "window") or offset factor ("offset") and cross-validates all features.
    The other columns are extracted once with params.
    """
    if parameter not in SWEEP_VALUES:
        raise ValueError(f"unknown sweep parameter {parameter!r}, expected "
                         f"one of {tuple(SWEEP_VALUES)}")
    if not flows:
        raise ValueError("no flows to sweep over")
    values = SWEEP_VALUES[parameter] if values is None else values
    field = "window_length" if parameter == WINDOW else "offset_factor"

    logging.info(f"STARTING {parameter.upper()} SWEEP")
    matrix = vtidfeatures.extract_matrix(flows, params, default_label, jobs)
    columns = [
        vtidfeatures.FEATURE_NAMES.index(name)
        for name in vtidfeatures.BRPPSW_FEATURE_NAMES
    ]
    points = []
    for value in values:
        swept = dataclasses.replace(params, **{field: value})
        table = matrix.values.copy()
        table[:, columns] = np.vstack(
            [vtidfeatures.brppsw_columns(flow, swept) for flow in flows])
        dataset = vtidaddfs.LabeledDataset(table, matrix.labels, matrix.names)
        report = cross_validate(dataset, "none", 1.0, classifier, k_folds,
                                seed, k, jobs=jobs)
        logging.info(f"{field}={value}: mean accuracy "
                     f"{report.mean_accuracy:.4f}")
        points.append(ParameterPoint(parameter, float(value), report))
    logging.info(f"FINISHED {parameter.upper()} SWEEP")
    return points


def run_comparison(datasets: Sequence[Tuple[str, vtidaddfs.LabeledDataset]],
                   selectors: Sequence[Union[str, Selector]],
                   fractions: Sequence[float],
                   classifier: str = vtidclassifiers.DECISION_TREE,
                   k_folds: int = DEFAULT_FOLDS,
                   seed: int = 0,
                   k: int = vtidclassifiers.DEFAULT_K,
                   method: str = vtidstats.WILCOXON_AUTO,
                   leaky: bool = False,
                   jobs: int = 1) -> ComparisonReport:
    """
    Mean accuracy of every selector on every dataset at every fraction, plus
    one Wilcoxon table per fraction testing addfs against each other selector
    across the datasets.
    """
    resolved = [_resolve_selector(s) for s in selectors]
    names = [name for name, _ in resolved]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate selectors in {names}")

    logging.info("STARTING COMPARISON")
    rows = []
    accuracies = {}
    for dataset_name, dataset in datasets:
        logging.info(f"Evaluating dataset {dataset_name}")
        for name, selector in resolved:
            try:
                reports = run_sweep(dataset, selector, fractions, classifier,
                                    k_folds, seed, k, leaky, jobs)
            except (ValueError, RuntimeError) as e:
                raise RuntimeError(f"Dataset {dataset_name}: {e}") from e
            for report in reports:
                rows.append((dataset_name, name, report.fraction,
                             report.mean_accuracy))
                accuracies[name, report.fraction, dataset_name] = \
                    report.mean_accuracy

    wilcoxon = {}
    if REFERENCE_SELECTOR in names and len(names) > 1:
        if len(datasets) < 2:
            logging.warning("Need at least 2 datasets for a Wilcoxon test; "
                            "reporting accuracies only")
        else:
            for fraction in fractions:
                reference = [
                    accuracies[REFERENCE_SELECTOR, fraction, d]
                    for d, _ in datasets
                ]
                wilcoxon[fraction] = [
                    (name,
                     vtidstats.wilcoxon_signed_rank(
                         reference,
                         [accuracies[name, fraction, d] for d, _ in datasets],
                         method))
                    for name in names
                    if name != REFERENCE_SELECTOR
                ]
    logging.info("FINISHED COMPARISON")
    return ComparisonReport(rows, wilcoxon)


#
# Tabular datasets
#


def load_tabular(path: str) -> vtidaddfs.LabeledDataset:
    """
    Reads a labeled dataset. Two layouts are understood: a CSV with a header
    row and the class in the last column (an optional leading flow_id column
    and lines starting with # are ignored), and the KEEL format whose @attribute
    lines name the columns and whose @data line starts the rows. "?" and empty
    cells are missing; rows with missing values are dropped with a warning.
    """
    with open(path) as f:
        text = f.read()
    lines = text.splitlines()
    first = next((line.strip() for line in lines
                  if line.strip() and not line.lstrip().startswith(("#", "%"))),
                 None)
    if first is None:
        raise ValueError(f"{path}: file holds no data")

    try:
        if first.startswith("@"):
            frame = _read_keel(path, lines)
        else:
            frame = pd.read_csv(io.StringIO(text),
                                dtype=str,
                                comment="#",
                                skipinitialspace=True,
                                na_values=["?"])
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ValueError(f"{path}: {e}") from e

    frame.columns = [str(c).strip() for c in frame.columns]
    if frame.columns[0] == "flow_id":
        frame = frame.drop(columns="flow_id")
    if frame.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column and a "
                         f"label column")
    frame = frame.apply(lambda column: column.map(
        lambda v: v.strip() if isinstance(v, str) else v)).replace("", np.nan)

    missing = frame.isna().any(axis=1)
    if missing.any():
        logging.warning(f"{path}: rejected {int(missing.sum())} of "
                        f"{len(frame)} rows with missing values")
    frame = frame[~missing]
    if frame.empty:
        raise ValueError(f"{path}: no complete rows")

    features = frame.iloc[:, :-1]
    numeric = features.apply(pd.to_numeric, errors="coerce")
    bad = np.argwhere(numeric.isna().to_numpy())
    if len(bad):
        row, col = bad[0]
        raise ValueError(f"{path}: data row {frame.index[row] + 1}, column "
                         f"{features.columns[col]}: non-numeric value "
                         f"{features.iat[row, col]!r}")

    dataset = vtidaddfs.LabeledDataset(numeric.to_numpy(dtype=float),
                                       frame.iloc[:, -1].to_numpy(dtype=str),
                                       list(features.columns))
    logging.info(f"Loaded {path}: {dataset.n_samples} rows, "
                 f"{dataset.n_features} features, {len(dataset.classes)} "
                 f"classes")
    return dataset


def _read_keel(path: str, lines: Sequence[str]) -> pd.DataFrame:
    """Parses the @-header of a KEEL file and reads the rows after @data"""
    names = []
    for number, line in enumerate(lines):
        stripped = line.strip()
        keyword = stripped.split(None, 1)[0].lower() if stripped else ""
        if keyword == "@attribute":
            parts = stripped.split(None, 2)
            if len(parts) < 2:
                raise ValueError(f"{path}: line {number + 1}: @attribute "
                                 f"without a name")
            names.append(parts[1].strip("'\""))
        elif keyword == "@data":
            data = "\n".join(lines[number + 1:])
            if not data.strip():
                raise ValueError(f"{path}: no rows after @data")
            return pd.read_csv(io.StringIO(data),
                               header=None,
                               names=names,
                               dtype=str,
                               comment="%",
                               skipinitialspace=True,
                               na_values=["?"])
    raise ValueError(f"{path}: KEEL header without an @data line")
