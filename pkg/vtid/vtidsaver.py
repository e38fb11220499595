"""Writes the CSV outputs of every mode.

Each CSV starts with a "# config: {...}" comment line holding the effective
configuration of the run that wrote it (JSON, sorted keys); readers of the
files skip lines starting with #. Floats are written with repr() so they read
back bit-identically.
"""

import json
import logging
from typing import Iterable, List, Optional, Sequence

from vtid import vtidaddfs
from vtid import vtideval
from vtid import vtidfeatures
from vtid import vtidrunbase

CONFIG_PREFIX = "# config: "

# Cross-validation scores; the positive-class F1 columns stay empty unless the
# dataset has two classes
SCORE_COLUMNS = "mean_acc,mean_f1,std_acc,std_f1,mean_pos_f1,std_pos_f1"


def config_comment(config: Optional[dict]) -> str:
    """The comment line echoing a configuration, or "" without one"""
    if config is None:
        return ""
    return CONFIG_PREFIX + json.dumps(config, sort_keys=True) + "\n"


def read_config_comment(path: str) -> Optional[dict]:
    """The configuration echoed on the first line of a CSV, if any"""
    with open(path) as f:
        first = f.readline()
    if not first.startswith(CONFIG_PREFIX):
        return None
    try:
        return json.loads(first[len(CONFIG_PREFIX):])
    except json.JSONDecodeError as e:
        raise ValueError(f"{path}: line 1: bad configuration echo: {e}") from e


def _num(value) -> str:
    return repr(float(value))


def _optional(value) -> str:
    return "" if value is None else _num(value)


def _scores(report: vtideval.EvalReport) -> List[str]:
    """mean_acc, mean_f1, std_acc, std_f1, mean_pos_f1, std_pos_f1"""
    return [
        _num(report.mean_accuracy),
        _num(report.mean_f1),
        _num(report.std_accuracy),
        _num(report.std_f1),
        _optional(report.mean_positive_f1),
        _optional(report.std_positive_f1)
    ]


def _write_rows(path: str, header: str, rows: Iterable[Sequence],
                config: Optional[dict]):
    with open(path, "w") as f:
        f.write(config_comment(config))
        f.write(header + "\n")
        for row in rows:
            f.write(",".join(row) + "\n")


class FeatureSaver(vtidrunbase.VtidRunBase):
    """Saves a FeatureMatrix and, optionally, the feature dictionary.

    The feature CSV has the columns flow_id, the 89 features and label. Note
    that the class is only meant to be run once; calling run() again raises a
    RuntimeError.

    Attributes:
        _matrix: the FeatureMatrix to save
        _output_features: CSV file for the matrix
        _output_dictionary: CSV file for the feature names and descriptions,
                            or None to skip it
        _config: configuration to echo in the CSV header
    """

    #
    # Public
    #

    def __init__(self,
                 matrix: vtidfeatures.FeatureMatrix,
                 output_features: str,
                 output_dictionary: Optional[str] = None,
                 config: Optional[dict] = None):
        super().__init__()
        self._matrix = matrix
        self._output_features = output_features
        self._output_dictionary = output_dictionary
        self._config = config

    def run(self):
        """Perform all saving actions"""
        super().check_run_fatal()
        logging.info("STARTING SAVE")
        self._write_features()
        if self._output_dictionary is not None:
            write_feature_dictionary(self._output_dictionary)
        logging.info("FINISHED SAVE")

    #
    # Private
    #

    def _write_features(self):
        logging.info(f"Writing {len(self._matrix.flow_ids)} feature rows to "
                     f"{self._output_features}")
        for flow_id in self._matrix.flow_ids:
            if "," in flow_id:
                raise ValueError(f"flow id {flow_id!r} contains a comma")
        _write_rows(self._output_features,
                    ",".join(("flow_id",) + tuple(self._matrix.names) +
                             ("label",)),
                    ([flow_id] + [_num(v) for v in row] + [label]
                     for flow_id, row, label in zip(self._matrix.flow_ids,
                                                    self._matrix.values,
                                                    self._matrix.labels)),
                    self._config)


def write_feature_dictionary(path: str):
    """name,description of all 89 features, in column order"""
    logging.info(f"Writing the feature dictionary to {path}")
    with open(path, "w") as f:
        f.write("name,description\n")
        for name in vtidfeatures.FEATURE_NAMES:
            f.write(f"{name},\"{vtidfeatures.FEATURE_DESCRIPTIONS[name]}\"\n")


def write_ranking(ranking: vtidaddfs.FeatureRanking,
                  path: str,
                  config: Optional[dict] = None):
    """rank (1-based),feature_name,emd_score"""
    logging.info(f"Writing the ranking of {len(ranking.order)} features to "
                 f"{path}")
    _write_rows(path, "rank,feature_name,emd_score",
                ([str(rank), ranking.feature_names[i],
                  _num(ranking.scores[i])]
                 for rank, i in enumerate(ranking.order, start=1)), config)


def write_sweep(reports: Sequence[vtideval.EvalReport],
                path: str,
                config: Optional[dict] = None):
    logging.info(f"Writing {len(reports)} sweep points to {path}")
    _write_rows(path, f"selector,fraction,n_features,{SCORE_COLUMNS}",
                ([r.selector, _num(r.fraction), str(r.n_features)] +
                 _scores(r) for r in reports), config)


def write_ablation(report: vtideval.AblationReport,
                   path: str,
                   config: Optional[dict] = None):
    logging.info(f"Writing the peak feature ablation to {path}")
    _write_rows(path, f"feature_set,n_features,{SCORE_COLUMNS}",
                ([name, str(r.n_features)] + _scores(r)
                 for name, r in (("FS", report.full),
                                 ("FS-PP", report.reduced))), config)


def write_parameter_sweep(points: Sequence[vtideval.ParameterPoint],
                          path: str,
                          config: Optional[dict] = None):
    logging.info(f"Writing {len(points)} parameter sweep points to {path}")
    _write_rows(path, f"parameter,value,{SCORE_COLUMNS}",
                ([p.parameter, _num(p.value)] + _scores(p.report)
                 for p in points), config)


def write_comparison(report: vtideval.ComparisonReport,
                     path: str,
                     config: Optional[dict] = None):
    logging.info(f"Writing {len(report.rows)} comparison rows to {path}")
    _write_rows(path, "dataset,selector,fraction,accuracy",
                ([dataset, selector, _num(fraction), _num(acc)]
                 for dataset, selector, fraction, acc in report.rows), config)


def write_wilcoxon(report: vtideval.ComparisonReport,
                   fraction: float,
                   path: str,
                   config: Optional[dict] = None):
    """One Wilcoxon table: vs,R+,R-,p"""
    logging.info(f"Writing the Wilcoxon table for fraction {fraction} to "
                 f"{path}")
    _write_rows(path, "vs,R+,R-,p",
                ([f"{report.reference} vs {name}", _num(result.r_plus),
                  _num(result.r_minus), _num(result.p_value)]
                 for name, result in report.wilcoxon[fraction]), config)
