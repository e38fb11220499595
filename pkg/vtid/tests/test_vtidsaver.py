"""Tests for the CSV writers"""

import os

import numpy as np
import pytest
from vtid import vtidaddfs
from vtid import vtideval
from vtid import vtidfeatures
from vtid import vtidsaver
from vtid import vtidstats


def read_lines(path):
    with open(path) as f:
        return f.read().splitlines()


def make_report(selector="addfs", fraction=0.5, positive=(1.0, 0.5)):
    cm = vtidstats.ConfusionMatrix([[3, 1], [0, 4]], ["a", "b"])
    return vtideval.EvalReport(selector, fraction, 3, "dt", 0,
                               [(1.0, 1.0), (0.5, 0.4)], cm,
                               None if positive is None else list(positive))


class TestConfigComment:

    def test_round_trip(self, tmpdir):
        config = {"seed": 3, "mode": "RANK", "fractions": "0.1,0.2"}
        path = os.path.join(tmpdir, "out.csv")
        with open(path, "w") as f:
            f.write(vtidsaver.config_comment(config))
            f.write("a,b\n")
        assert vtidsaver.read_config_comment(path) == config

    def test_keys_sorted(self):
        assert vtidsaver.config_comment({"b": 1, "a": 2}) == \
            '# config: {"a": 2, "b": 1}\n'

    def test_no_config(self, tmpdir):
        assert vtidsaver.config_comment(None) == ""
        path = os.path.join(tmpdir, "plain.csv")
        with open(path, "w") as f:
            f.write("a,b\n")
        assert vtidsaver.read_config_comment(path) is None

    def test_broken_echo(self, tmpdir):
        path = os.path.join(tmpdir, "broken.csv")
        with open(path, "w") as f:
            f.write("# config: {not json\n")
        with pytest.raises(ValueError):
            vtidsaver.read_config_comment(path)


class TestFeatureSaver:
    """Tests for FeatureSaver"""

    @pytest.fixture
    def matrix(self):
        rng = np.random.default_rng(0)
        return vtidfeatures.FeatureMatrix(["t|f1", "t|f2"],
                                          rng.uniform(0, 1e6, size=(2, 89)),
                                          ["web", "video"])

    def test_layout(self, tmpdir, matrix):
        features = os.path.join(tmpdir, "features.csv")
        dictionary = os.path.join(tmpdir, "dictionary.csv")
        saver = vtidsaver.FeatureSaver(matrix, features, dictionary,
                                       {"seed": 1})
        saver.run()

        lines = read_lines(features)
        assert lines[0] == '# config: {"seed": 1}'
        header = lines[1].split(",")
        assert header[0] == "flow_id" and header[-1] == "label"
        assert tuple(header[1:-1]) == vtidfeatures.FEATURE_NAMES
        assert len(lines) == 4
        row = lines[2].split(",")
        assert row[0] == "t|f1" and row[-1] == "web"
        # repr() keeps every bit
        assert [float(v) for v in row[1:-1]] == matrix.values[0].tolist()

        entries = read_lines(dictionary)
        assert entries[0] == "name,description"
        assert len(entries) == 90
        assert [e.split(",")[0] for e in entries[1:]] == list(
            vtidfeatures.FEATURE_NAMES)

    def test_loads_back(self, tmpdir, matrix):
        features = os.path.join(tmpdir, "features.csv")
        vtidsaver.FeatureSaver(matrix, features).run()
        dataset = vtideval.load_tabular(features)
        assert dataset.feature_names == vtidfeatures.FEATURE_NAMES
        assert np.allclose(dataset.values, matrix.values, rtol=1e-12, atol=0)
        assert dataset.labels.tolist() == ["web", "video"]

    def test_runs_once(self, tmpdir, matrix):
        saver = vtidsaver.FeatureSaver(matrix,
                                       os.path.join(tmpdir, "features.csv"))
        saver.run()
        with pytest.raises(RuntimeError):
            saver.run()

    def test_comma_in_flow_id(self, tmpdir, matrix):
        bad = vtidfeatures.FeatureMatrix(["a,b", "c"], matrix.values,
                                         matrix.labels)
        with pytest.raises(ValueError):
            vtidsaver.FeatureSaver(bad, os.path.join(tmpdir, "f.csv")).run()


class TestWriters:
    """Tests for the result CSV writers"""

    def test_ranking(self, tmpdir):
        ranking = vtidaddfs.ranking_from_scores([0.25, 0.5, 0.0],
                                                ["x", "y", "z"])
        path = os.path.join(tmpdir, "ranking.csv")
        vtidsaver.write_ranking(ranking, path)
        assert read_lines(path) == [
            "rank,feature_name,emd_score", "1,y,0.5", "2,x,0.25", "3,z,0.0"
        ]

    def test_sweep(self, tmpdir):
        path = os.path.join(tmpdir, "sweep.csv")
        vtidsaver.write_sweep([make_report(fraction=0.5),
                               make_report(fraction=1.0)], path, {"seed": 0})
        lines = read_lines(path)
        assert lines[1] == ("selector,fraction,n_features,mean_acc,mean_f1,"
                            "std_acc,std_f1,mean_pos_f1,std_pos_f1")
        fields = lines[2].split(",")
        assert fields[:3] == ["addfs", "0.5", "3"]
        assert [float(v) for v in fields[3:]] == pytest.approx(
            [0.75, 0.7, 0.25, 0.3, 0.75, 0.25])
        assert lines[3].startswith("addfs,1.0,3,")

    def test_ablation(self, tmpdir):
        path = os.path.join(tmpdir, "ablation.csv")
        report = vtideval.AblationReport(make_report("none"),
                                         make_report("none"))
        vtidsaver.write_ablation(report, path)
        lines = read_lines(path)
        assert lines[0].startswith("feature_set,n_features,")
        assert [line.split(",")[0] for line in lines[1:]] == ["FS", "FS-PP"]

    def test_parameter_sweep(self, tmpdir):
        path = os.path.join(tmpdir, "params.csv")
        points = [vtideval.ParameterPoint("window", 2.0, make_report("none"))]
        vtidsaver.write_parameter_sweep(points, path)
        fields = read_lines(path)[1].split(",")
        assert fields[:2] == ["window", "2.0"]
        assert [float(v) for v in fields[2:]] == pytest.approx(
            [0.75, 0.7, 0.25, 0.3, 0.75, 0.25])

    def test_positive_f1_cells_empty_beyond_two_classes(self, tmpdir):
        path = os.path.join(tmpdir, "sweep.csv")
        vtidsaver.write_sweep([make_report(positive=None)], path)
        fields = read_lines(path)[1].split(",")
        assert len(fields) == 9
        assert fields[-2:] == ["", ""]

    def test_comparison_and_wilcoxon(self, tmpdir):
        result = vtidstats.WilcoxonResult(77.0, 1.0, 0.001, 12, "exact")
        report = vtideval.ComparisonReport(
            [("wine", "addfs", 0.1, 0.9), ("wine", "relief", 0.1, 0.8)],
            {0.1: [("relief", result)]})
        comparison = os.path.join(tmpdir, "comparison.csv")
        wilcoxon = os.path.join(tmpdir, "wilcoxon.csv")
        vtidsaver.write_comparison(report, comparison)
        vtidsaver.write_wilcoxon(report, 0.1, wilcoxon)
        assert read_lines(comparison) == [
            "dataset,selector,fraction,accuracy", "wine,addfs,0.1,0.9",
            "wine,relief,0.1,0.8"
        ]
        assert read_lines(wilcoxon) == [
            "vs,R+,R-,p", "addfs vs relief,77.0,1.0,0.001"
        ]
