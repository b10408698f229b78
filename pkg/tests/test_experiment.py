import csv
import io
import json
import math

import numpy as np
import pytest

from bemi.core import Architecture
from bemi.ensemble import ensemble_from_json
from bemi.errors import CapacityError, InvalidArgument
from bemi.experiment import (
    ExperimentConfig,
    emit_report,
    run_ensemble_experiment,
    run_pair_experiment,
)
from bemi.trainer import StageBudget
from conftest import MNIST_DIR

QUICK = StageBudget(5, 5, 5)


def quick_cfg(**kw):
    base = dict(dataset="synthetic", classes=(0, 1, 2), images_per_class=3, test_per_class=10,
                arch=(8, 2, 1), budget=QUICK, seeds=(0, 1), synthetic_features=8)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def three_class_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    report, ensembles = run_ensemble_experiment(quick_cfg(), out)
    return report, ensembles, out


def test_parameter_counts():
    assert 45 * Architecture((784, 4, 4, 1)).total_links == 142_020
    assert Architecture((784, 16, 16, 10)).total_links == 12_960


def test_report_invariants(three_class_run):
    report, ensembles, _ = three_class_run
    assert report.check() == []
    assert len(report.runs) == 2 and len(ensembles) == 2
    for run in report.runs:
        assert run.n_nets == 3
        assert run.n_test == 30
        assert [sum(row) for row in run.confusion] == [10, 10, 10]
        assert len(run.confusion[0]) == 4  # classes plus unclassified
        assert run.correct_pct + run.wrong_pct + run.unclassified_pct == pytest.approx(100, abs=0.01)
        correct = run.status_pct["1C"] + run.status_pct["2C"]
        assert correct == pytest.approx(run.correct_pct)
        assert sum(run.histogram.values()) == 3 * 18
        assert run.links_mw_pct is not None and run.links_mw_pct <= run.links_mm_pct + 1e-9
        assert set(run.runtime_mean_s) == {"SM", "MM", "MW"}
    assert sum(report.histogram.values()) == 2 * 3 * 18
    assert set(report.summary["correct_pct"]) == {"mean", "min", "max"}


def test_seeds_draw_disjoint_and_reproducible_samples(three_class_run):
    report, _, _ = three_class_run
    again, _ = run_ensemble_experiment(quick_cfg(stages="sm"), None)
    assert [r.train_indices for r in again.runs] == [r.train_indices for r in report.runs]
    first, second = ({i for v in r.train_indices.values() for i in v} for r in report.runs)
    assert len(first) == len(second) == 9
    assert first.isdisjoint(second)


def test_serialized_ensembles_written(three_class_run):
    _, ensembles, out = three_class_run
    for seed, ens in zip((0, 1), ensembles):
        back = ensemble_from_json((out / f"ensemble_seed{seed}.json").read_text())
        assert {k: v.weights for k, v in back.members.items()} == {k: v.weights for k, v in ens.members.items()}


def test_json_report(three_class_run):
    report, _, _ = three_class_run
    docs = emit_report(report, "json")
    doc = json.loads(docs["report.json"])
    assert list(doc)[:3] == ["name", "partial", "config"]
    assert doc["config"]["arch"] == [8, 2, 1]
    assert len(doc["runs"]) == 2
    for value in doc["runs"][0]["status_pct"].values():
        assert round(value, 2) == value


def test_csv_reports(three_class_run):
    report, _, _ = three_class_run
    docs = emit_report(report, "csv")
    runs = list(csv.reader(io.StringIO(docs["runs.csv"])))
    assert runs[0][:12] == ["seed", "r", "correct", "wrong", "n.l.", "1C", "1I", "2C", "2I'", "2I''", "oI'", "oI''"]
    assert len(runs) == 3
    assert all(len(cell.split(".")[1]) == 2 for cell in runs[1][2:12])
    weights = list(csv.reader(io.StringIO(docs["weights.csv"])))
    assert weights[0] == ["seed", "w=-1", "w=0", "w=1", "others"]
    assert float(weights[1][4]) == 0.0  # no intermediate values when P=1
    assert sum(float(c) for c in weights[1][1:]) == pytest.approx(100, abs=0.02)
    confusion = list(csv.reader(io.StringIO(docs["confusion.csv"])))
    assert confusion[0] == ["seed", "truth", "0", "1", "2", "unclassified"]
    assert len(confusion) == 1 + 2 * 3
    with pytest.raises(InvalidArgument):
        emit_report(report, "xml")


def test_others_bucket_with_larger_bound():
    report = run_pair_experiment(quick_cfg(classes=(0, 1), p_bound=3, seeds=(0,), stages="sm"))
    assert report.check() == []
    row = list(csv.reader(io.StringIO(emit_report(report, "csv")["weights.csv"])))
    assert row[0] == ["seed", "w=-3", "w=0", "w=3", "others"]
    hist = report.runs[0].histogram
    others = sum(n for v, n in hist.items() if v in (-2, -1, 1, 2))
    assert float(row[1][4]) == pytest.approx(100 * others / sum(hist.values()), abs=0.005)


def test_empty_test_set_gives_valid_documents():
    report, _ = run_ensemble_experiment(quick_cfg(test_per_class=0, seeds=(0,)))
    assert report.runs[0].n_test == 0
    assert report.check() == []
    docs = emit_report(report, "csv")
    assert docs["runs.csv"].count("\n") == 2
    json.loads(emit_report(report, "json")["report.json"])


def test_single_subset_ensemble():
    report, ensembles = run_ensemble_experiment(quick_cfg(m=3, seeds=(0,), stages="sm"))
    assert len(ensembles[0].members) == 1
    assert ensembles[0].members[(0, 1, 2)].weights.arch.n_outputs == 2
    assert report.check() == []


def test_config_errors():
    with pytest.raises(InvalidArgument):
        quick_cfg(classes=(1,))
    with pytest.raises(InvalidArgument):
        quick_cfg(m=4)
    with pytest.raises(InvalidArgument):
        quick_cfg(seeds=())
    with pytest.raises(InvalidArgument):
        run_ensemble_experiment(quick_cfg(arch=(5, 2, 1)))
    with pytest.raises(InvalidArgument):
        run_pair_experiment(quick_cfg())
    with pytest.raises(InvalidArgument):
        run_ensemble_experiment(quick_cfg(dataset="mnist"))


@pytest.mark.skipif(not MNIST_DIR.exists(), reason="bundled MNIST subset missing")
def test_capacity_errors_propagate():
    cfg = quick_cfg(dataset="mnist", data_dir=str(MNIST_DIR), classes=(1, 8), arch=None,
                    images_per_class=10, test_per_class=495, seeds=(0,))
    with pytest.raises(CapacityError):
        run_ensemble_experiment(cfg)


@pytest.mark.skipif(not MNIST_DIR.exists(), reason="bundled MNIST subset missing")
def test_downsampled_mnist_pair():
    cfg = quick_cfg(dataset="mnist", data_dir=str(MNIST_DIR), classes=(1, 8), arch=None, downsample=4,
                    images_per_class=4, test_per_class=50, seeds=(0,))
    report = run_pair_experiment(cfg)
    assert report.config["arch"] == [49, 4, 4, 1]
    assert report.check() == []
    assert not math.isnan(report.runs[0].correct_pct)
