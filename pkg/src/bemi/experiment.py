"""Experiment harness: sample, train ensembles per seed, evaluate and report."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from bemi.core import UNCLASSIFIED, Architecture
from bemi.data import (
    Dataset,
    build_test_set,
    downsample_dataset,
    load_csv_heart,
    load_mnist_dir,
    sample_per_class,
    synthetic_dataset,
)
from bemi.ensemble import (
    Ensemble,
    LabelStatus,
    build_ensemble,
    ensemble_to_json,
    evaluate,
    subset_architecture,
)
from bemi.errors import EnsembleBuildError, InvalidArgument
from bemi.milp.builder import Tolerances
from bemi.trainer import StageBudget

log = logging.getLogger(__name__)

STAGE_NAMES = ("SM", "MM", "MW")


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    data_dir: str | None = None
    classes: tuple = (0, 1)
    m: int = 2
    arch: tuple[int, ...] | None = None  # None: (n_features, 4, 4, 1)
    p_bound: int = 1
    images_per_class: int = 10
    test_per_class: int = 100
    budget: StageBudget = field(default_factory=StageBudget)
    stages: str = "sm+mm+mw"
    seeds: tuple[int, ...] = (0,)
    epsilon: float | None = None
    downsample: int = 1
    backend: str = "highs"
    parallel: int | None = None
    serialize: bool = False
    synthetic_features: int = 8

    def __post_init__(self):
        self.classes = tuple(sorted(set(self.classes)))
        if len(self.classes) < 2:
            raise InvalidArgument("an experiment needs at least two classes")
        if not 2 <= self.m <= len(self.classes):
            raise InvalidArgument(f"m={self.m} must lie in [2, {len(self.classes)}]")
        if self.images_per_class < 1 or self.test_per_class < 0:
            raise InvalidArgument("images per class must be positive and test size nonnegative")
        if not self.seeds:
            raise InvalidArgument("at least one seed is required")


@dataclass
class RunResult:
    """Metrics of one seed."""

    seed: int
    n_test: int
    correct_pct: float
    wrong_pct: float
    unclassified_pct: float
    status_pct: dict[str, float]
    links_mm_pct: float | None
    links_mw_pct: float | None
    links_final_pct: float
    active_links: int
    histogram: dict[int, int]
    confusion: list[list[int]]
    runtime_mean_s: dict[str, float]
    runtime_max_s: dict[str, float]
    gap_mean: dict[str, float | None]
    gap_max: dict[str, float | None]
    train_accuracy_mean: float
    n_nets: int
    partial: bool = False
    failures: dict[str, str] = field(default_factory=dict)
    train_indices: dict[str, list[int]] = field(default_factory=dict)


@dataclass
class ExperimentReport:
    name: str
    config: dict
    classes: list
    m: int
    weight_bound: int
    total_links_per_net: int
    runs: list[RunResult]
    summary: dict = field(default_factory=dict)
    partial: bool = False

    @property
    def histogram(self) -> dict[int, int]:
        total = {v: 0 for v in range(-self.weight_bound, self.weight_bound + 1)}
        for run in self.runs:
            for v, n in run.histogram.items():
                total[v] += n
        return total

    def check(self) -> list[str]:
        """Report invariants; returns the list of violations."""
        problems = []
        for run in self.runs:
            if run.n_test:
                s = run.correct_pct + run.wrong_pct + run.unclassified_pct
                if abs(s - 100.0) > 0.01:
                    problems.append(f"seed {run.seed}: outcome percentages sum to {s}")
                if abs(sum(run.status_pct.values()) - 100.0) > 0.01:
                    problems.append(f"seed {run.seed}: status percentages do not sum to 100")
            if sum(run.histogram.values()) != self.total_links_per_net * run.n_nets:
                problems.append(f"seed {run.seed}: histogram does not cover every link")
            if sum(map(sum, run.confusion)) != run.n_test:
                problems.append(f"seed {run.seed}: confusion matrix does not cover the test set")
        return problems


# data -------------------------------------------------------------------------------


@dataclass
class DataBundle:
    train: Dataset
    test: Dataset
    fixed_test: bool  # test split already separate from the training pool


def load_data(cfg: ExperimentConfig) -> DataBundle:
    kind = cfg.dataset
    if kind in ("mnist", "fashion"):
        if not cfg.data_dir:
            raise InvalidArgument(f"--data-dir is required for {kind}")
        train = load_mnist_dir(cfg.data_dir, "train")
        try:
            test, fixed = load_mnist_dir(cfg.data_dir, "test"), True
        except FileNotFoundError:
            test, fixed = train, False
        if cfg.downsample > 1:
            train = downsample_dataset(train, cfg.downsample)
            test = downsample_dataset(test, cfg.downsample) if fixed else train
        return DataBundle(train, test, fixed)
    if kind == "heart":
        if not cfg.data_dir:
            raise InvalidArgument("--data-dir must point at the heart CSV file")
        split = load_csv_heart(cfg.data_dir, seed=0)
        return DataBundle(split.train, split.test, True)
    if kind == "synthetic":
        n = max(cfg.classes) + 1
        per_class = cfg.images_per_class * len(cfg.seeds) + cfg.test_per_class + 5
        ds = synthetic_dataset(n, per_class, cfg.synthetic_features, seed=0)
        return DataBundle(ds, ds, False)
    raise InvalidArgument(f"unknown dataset {kind!r}")


def _architecture(cfg: ExperimentConfig, n_features: int) -> Architecture:
    sizes = tuple(cfg.arch) if cfg.arch else (n_features, 4, 4, 1)
    if sizes[0] != n_features:
        raise InvalidArgument(f"architecture expects {sizes[0]} inputs but the data has {n_features} features")
    return Architecture(sizes, cfg.p_bound)


def _test_indices(bundle: DataBundle, cfg: ExperimentConfig) -> dict:
    if bundle.fixed_test and cfg.dataset == "heart":
        return {c: bundle.test.indices_of(c) for c in cfg.classes}
    return build_test_set(bundle.test, cfg.classes, cfg.test_per_class)


# metrics ----------------------------------------------------------------------------------


def _pct(n: int, total: int) -> float:
    return 100.0 * n / total if total else 0.0


def _stage_stats(ens: Ensemble, key: str, reduce) -> dict:
    out = {}
    for stage in STAGE_NAMES:
        vals = [mem.meta["stages"][stage][key] for mem in ens.members.values()
                if stage in mem.meta.get("stages", {}) and mem.meta["stages"][stage][key] is not None]
        vals = [v for v in vals if math.isfinite(v)]
        if vals:
            out[stage] = float(reduce(vals))
    return out


def _links_after(ens: Ensemble, stage: str) -> float | None:
    per = [mem.meta["stages"][stage]["nonzeros"] for mem in ens.members.values() if stage in mem.meta.get("stages", {})]
    if not per or len(per) != len(ens.members):
        return None
    total = sum(mem.weights.arch.total_links for mem in ens.members.values())
    return _pct(sum(per), total)


def measure(ens: Ensemble, X, truths: Sequence, seed: int = 0) -> RunResult:
    """Evaluate ``ens`` on a labelled test set and collect every report metric."""
    ev = evaluate(ens, X, truths)
    n = len(truths)
    correct = sum(p == y for p, y in zip(ev.predictions, truths))
    unclassified = sum(p is UNCLASSIFIED for p in ev.predictions)
    counts = ev.status_counts()
    status_pct = {s.render(ens.m): _pct(counts.get(s, 0), n) for s in LabelStatus}

    col = {c: i for i, c in enumerate(ens.classes)}
    confusion = [[0] * (len(ens.classes) + 1) for _ in ens.classes]
    for p, y in zip(ev.predictions, truths):
        confusion[col[y]][len(ens.classes) if p is UNCLASSIFIED else col[p]] += 1

    P = max((mem.weights.arch.weight_bound for mem in ens.members.values()), default=1)
    hist = {v: 0 for v in range(-P, P + 1)}
    for mem in ens.members.values():
        for v, c in mem.weights.histogram().items():
            hist[v] += c
    total_links = sum(mem.weights.arch.total_links for mem in ens.members.values())
    active = sum(mem.weights.nonzero_count() for mem in ens.members.values())
    train_acc = [mem.meta.get("train_accuracy", 0.0) for mem in ens.members.values()]
    return RunResult(
        seed=seed,
        n_test=n,
        correct_pct=_pct(correct, n),
        wrong_pct=_pct(n - correct - unclassified, n),
        unclassified_pct=_pct(unclassified, n),
        status_pct=status_pct,
        links_mm_pct=_links_after(ens, "MM"),
        links_mw_pct=_links_after(ens, "MW"),
        links_final_pct=_pct(active, total_links),
        active_links=active,
        histogram=hist,
        confusion=confusion,
        runtime_mean_s=_stage_stats(ens, "wall_time_s", statistics.fmean),
        runtime_max_s=_stage_stats(ens, "wall_time_s", max),
        gap_mean=_stage_stats(ens, "mip_gap", statistics.fmean),
        gap_max=_stage_stats(ens, "mip_gap", max),
        train_accuracy_mean=statistics.fmean(train_acc) if train_acc else 0.0,
        n_nets=len(ens.members),
        partial=not ens.complete,
    )


def _summarise(runs: list[RunResult]) -> dict:
    """Mean, min and max of every scalar metric across seeds."""
    keys = ["correct_pct", "wrong_pct", "unclassified_pct", "links_mm_pct", "links_mw_pct",
            "links_final_pct", "active_links", "train_accuracy_mean"]
    out = {}
    for key in keys:
        vals = [getattr(r, key) for r in runs if getattr(r, key) is not None]
        if vals:
            out[key] = {"mean": statistics.fmean(vals), "min": min(vals), "max": max(vals)}
    for status in runs[0].status_pct if runs else ():
        vals = [r.status_pct[status] for r in runs]
        out[f"status {status}"] = {"mean": statistics.fmean(vals), "min": min(vals), "max": max(vals)}
    return out


# experiments ---------------------------------------------------------------------------------


def run_ensemble_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> tuple[ExperimentReport, list[Ensemble]]:
    """Train and evaluate one ensemble per seed; write serialized ensembles to ``out_dir``."""
    bundle = load_data(cfg)
    arch = _architecture(cfg, bundle.train.features.shape[1])
    test_idx = _test_indices(bundle, cfg)
    test_rows = np.concatenate([test_idx[c] for c in cfg.classes]) if test_idx else np.array([], dtype=np.int64)
    X_test = bundle.test.features[test_rows]
    y_test = [int(v) for v in bundle.test.labels[test_rows]]
    exclusion = frozenset() if bundle.fixed_test else frozenset(int(i) for i in test_rows)
    tol = None if cfg.epsilon is None else Tolerances(epsilon=cfg.epsilon)

    runs, ensembles = [], []
    for seed in cfg.seeds:
        # successive seeds never reuse a training image
        drawn, exclusion = sample_per_class(bundle.train, cfg.classes, cfg.images_per_class, seed, exclusion)
        samples = {c: [bundle.train.features[i] for i in drawn[c]] for c in cfg.classes}
        failures = {}
        try:
            ens = build_ensemble(cfg.classes, cfg.m, samples, arch, tol, cfg.budget, cfg.stages,
                                 cfg.backend, cfg.parallel, cfg.serialize)
        except EnsembleBuildError as exc:
            ens = exc.partial
            failures = {",".join(map(str, k)): v for k, v in exc.failed.items()}
        run = measure(ens, X_test, y_test, seed)
        run.failures = failures
        run.train_indices = {str(c): [int(i) for i in drawn[c]] for c in cfg.classes}
        runs.append(run)
        ensembles.append(ens)
        if out_dir is not None:
            path = Path(out_dir)
            path.mkdir(parents=True, exist_ok=True)
            (path / f"ensemble_seed{seed}.json").write_text(ensemble_to_json(ens))
        log.info("seed %s: correct %.2f%% over %d test points", seed, run.correct_pct, run.n_test)

    report = ExperimentReport(
        name=f"{cfg.dataset} classes={','.join(map(str, cfg.classes))} m={cfg.m}",
        config=_config_dict(cfg, arch),
        classes=list(cfg.classes),
        m=cfg.m,
        weight_bound=arch.weight_bound,
        total_links_per_net=subset_architecture(arch, cfg.m).total_links,
        runs=runs,
        summary=_summarise(runs),
        partial=any(r.partial for r in runs),
    )
    return report, ensembles


def run_pair_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentReport:
    """Two classes, one network per seed (a single-member ensemble)."""
    if len(cfg.classes) != 2:
        raise InvalidArgument("a pair experiment needs exactly two classes")
    report, _ = run_ensemble_experiment(cfg, out_dir)
    return report


def _config_dict(cfg: ExperimentConfig, arch: Architecture) -> dict:
    d = asdict(cfg)
    d["arch"] = list(arch.layer_sizes)
    d["classes"] = list(cfg.classes)
    d["seeds"] = list(cfg.seeds)
    return d


# output ----------------------------------------------------------------------------------------


def _fmt(x) -> str:
    return "" if x is None else f"{x:.2f}"


def _round(value):
    if isinstance(value, float):
        return round(value, 2) if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _round(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_round(v) for v in value]
    return value


def emit_report(report: ExperimentReport, fmt: str = "json") -> dict[str, str]:
    """Render the report; returns ``{file name: document}``.

    CSV output is three tables: per-seed outcomes and label statuses, the
    weight-value distribution and the confusion matrix.
    """
    if fmt == "json":
        doc = {
            "name": report.name,
            "partial": report.partial,
            "config": report.config,
            "classes": report.classes,
            "m": report.m,
            "weight_bound": report.weight_bound,
            "total_links_per_net": report.total_links_per_net,
            "histogram": report.histogram,
            "summary": report.summary,
            "runs": [asdict(r) for r in report.runs],
        }
        return {"report.json": json.dumps(_round(doc), indent=2, default=str)}
    if fmt != "csv":
        raise InvalidArgument(f"unknown report format {fmt!r}")

    statuses = [s.render(report.m) for s in LabelStatus]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["seed", "r", "correct", "wrong", "n.l.", *statuses, "links_mm", "links_mw", "active_links"])
    r = report.config.get("images_per_class")
    for run in report.runs:
        w.writerow([run.seed, r, _fmt(run.correct_pct), _fmt(run.wrong_pct), _fmt(run.unclassified_pct),
                    *(_fmt(run.status_pct[s]) for s in statuses),
                    _fmt(run.links_mm_pct), _fmt(run.links_mw_pct), run.active_links])
    runs_doc = out.getvalue()

    P = report.weight_bound
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["seed", f"w=-{P}", "w=0", f"w={P}", "others"])
    for run in report.runs:
        total = sum(run.histogram.values())
        others = sum(n for v, n in run.histogram.items() if 0 < abs(v) < P)
        w.writerow([run.seed, _fmt(_pct(run.histogram[-P], total)), _fmt(_pct(run.histogram[0], total)),
                    _fmt(_pct(run.histogram[P], total)), _fmt(_pct(others, total))])
    weights_doc = out.getvalue()

    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["seed", "truth", *map(str, report.classes), "unclassified"])
    for run in report.runs:
        for cls, row in zip(report.classes, run.confusion):
            w.writerow([run.seed, cls, *row])
    return {"runs.csv": runs_doc, "weights.csv": weights_doc, "confusion.csv": out.getvalue()}
