"""Command-line entry point: ``bemi`` runs one ensemble or pair experiment and writes reports."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from bemi.errors import BemiError
from bemi.experiment import ExperimentConfig, emit_report, run_ensemble_experiment
from bemi.trainer import STAGE_SETS, StageBudget

EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def _ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _classes(text: str) -> tuple[int, ...]:
    text = text.strip()
    if "-" in text and "," not in text:
        lo, hi = (int(p) for p in text.split("-"))
        return tuple(range(lo, hi + 1))
    return _ints(text)


def _budget(text: str) -> StageBudget:
    try:
        return StageBudget.parse(text)
    except (ValueError, BemiError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bemi", description="Train and evaluate few-shot integer/binarized network ensembles by MILP.")
    p.add_argument("--dataset", choices=["mnist", "fashion", "heart", "synthetic"], default="synthetic")
    p.add_argument("--data-dir", help="IDX directory (mnist, fashion) or CSV file (heart)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--classes", type=_classes, help="class ids, e.g. 0,1,2 or 0-9")
    group.add_argument("--pair", type=_ints, help="two class ids, e.g. 1,8")
    p.add_argument("--m", type=int, default=2, help="classes per member net")
    p.add_argument("--arch", type=_ints, help="layer widths n0,n1,...,nL (default: n0,4,4,1)")
    p.add_argument("--p-bound", type=int, default=1, help="weights range over -P..P")
    p.add_argument("--images-per-class", type=int, default=10)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--budget", type=_budget, default=StageBudget(), help="SM,MM,MW time limits in seconds")
    p.add_argument("--no-rollover", action="store_true", help="do not pass unused stage time on")
    p.add_argument("--stages", choices=sorted(STAGE_SETS), default="sm+mm+mw")
    p.add_argument("--seeds", type=_ints, default=(0,))
    p.add_argument("--epsilon", type=float, help="margin tolerance (default: 0.1 for integer data, 1e-6 otherwise)")
    p.add_argument("--downsample", type=int, default=1, help="block-mean pooling factor for image data")
    p.add_argument("--backend", default=os.environ.get("BEMI_BACKEND", "highs"),
                   help="highs, highs-lp, highs-process, cbc or process:<command template>")
    p.add_argument("--parallel", type=int, default=os.cpu_count() or 1, help="concurrent member trainings")
    p.add_argument("--serialize", action="store_true", help="one solver process at a time")
    p.add_argument("--out", default="bemi-out", help="output directory")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.pair is not None:
        if len(args.pair) != 2:
            raise BemiError("--pair needs exactly two classes")
        classes = args.pair
    else:
        classes = args.classes or (0, 1)
    budget = args.budget
    if args.no_rollover:
        budget = StageBudget(budget.sm_s, budget.mm_s, budget.mw_s, rollover=False)
    return ExperimentConfig(
        dataset=args.dataset,
        data_dir=args.data_dir,
        classes=classes,
        m=args.m,
        arch=args.arch,
        p_bound=args.p_bound,
        images_per_class=args.images_per_class,
        test_per_class=args.test_per_class,
        budget=budget,
        stages=args.stages,
        seeds=args.seeds,
        epsilon=args.epsilon,
        downsample=args.downsample,
        backend=args.backend,
        parallel=args.parallel,
        serialize=args.serialize,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        out = Path(args.out)
        report, _ = run_ensemble_experiment(cfg, out)
        for name, doc in emit_report(report, args.format).items():
            (out / name).write_text(doc)
    except (BemiError, OSError) as exc:
        print(f"bemi: error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    s = report.summary.get("correct_pct")
    if s:
        print(f"{report.name}: correct {s['mean']:.2f}% (min {s['min']:.2f}, max {s['max']:.2f}) over {len(report.runs)} seed(s); reports in {out}")
    if report.partial:
        failed = {k for run in report.runs for k in run.failures}
        print(f"bemi: {len(failed)} member net(s) failed: {sorted(failed)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
