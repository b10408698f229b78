"""One-versus-one (and m-subset) ensembles: training, majority voting and label statuses."""

from __future__ import annotations

import enum
import hashlib
import itertools
import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from bemi.core import (
    UNCLASSIFIED,
    Architecture,
    ClassEncoding,
    LabeledSample,
    WeightAssignment,
    bit_width,
    make_encoding,
)
from bemi.errors import EnsembleBuildError, FormatError, InvalidArgument, TrainingFailure
from bemi.inference import predict_bits
from bemi.milp.builder import Tolerances
from bemi.trainer import StageBudget, TrainedNet, train

log = logging.getLogger(__name__)

FORMAT_NAME = "bemi-ensemble"
FORMAT_VERSION = 1


class LabelStatus(enum.Enum):
    """Outcome category of one ensemble prediction."""

    ONE_CORRECT = "1C"
    ONE_WRONG = "1I"
    TIE_CORRECT = "mC"
    TIE_WRONG_TRUTH_DOMINANT = "mI'"
    TIE_WRONG_TRUTH_OUTSIDE = "mI''"
    OTHER_TRUTH_DOMINANT = "oI'"
    OTHER_TRUTH_OUTSIDE = "oI''"

    def render(self, m: int = 2) -> str:
        return self.value.replace("m", str(m), 1) if self.value.startswith("m") else self.value

    @property
    def is_correct(self) -> bool:
        return self in (LabelStatus.ONE_CORRECT, LabelStatus.TIE_CORRECT)


@dataclass
class Member:
    """One subset network: its classes, encoding, weights and training metadata."""

    subset: tuple
    encoding: ClassEncoding
    weights: WeightAssignment
    meta: dict = field(default_factory=dict)
    net: TrainedNet | None = field(default=None, repr=False, compare=False)

    def predict(self, X) -> list:
        return [self.encoding.decode(row) for row in predict_bits(self.weights, X)]


@dataclass
class Ensemble:
    classes: tuple
    m: int
    members: dict[tuple, Member]

    def __post_init__(self):
        if self.m < 2 or self.m > len(self.classes):
            raise InvalidArgument(f"subset size m={self.m} must lie in [2, {len(self.classes)}]")

    @property
    def expected_size(self) -> int:
        return math.comb(len(self.classes), self.m)

    @property
    def complete(self) -> bool:
        return len(self.members) == self.expected_size

    def subsets(self) -> list[tuple]:
        return list(itertools.combinations(self.classes, self.m))

    @property
    def total_parameters(self) -> int:
        return sum(mem.weights.arch.total_links for mem in self.members.values())


@dataclass(frozen=True)
class VoteTally:
    """Member labels for one input, the per-class vote sets and the dominant classes."""

    votes: Mapping[tuple, object]
    counts: Mapping[object, tuple]
    dominant: tuple

    def size(self, cls) -> int:
        return len(self.counts.get(cls, ()))


def subset_architecture(arch: Architecture, m: int) -> Architecture:
    """``arch`` with its output layer resized to the bit width an ``m``-class encoding needs."""
    width = bit_width(m)
    if arch.n_outputs == width:
        return arch
    return Architecture(arch.layer_sizes[:-1] + (width,), arch.weight_bound)


def subset_samples(
    subset: Sequence, encoding: ClassEncoding, samples: Mapping[object, Sequence[np.ndarray]]
) -> list[LabeledSample]:
    return [LabeledSample(x, encoding.encode(cls), cls) for cls in subset for x in samples[cls]]


def member_meta(net: TrainedNet) -> dict:
    meta = {
        "stage_reached": net.stage_reached,
        "train_accuracy": net.train_accuracy,
        "t_hat_size": len(net.t_hat),
        "stages": {},
    }
    for rec in net.stages:
        meta["stages"][rec.stage] = {
            "status": rec.status,
            "objective": rec.objective,
            "mip_gap": rec.mip_gap,
            "gap_definition": rec.gap_definition,
            "time_limit_s": rec.time_limit_s,
            "wall_time_s": rec.wall_time_s,
            "nonzeros": rec.nonzeros,
        }
    return meta


def build_ensemble(
    classes: Sequence,
    m: int,
    samples: Mapping[object, Sequence[np.ndarray]],
    arch: Architecture,
    tol: Tolerances | None = None,
    budget: StageBudget = StageBudget(),
    stages: str = "sm+mm+mw",
    backend: str = "highs",
    parallel: int | None = None,
    serialize: bool = False,
) -> Ensemble:
    """Train one network per ``m``-subset of ``classes`` on that subset's samples only.

    The output layer of ``arch`` is resized to the subset's bit width. When
    some members fail, :class:`EnsembleBuildError` carries the failures and
    the partial ensemble.
    """
    classes = tuple(sorted(set(classes)))
    if m < 2:
        raise InvalidArgument("subset size m must be at least 2")
    if m > len(classes):
        raise InvalidArgument(f"subset size m={m} exceeds the {len(classes)} classes")
    for cls in classes:
        if not len(samples.get(cls, ())):
            raise InvalidArgument(f"no training samples for class {cls!r}")
    sub_arch = subset_architecture(arch, m)
    subsets = list(itertools.combinations(classes, m))
    workers = parallel or os.cpu_count() or 1

    def job(subset):
        enc = make_encoding(subset)
        data = subset_samples(subset, enc, samples)
        threads = 1 if workers > 1 else None
        net = train(sub_arch, data, tol, budget, stages, backend, threads=threads,
                    serialize=serialize, encoding=enc)
        return Member(subset, enc, net.weights, member_meta(net), net)

    members: dict[tuple, Member] = {}
    failed: dict[tuple, str] = {}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {subset: pool.submit(job, subset) for subset in subsets}
        for subset in subsets:  # fold in subset order, whatever the completion order
            try:
                members[subset] = futures[subset].result()
            except TrainingFailure as exc:
                log.error("member %s failed: %s", subset, exc)
                failed[subset] = str(exc)
    ens = Ensemble(classes, m, members)
    if failed:
        raise EnsembleBuildError(failed, ens)
    return ens


# voting ---------------------------------------------------------------------------------


def _tally_from_votes(votes: Mapping[tuple, object], classes: Sequence) -> VoteTally:
    counts: dict = {}
    for subset, label in votes.items():
        if label is UNCLASSIFIED:
            continue
        counts.setdefault(label, []).append(subset)
    counts = {cls: tuple(counts[cls]) for cls in classes if cls in counts}
    if counts:
        top = max(len(v) for v in counts.values())
        dominant = tuple(cls for cls in classes if len(counts.get(cls, ())) == top)
    else:
        dominant = ()
    return VoteTally(dict(votes), counts, dominant)


def tally_votes(votes: Mapping[tuple, object], ens_or_classes) -> VoteTally:
    """Tally precomputed member labels (``subset -> label`` or ``UNCLASSIFIED``)."""
    classes = ens_or_classes.classes if isinstance(ens_or_classes, Ensemble) else tuple(ens_or_classes)
    return _tally_from_votes(votes, classes)


def tally(x, ens: Ensemble) -> VoteTally:
    return tally_batch(np.asarray(x)[None, :], ens)[0]


def tally_batch(X, ens: Ensemble) -> list[VoteTally]:
    """Tallies for every row of ``X``; each member is evaluated once on the whole batch."""
    X = np.asarray(X)
    labels = {subset: mem.predict(X) for subset, mem in ens.members.items()}
    return [
        _tally_from_votes({subset: labels[subset][row] for subset in ens.members}, ens.classes)
        for row in range(len(X))
    ]


def resolve(t: VoteTally, m: int):
    """Prediction for one tally: the unique dominant class, the tie-breaking member's label, or unclassified."""
    if len(t.dominant) == 1:
        return t.dominant[0]
    if len(t.dominant) == m:
        return t.votes.get(tuple(t.dominant), UNCLASSIFIED)
    return UNCLASSIFIED


def status(prediction, t: VoteTally, truth, m: int) -> LabelStatus:
    n_dom = len(t.dominant)
    if n_dom == 1:
        return LabelStatus.ONE_CORRECT if t.dominant[0] == truth else LabelStatus.ONE_WRONG
    if n_dom == m:
        if prediction == truth:
            return LabelStatus.TIE_CORRECT
        if truth in t.dominant:
            return LabelStatus.TIE_WRONG_TRUTH_DOMINANT
        return LabelStatus.TIE_WRONG_TRUTH_OUTSIDE
    if truth in t.dominant:
        return LabelStatus.OTHER_TRUTH_DOMINANT
    return LabelStatus.OTHER_TRUTH_OUTSIDE


@dataclass
class Evaluation:
    predictions: list
    statuses: list[LabelStatus]
    tallies: list[VoteTally] = field(repr=False)

    def status_counts(self) -> Counter:
        return Counter(self.statuses)

    @property
    def accuracy(self) -> float:
        if not self.statuses:
            return 0.0
        return sum(s.is_correct for s in self.statuses) / len(self.statuses)


def evaluate(ens: Ensemble, X, truths: Sequence) -> Evaluation:
    X = np.asarray(X)
    if len(X) != len(truths):
        raise InvalidArgument("inputs and truths differ in length")
    tallies = tally_batch(X, ens) if len(X) else []
    preds = [resolve(t, ens.m) for t in tallies]
    stats = [status(p, t, y, ens.m) for p, t, y in zip(preds, tallies, truths)]
    return Evaluation(preds, stats, tallies)


# serialization ---------------------------------------------------------------------------


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None  # JSON has no infinities; an unbounded gap is recorded as null
    return value


def _canonical(body: dict) -> bytes:
    return json.dumps(body, separators=(",", ":"), ensure_ascii=True, allow_nan=False).encode()


def ensemble_to_json(ens: Ensemble) -> str:
    """Versioned JSON record; the digest covers the canonical encoding of every other field."""
    members = []
    for subset in ens.subsets():
        if subset not in ens.members:
            continue
        mem = ens.members[subset]
        arch = mem.weights.arch
        members.append({
            "subset": _plain(list(subset)),
            "patterns": [list(p) for p in mem.encoding.patterns],
            "layer_sizes": list(arch.layer_sizes),
            "weight_bound": arch.weight_bound,
            "weights": [layer.tolist() for layer in mem.weights.layers],
            "meta": _plain(mem.meta),
        })
    body = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "classes": _plain(list(ens.classes)),
        "m": ens.m,
        "members": members,
    }
    digest = hashlib.sha256(_canonical(body)).hexdigest()
    return json.dumps({**body, "digest": digest}, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def ensemble_from_json(text: str) -> Ensemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"ensemble document is not JSON: {exc}") from None
    if doc.get("format") != FORMAT_NAME:
        raise FormatError(f"not an ensemble document (format={doc.get('format')!r})")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported ensemble version {doc.get('version')!r}")
    digest = doc.pop("digest", None)
    if digest != hashlib.sha256(_canonical(doc)).hexdigest():
        raise FormatError("ensemble digest mismatch")
    classes = tuple(doc["classes"])
    members = {}
    for rec in doc["members"]:
        subset = tuple(rec["subset"])
        arch = Architecture(tuple(rec["layer_sizes"]), rec["weight_bound"])
        layers = tuple(np.array(w, dtype=np.int64).reshape(arch.layer_shape(l)) for l, w in enumerate(rec["weights"], 1))
        enc = ClassEncoding(subset, tuple(tuple(p) for p in rec["patterns"]))
        members[subset] = Member(subset, enc, WeightAssignment(arch, layers), rec["meta"])
    return Ensemble(classes, doc["m"], members)
