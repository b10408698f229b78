"""Lexicographic SM -> MM -> MW training of one network, plus a brute-force oracle."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from bemi.core import Architecture, ClassEncoding, LabeledSample, WeightAssignment, compute_data_bound
from bemi.errors import InvalidArgument, SizeError, TrainingFailure
from bemi.inference import predict_bits
from bemi.milp.builder import (
    Tolerances,
    build_mm,
    build_mw,
    build_sm,
    implied_margins,
    margin_upper,
    weights_from_values,
)
from bemi.milp.model import var_name
from bemi.solver import SolveRequest, SolveResult, solve, unused_time

log = logging.getLogger(__name__)

STAGE_SETS = {
    "sm": ("SM",),
    "sm+mm": ("SM", "MM"),
    "sm+mw": ("SM", "MW"),
    "sm+mm+mw": ("SM", "MM", "MW"),
}
ENUMERATION_LIMIT = 10**7


@dataclass(frozen=True)
class StageBudget:
    sm_s: float = 60.0
    mm_s: float = 60.0
    mw_s: float = 20.0
    rollover: bool = True

    def __post_init__(self):
        if min(self.sm_s, self.mm_s, self.mw_s) <= 0:
            raise InvalidArgument("stage time limits must be positive")

    @classmethod
    def parse(cls, text: str, rollover: bool = True) -> "StageBudget":
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 3:
            raise InvalidArgument(f"budget needs three comma-separated values, got {text!r}")
        return cls(*parts, rollover=rollover)


@dataclass
class StageRecord:
    stage: str
    status: str
    objective: float | None
    mip_gap: float | None
    gap_definition: str | None
    time_limit_s: float
    wall_time_s: float
    nonzeros: int
    warm_start_used: bool = False

    @classmethod
    def from_result(cls, stage: str, req: SolveRequest, res: SolveResult, nonzeros: int) -> "StageRecord":
        return cls(stage, res.status, res.objective, res.mip_gap, res.gap_definition,
                   req.time_limit_s, res.wall_time_s, nonzeros, res.warm_start_used)


@dataclass
class TrainedNet:
    arch: Architecture
    weights: WeightAssignment
    margins: dict[tuple[int, int], float]
    t_hat: list[int]
    stages: list[StageRecord]
    stage_reached: str
    train_accuracy: float
    encoding: ClassEncoding | None = None
    checks: dict[str, bool] = field(default_factory=dict)
    incumbents: dict[str, dict[str, float]] = field(default_factory=dict, repr=False)

    def stage(self, name: str) -> StageRecord | None:
        return next((s for s in self.stages if s.stage == name), None)

    def nonzeros_after(self, name: str) -> int | None:
        rec = self.stage(name)
        return None if rec is None else rec.nonzeros


def compute_t_hat(values: Mapping[str, float], sample_ids: Sequence[int], n_outputs: int) -> list[int]:
    """Samples whose every output bit is confidently correct (all ``q = 1``)."""
    return [
        k for k in sample_ids
        if all(round(values[var_name("q", (k, j))]) == 1 for j in range(n_outputs))
    ]


def _restrict(values: Mapping[str, float], keep: set[int]) -> dict[str, float]:
    """Drop per-sample variables of samples outside ``keep``."""
    out = {}
    for name, val in values.items():
        role, *idx = name.split("_")
        if role in ("u", "c", "q", "yhat") and int(idx[0]) not in keep:
            continue
        if role in ("q", "yhat"):
            continue
        out[name] = val
    return out


def train(
    arch: Architecture,
    data: Sequence[LabeledSample],
    tol: Tolerances | None = None,
    budget: StageBudget = StageBudget(),
    stages: str = "sm+mm+mw",
    backend: str = "highs",
    threads: int | None = None,
    serialize: bool = False,
    keep_incumbents: bool = False,
    encoding: ClassEncoding | None = None,
) -> TrainedNet:
    """Train one network with the lexicographic stage sequence ``stages``.

    Unused time of a stage that finishes early rolls into the next stage when
    ``budget.rollover`` is set. If SM classifies no sample confidently, the
    later stages are skipped and the SM weights are returned.
    """
    if not data:
        raise InvalidArgument("training data is empty")
    try:
        plan = STAGE_SETS[stages.lower()]
    except KeyError:
        raise InvalidArgument(f"unknown stage set {stages!r}; pick one of {sorted(STAGE_SETS)}") from None
    tol = tol or Tolerances.for_data(data)
    ids = list(range(len(data)))
    records: list[StageRecord] = []
    incumbents: dict[str, dict[str, float]] = {}
    checks: dict[str, bool] = {}

    def run(model, limit):
        req = SolveRequest(model, limit, backend=backend, threads=threads, serialize=serialize)
        res = solve(req)
        return req, res

    # SM
    sm_model = build_sm(arch, data, tol)
    req, res = run(sm_model, budget.sm_s)
    if not res.has_incumbent:
        raise TrainingFailure(f"SM produced no incumbent ({res.status}: {res.message})")
    W = weights_from_values(arch, res.values)
    records.append(StageRecord.from_result("SM", req, res, W.nonzero_count()))
    carry = unused_time(req, res) if budget.rollover else 0.0
    prev_values = res.values
    incumbents["SM"] = res.values
    t_hat = compute_t_hat(res.values, ids, arch.n_outputs)
    margins: dict[tuple[int, int], float] = {}
    reached = ["SM"]
    t_data = [data[k] for k in t_hat]

    if t_hat and len(plan) > 1:
        restricted = _restrict(prev_values, set(t_hat))
        at_eps = {var_name("m", (l, j)): tol.epsilon for l in range(1, arch.depth + 1) for j in range(arch.width(l))}
        probe = build_mm(arch, t_data, tol, sample_ids=t_hat)
        checks["sm_warm_start_mm_feasible"] = probe.is_feasible({**restricted, **at_eps})

        if "MM" in plan:
            warm = dict(restricted)
            b = compute_data_bound(t_data)
            for (l, j), m in implied_margins(W, t_data).items():
                warm[var_name("m", (l, j))] = min(max(m, tol.epsilon), margin_upper(arch, l, b))
            mm_model = build_mm(arch, t_data, tol, warm=warm, sample_ids=t_hat)
            req, res = run(mm_model, budget.mm_s + carry)
            if res.has_incumbent:
                W = weights_from_values(arch, res.values)
                records.append(StageRecord.from_result("MM", req, res, W.nonzero_count()))
                carry = unused_time(req, res) if budget.rollover else 0.0
                implied = implied_margins(W, t_data)
                margins = {
                    (l, j): max(tol.epsilon, min(res.values[var_name("m", (l, j))], implied[(l, j)]))
                    for (l, j) in implied
                }
                prev_values = _restrict(res.values, set(t_hat))
                incumbents["MM"] = res.values
                reached.append("MM")
            else:
                log.warning("MM produced no incumbent (%s); keeping SM weights", res.status)
                records.append(StageRecord.from_result("MM", req, res, W.nonzero_count()))
        if not margins:
            margins = {(l, j): tol.epsilon for l in range(1, arch.depth + 1) for j in range(arch.width(l))}

        if "MW" in plan:
            mw_model = build_mw(arch, t_data, margins, tol, warm=prev_values, sample_ids=t_hat)
            checks["mw_warm_start_feasible"] = mw_model.is_feasible(mw_model.warm_start)
            before = W.nonzero_count()
            req, res = run(mw_model, budget.mw_s + carry)
            if res.has_incumbent:
                W = weights_from_values(arch, res.values)
                incumbents["MW"] = res.values
                reached.append("MW")
            records.append(StageRecord.from_result("MW", req, res, W.nonzero_count()))
            checks["pruning_monotone"] = W.nonzero_count() <= before

        final = implied_margins(W, t_data)
        checks["margins_preserved"] = all(final[key] >= m - 1e-6 for key, m in margins.items())

    X = np.stack([s.features for s in data])
    Y = np.array([s.target for s in data])
    train_acc = float(np.mean(np.all(predict_bits(W, X) == Y, axis=1)))
    return TrainedNet(
        arch=arch,
        weights=W,
        margins=margins,
        t_hat=t_hat,
        stages=records,
        stage_reached="+".join(reached),
        train_accuracy=train_acc,
        encoding=encoding,
        checks=checks,
        incumbents=incumbents if keep_incumbents else {},
    )


# brute-force oracle -------------------------------------------------------------------


def _enumerate(arch: Architecture, chunk: int = 50_000):
    P = arch.weight_bound
    values = range(-P, P + 1)
    it = itertools.product(values, repeat=arch.total_links)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.int64)


def _batched_pres(arch: Architecture, flat: np.ndarray, X: np.ndarray) -> list[np.ndarray]:
    """Pre-activations for many weight vectors at once: list of ``(C, t, n_l)`` arrays."""
    pos = 0
    z = np.broadcast_to(X, (len(flat),) + X.shape)
    pres = []
    for l in range(1, arch.depth + 1):
        n_in, n_out = arch.layer_shape(l)
        mats = flat[:, pos:pos + n_in * n_out].reshape(-1, n_in, n_out)
        pos += n_in * n_out
        pre = np.matmul(z, mats)
        pres.append(pre)
        z = np.where(pre >= 0, 1, -1)
    return pres


def brute_force_train(
    arch: Architecture,
    data: Sequence[LabeledSample],
    tol: Tolerances = Tolerances(),
    objective: str = "SM-count",
    margins: Mapping[tuple[int, int], float] | None = None,
) -> tuple[float | None, WeightAssignment | None]:
    """Exact stage optimum by enumerating every weight assignment.

    ``objective`` is ``SM-count`` (confidently correct bits, max),
    ``MM-margin-sum`` (sum of implied margins, max) or ``MW-nonzeros``
    (nonzero links subject to ``margins``, min). Returns ``(None, None)``
    when no assignment is feasible.
    """
    count = (2 * arch.weight_bound + 1) ** arch.total_links
    if count > ENUMERATION_LIMIT:
        raise SizeError(f"{count} assignments exceed the enumeration limit of {ENUMERATION_LIMIT}")
    if objective not in ("SM-count", "MM-margin-sum", "MW-nonzeros"):
        raise InvalidArgument(f"unknown objective {objective!r}")
    if objective == "MW-nonzeros" and margins is None:
        raise InvalidArgument("MW-nonzeros needs fixed margins")
    if not data:
        raise InvalidArgument("training data is empty")
    for s in data:
        s.check(arch)
    X = np.stack([s.features for s in data])
    X = X if np.issubdtype(X.dtype, np.integer) else X.astype(np.float64)
    Y = np.array([s.target for s in data])
    eps = tol.epsilon
    L = arch.depth
    P = arch.weight_bound
    denom = P * (arch.layer_sizes[-2] + 1)
    b = np.abs(X).max(initial=0)

    best_val, best_flat = None, None
    maximise = objective != "MW-nonzeros"
    for flat in _enumerate(arch):
        pres = _batched_pres(arch, flat, X)
        ok = np.ones(len(flat), dtype=bool)
        score = np.zeros(len(flat))
        for l, pre in enumerate(pres[:-1], start=1):
            if objective == "SM-count":
                if tol.strict_hidden:
                    bad = np.abs(pre) < eps
                else:
                    bad = (pre < 0) & (pre > -eps)
                ok &= ~bad.any(axis=(1, 2))
            else:
                mins = np.abs(pre).min(axis=1)  # (C, n_l)
                if objective == "MM-margin-sum":
                    ok &= (mins >= eps).all(axis=1)
                    score += np.minimum(mins, margin_upper(arch, l, b)).sum(axis=1)
                else:
                    need = np.array([margins[(l, j)] for j in range(arch.width(l))])
                    ok &= (mins >= need - 1e-9).all(axis=1)
        signed = pres[-1] * Y[None]  # (C, t, n_L)
        if objective == "SM-count":
            confident = 4 * signed >= denom
            ambiguous = (4 * signed > denom - eps) & ~confident
            ok &= ~ambiguous.any(axis=(1, 2))
            score = confident.sum(axis=(1, 2)).astype(float)
        else:
            mins = signed.min(axis=1)
            if objective == "MM-margin-sum":
                ok &= (mins >= eps).all(axis=1)
                score += np.minimum(mins, margin_upper(arch, L, b)).sum(axis=1)
            else:
                need = np.array([margins[(L, j)] for j in range(arch.n_outputs)])
                ok &= (mins >= need - 1e-9).all(axis=1)
                score = np.count_nonzero(flat, axis=1).astype(float)
        if not ok.any():
            continue
        cand = np.where(ok, score, -np.inf if maximise else np.inf)
        idx = int(np.argmax(cand) if maximise else np.argmin(cand))
        val = float(cand[idx])
        if best_val is None or (val > best_val if maximise else val < best_val):
            best_val, best_flat = val, flat[idx].copy()
    if best_val is None:
        return None, None
    return best_val, WeightAssignment.from_flat(arch, best_flat)
