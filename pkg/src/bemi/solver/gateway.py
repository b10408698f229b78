"""Solve a :class:`MilpModel` with a configured backend and audit the result.

Backends are named profiles:

``highs``
    in-process HiGHS through ``highspy`` (model passed as arrays).
``highs-lp``
    writes the LP text document and has HiGHS read it back, exercising the
    file path without a subprocess.
``highs-process``
    runs :mod:`bemi.solver.runner` in a child interpreter through the generic
    process contract.
``cbc``
    the COIN-OR CBC executable, if installed.

Any profile name of the form ``process:<template>`` uses ``<template>`` as
the command line, with ``{model_path}``, ``{time_limit}``,
``{solution_path}`` and ``{start_path}`` placeholders.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bemi.errors import InvalidArgument, SolverError
from bemi.milp.model import MilpModel
from bemi.solver.lpformat import parse_solution, write_lp, write_start

log = logging.getLogger(__name__)

STATUSES = ("optimal", "feasible-limit", "infeasible", "no-incumbent", "error")
INT_TOL = 1e-5
AUDIT_TOL = 1e-6
HIGHS_GAP_DEFINITION = "HiGHS mip_gap: |primal_bound - dual_bound| / |primal_bound|"
SOLVER_EXE_ENV = "BEMI_SOLVER_EXE"

_serial_lock = threading.Lock()


@dataclass
class SolveRequest:
    model: MilpModel
    time_limit_s: float
    emphasis: str = "default"
    backend: str = "highs"
    serialize: bool = False
    threads: int | None = None

    def __post_init__(self):
        if not self.time_limit_s > 0:
            raise InvalidArgument(f"time limit must be positive, got {self.time_limit_s}")


@dataclass
class SolveResult:
    status: str
    values: dict[str, float] | None = None
    objective: float | None = None
    mip_gap: float | None = None
    gap_definition: str | None = None
    dual_bound: float | None = None
    wall_time_s: float = 0.0
    backend: str = ""
    message: str = ""
    warm_start_used: bool = False
    audit: list[str] = field(default_factory=list)

    @property
    def has_incumbent(self) -> bool:
        return self.values is not None

    def summary(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "mip_gap": self.mip_gap,
            "gap_definition": self.gap_definition,
            "wall_time_s": round(self.wall_time_s, 3),
            "backend": self.backend,
            "warm_start_used": self.warm_start_used,
            "message": self.message,
        }


def unused_time(req: SolveRequest, result: SolveResult) -> float:
    """Budget left over when a stage finished early; rolls into the next stage."""
    if result.status not in ("optimal", "infeasible"):
        return 0.0
    return max(0.0, req.time_limit_s - result.wall_time_s)


# public entry point ------------------------------------------------------------


def solve(req: SolveRequest) -> SolveResult:
    model = req.model
    if not model.variables:
        return SolveResult("error", message="model has no variables", backend=req.backend)
    if req.serialize:
        with _serial_lock:
            return _solve(req)
    return _solve(req)


def _solve(req: SolveRequest) -> SolveResult:
    start = time.perf_counter()
    try:
        if req.backend == "highs":
            raw = _solve_highs_direct(req)
        elif req.backend == "highs-lp":
            raw = _solve_highs_lp(req)
        else:
            raw = _solve_process(req, resolve_profile(req.backend))
    except SolverError as exc:
        raw = SolveResult("error", message=str(exc))
    raw.backend = req.backend
    result = _finalise(req.model, raw)
    result.wall_time_s = time.perf_counter() - start
    return result


def _finalise(model: MilpModel, raw: SolveResult) -> SolveResult:
    """Round, polish and audit the backend's incumbent; fall back to the warm start."""
    warm_ok = False
    if model.warm_start is not None and len(model.warm_start) == len(model.variables):
        warm_ok = model.is_feasible(model.warm_start, AUDIT_TOL)
    if raw.values is not None:
        values = model.round_integral(raw.values)
        problems = model.violations(values, AUDIT_TOL, INT_TOL)
        if problems and any(not v.is_integral for v in model.variables):
            polished = polish_continuous(model, values)
            if polished is not None:
                values = polished
                problems = model.violations(values, AUDIT_TOL, INT_TOL)
        if problems:
            raw.audit = problems[:20]
            log.warning("backend incumbent failed audit: %s", problems[:3])
            raw.values = None
        else:
            raw.values = values
            raw.objective = model.objective_value(values)
    if raw.values is not None and warm_ok:
        warm_obj = model.objective_value(model.warm_start)
        better = warm_obj > raw.objective if model.sense == "max" else warm_obj < raw.objective
        if better and abs(warm_obj - raw.objective) > AUDIT_TOL:
            raw.values, raw.objective = dict(model.warm_start), warm_obj
            raw.warm_start_used = True
            if raw.status == "optimal":
                raw.status = "feasible-limit"
    if raw.values is None:
        if warm_ok and raw.status != "infeasible":
            raw.values = dict(model.warm_start)
            raw.objective = model.objective_value(raw.values)
            raw.status = "feasible-limit"
            raw.warm_start_used = True
        elif raw.status in ("optimal", "feasible-limit"):
            raw.status = "no-incumbent" if not raw.audit else "error"
    return raw


# HiGHS in-process ----------------------------------------------------------------


def _highs():
    try:
        import highspy
    except ImportError as exc:  # pragma: no cover - dependency is declared
        raise SolverError("highspy is not installed") from exc
    return highspy


def to_highs_lp(model: MilpModel, fixed: dict[str, float] | None = None, relax: bool = False):
    """Column-ordered HiGHS model; ``fixed`` pins the listed columns."""
    highspy = _highs()
    col = {v.name: n for n, v in enumerate(model.variables)}
    lp = highspy.HighsLp()
    lp.num_col_ = len(model.variables)
    lp.num_row_ = len(model.constraints)
    cost = np.zeros(lp.num_col_)
    for name, c in model.objective.items():
        cost[col[name]] = c
    lower = np.array([v.lb for v in model.variables], dtype=float)
    upper = np.array([v.ub for v in model.variables], dtype=float)
    if fixed:
        for name, val in fixed.items():
            lower[col[name]] = upper[col[name]] = val
    lp.col_cost_ = cost
    lp.col_lower_ = lower
    lp.col_upper_ = upper
    inf = highspy.kHighsInf
    row_lo = np.empty(lp.num_row_)
    row_hi = np.empty(lp.num_row_)
    starts, index, value = [0], [], []
    for r, con in enumerate(model.constraints):
        for name, c in con.coeffs.items():
            index.append(col[name])
            value.append(c)
        starts.append(len(index))
        row_lo[r] = con.rhs if con.sense in (">=", "=") else -inf
        row_hi[r] = con.rhs if con.sense in ("<=", "=") else inf
    lp.row_lower_ = row_lo
    lp.row_upper_ = row_hi
    lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
    lp.a_matrix_.start_ = np.array(starts, dtype=np.int32)
    lp.a_matrix_.index_ = np.array(index, dtype=np.int32)
    lp.a_matrix_.value_ = np.array(value, dtype=float)
    lp.a_matrix_.num_col_ = lp.num_col_
    lp.a_matrix_.num_row_ = lp.num_row_
    lp.sense_ = highspy.ObjSense.kMaximize if model.sense == "max" else highspy.ObjSense.kMinimize
    if not relax:
        lp.integrality_ = [
            highspy.HighsVarType.kContinuous if v.kind == "continuous" else highspy.HighsVarType.kInteger
            for v in model.variables
        ]
    lp.col_names_ = [v.name for v in model.variables]
    lp.row_names_ = [c.name for c in model.constraints]
    return lp


def _configure(h, req: SolveRequest) -> None:
    h.setOptionValue("output_flag", False)
    h.setOptionValue("time_limit", float(req.time_limit_s))
    if req.threads:
        h.setOptionValue("threads", int(req.threads))
    if req.emphasis == "feasibility":
        h.setOptionValue("mip_heuristic_effort", 0.3)
    elif req.emphasis not in ("default", "optimality"):
        raise InvalidArgument(f"unknown emphasis {req.emphasis!r}")


def _set_start(h, model: MilpModel) -> None:
    if not model.warm_start:
        return
    highspy = _highs()
    names = [v.name for v in model.variables]
    if len(model.warm_start) == len(names):
        sol = highspy.HighsSolution()
        sol.col_value = [float(model.warm_start[n]) for n in names]
        h.setSolution(sol)
    else:
        idx = np.array([n for n, name in enumerate(names) if name in model.warm_start], dtype=np.int32)
        val = np.array([model.warm_start[names[n]] for n in idx], dtype=float)
        h.setSolution(len(idx), idx, val)


def _collect_highs(h, model: MilpModel) -> SolveResult:
    highspy = _highs()
    ms = h.getModelStatus()
    info = h.getInfo()
    S = highspy.HighsModelStatus
    has_sol = info.primal_solution_status == 2
    values = None
    if has_sol:
        col_value = h.getSolution().col_value
        values = {v.name: float(x) for v, x in zip(model.variables, col_value)}
    if ms == S.kOptimal:
        status = "optimal"
    elif ms == S.kInfeasible:
        status = "infeasible"
    elif ms in (S.kTimeLimit, S.kInterrupt, S.kIterationLimit, S.kSolutionLimit, S.kObjectiveBound,
                S.kObjectiveTarget, S.kMemoryLimit, S.kHighsInterrupt):
        status = "feasible-limit" if has_sol else "no-incumbent"
    else:
        status = "error"
    gap = float(info.mip_gap) if has_sol and np.isfinite(info.mip_gap) else None
    return SolveResult(
        status,
        values=values,
        objective=float(info.objective_function_value) if has_sol else None,
        mip_gap=gap,
        gap_definition=HIGHS_GAP_DEFINITION,
        dual_bound=float(info.mip_dual_bound) if np.isfinite(info.mip_dual_bound) else None,
        message=h.modelStatusToString(ms),
    )


def _solve_highs_direct(req: SolveRequest) -> SolveResult:
    highspy = _highs()
    h = highspy.Highs()
    _configure(h, req)
    status = h.passModel(to_highs_lp(req.model))
    if status == highspy.HighsStatus.kError:
        raise SolverError("HiGHS rejected the model")
    _set_start(h, req.model)
    h.run()
    return _collect_highs(h, req.model)


def _solve_highs_lp(req: SolveRequest) -> SolveResult:
    highspy = _highs()
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "model.lp"
        path.write_text(write_lp(req.model))
        h = highspy.Highs()
        _configure(h, req)
        if h.readModel(str(path)) == highspy.HighsStatus.kError:
            raise SolverError("HiGHS could not read the LP document")
        # column order in the file may differ from the model; map by name
        n = h.getNumCol()
        file_names = [h.getColName(i)[1] for i in range(n)]
        if req.model.warm_start:
            idx = np.array([i for i, name in enumerate(file_names) if name in req.model.warm_start], dtype=np.int32)
            val = np.array([req.model.warm_start[file_names[i]] for i in idx], dtype=float)
            h.setSolution(len(idx), idx, val)
        h.run()
        raw = _collect_highs(h, _NamedColumns(req.model, file_names))
    return raw


class _NamedColumns:
    """Adapter giving :func:`_collect_highs` the file's column order."""

    def __init__(self, model: MilpModel, names: list[str]):
        self.variables = [model.var(n) for n in names]


def polish_continuous(model: MilpModel, values: dict[str, float]) -> dict[str, float] | None:
    """Re-solve the continuous columns as an LP with the integral ones fixed."""
    highspy = _highs()
    fixed = {v.name: float(round(values[v.name])) for v in model.variables if v.is_integral}
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("primal_feasibility_tolerance", 1e-9)
    h.passModel(to_highs_lp(model, fixed=fixed, relax=True))
    h.run()
    if h.getModelStatus() != highspy.HighsModelStatus.kOptimal:
        return None
    col_value = h.getSolution().col_value
    out = {v.name: float(x) for v, x in zip(model.variables, col_value)}
    out.update(fixed)
    return out


# process backends -----------------------------------------------------------------


@dataclass(frozen=True)
class ProcessProfile:
    name: str
    command: str
    solution_format: str = "auto"
    missing_is_zero: bool = False
    gap_definition: str | None = None
    ok_exit_codes: tuple[int, ...] = (0,)


PROFILES = {
    "highs-process": ProcessProfile(
        "highs-process",
        f"{shlex.quote(sys.executable)} -m bemi.solver.runner {{model_path}} {{time_limit}} {{solution_path}} {{start_path}}",
        gap_definition=HIGHS_GAP_DEFINITION,
    ),
    # CBC writes only nonzero columns to its solution file
    "cbc": ProcessProfile(
        "cbc",
        "cbc {model_path} sec {time_limit} solve solu {solution_path}",
        missing_is_zero=True,
    ),
}


def resolve_profile(name: str) -> ProcessProfile:
    if name.startswith("process:"):
        return ProcessProfile(name, name.split(":", 1)[1])
    try:
        profile = PROFILES[name]
    except KeyError:
        raise InvalidArgument(f"unknown backend profile {name!r}") from None
    exe = os.environ.get(SOLVER_EXE_ENV)
    if exe and name != "highs-process":
        head, _, rest = profile.command.partition(" ")
        profile = ProcessProfile(profile.name, f"{shlex.quote(exe)} {rest}", profile.solution_format,
                                 profile.missing_is_zero, profile.gap_definition, profile.ok_exit_codes)
    return profile


def _solve_process(req: SolveRequest, profile: ProcessProfile) -> SolveResult:
    model = req.model
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        model_path, sol_path, start_path = tmp / "model.lp", tmp / "model.sol", tmp / "start.txt"
        model_path.write_text(write_lp(model))
        start_path.write_text(write_start(model) if model.warm_start else "")
        cmd = profile.command.format(
            model_path=shlex.quote(str(model_path)),
            time_limit=f"{req.time_limit_s:g}",
            solution_path=shlex.quote(str(sol_path)),
            start_path=shlex.quote(str(start_path)),
        )
        try:
            proc = subprocess.run(
                shlex.split(cmd), capture_output=True, text=True, timeout=req.time_limit_s + 60
            )
        except FileNotFoundError as exc:
            raise SolverError(f"backend executable not found: {exc}") from exc
        except subprocess.TimeoutExpired:
            return SolveResult("no-incumbent", message="backend process timed out")
        if proc.returncode not in profile.ok_exit_codes:
            return SolveResult("error", message=f"exit code {proc.returncode}: {proc.stderr.strip()[-500:]}")
        info_path = Path(str(sol_path) + ".json")
        info = json.loads(info_path.read_text()) if info_path.exists() else {}
        status = info.get("status")
        if not sol_path.exists() or status in ("infeasible", "no-incumbent", "error"):
            return SolveResult(status or "no-incumbent", message=info.get("message", ""))
        values, objective = parse_solution(sol_path.read_text(), model, profile.missing_is_zero)
    return SolveResult(
        status or "feasible-limit",
        values=values,
        objective=objective,
        mip_gap=info.get("mip_gap"),
        gap_definition=info.get("gap_definition", profile.gap_definition),
        dual_bound=info.get("dual_bound"),
        message=info.get("message", ""),
    )
