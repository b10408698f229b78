"""Solver-agnostic linear model: variables, linear constraints, objective, warm start."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from bemi.core import var_name  # noqa: F401  (re-exported)
from bemi.errors import InvalidArgument

ROLES = ("w", "u", "c", "q", "yhat", "m", "v", "x")
KINDS = ("binary", "integer", "continuous")
SENSES = ("<=", "=", ">=")


@dataclass(frozen=True)
class Variable:
    name: str
    role: str
    index: tuple[int, ...]
    kind: str
    lb: float
    ub: float

    @property
    def is_integral(self) -> bool:
        return self.kind != "continuous"


@dataclass(frozen=True)
class Constraint:
    name: str
    coeffs: Mapping[str, float]
    sense: str
    rhs: float

    def activity(self, values: Mapping[str, float]) -> float:
        return math.fsum(coef * values[name] for name, coef in self.coeffs.items())

    def violation(self, values: Mapping[str, float]) -> float:
        lhs = self.activity(values)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass
class MilpModel:
    """A mixed-integer linear program with named, role-tagged variables."""

    name: str = "model"
    sense: str = "max"
    variables: list[Variable] = field(default_factory=list)
    constraints: list[Constraint] = field(default_factory=list)
    objective: dict[str, float] = field(default_factory=dict)
    warm_start: dict[str, float] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._by_name = {v.name: v for v in self.variables}
        self._row_names = {c.name for c in self.constraints}

    # construction ----------------------------------------------------------

    def add_var(
        self, role: str, index: tuple[int, ...], kind: str, lb: float, ub: float, name: str | None = None
    ) -> str:
        if role not in ROLES:
            raise InvalidArgument(f"unknown variable role {role!r}")
        if kind not in KINDS:
            raise InvalidArgument(f"unknown variable kind {kind!r}")
        if kind == "binary":
            lb, ub = 0, 1
        if lb > ub:
            raise InvalidArgument(f"empty domain [{lb}, {ub}] for {role}{index}")
        name = name or var_name(role, index)
        if name in self._by_name:
            raise InvalidArgument(f"duplicate variable {name}")
        v = Variable(name, role, tuple(index), kind, lb, ub)
        self.variables.append(v)
        self._by_name[name] = v
        return name

    def add_constraint(self, name: str, coeffs: Mapping[str, float], sense: str, rhs: float) -> Constraint:
        if sense not in SENSES:
            raise InvalidArgument(f"unknown constraint sense {sense!r}")
        if name in self._row_names:
            raise InvalidArgument(f"duplicate constraint {name}")
        unknown = [n for n in coeffs if n not in self._by_name]
        if unknown:
            raise InvalidArgument(f"constraint {name} references undeclared variables {unknown[:3]}")
        con = Constraint(name, {n: float(c) for n, c in coeffs.items() if c != 0}, sense, float(rhs))
        self.constraints.append(con)
        self._row_names.add(name)
        return con

    def set_objective(self, sense: str, coeffs: Mapping[str, float]) -> None:
        if sense not in ("max", "min"):
            raise InvalidArgument(f"objective sense must be max or min, got {sense!r}")
        unknown = [n for n in coeffs if n not in self._by_name]
        if unknown:
            raise InvalidArgument(f"objective references undeclared variables {unknown[:3]}")
        self.sense = sense
        self.objective = {n: float(c) for n, c in coeffs.items()}

    # queries ---------------------------------------------------------------

    def var(self, name: str) -> Variable:
        return self._by_name[name]

    def has_var(self, name: str) -> bool:
        return name in self._by_name

    def vars_with_role(self, role: str) -> list[Variable]:
        return [v for v in self.variables if v.role == role]

    def role_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for v in self.variables:
            counts[v.role] = counts.get(v.role, 0) + 1
        return counts

    def objective_value(self, values: Mapping[str, float]) -> float:
        return math.fsum(c * values[n] for n, c in self.objective.items())

    def violations(self, values: Mapping[str, float], tol: float = 1e-6, int_tol: float = 1e-5) -> list[str]:
        """Describe every bound, integrality and row violated by ``values``."""
        problems = []
        for v in self.variables:
            if v.name not in values:
                problems.append(f"{v.name}: missing value")
                continue
            x = values[v.name]
            if x < v.lb - tol or x > v.ub + tol:
                problems.append(f"{v.name}={x} outside [{v.lb}, {v.ub}]")
            if v.is_integral and abs(x - round(x)) > int_tol:
                problems.append(f"{v.name}={x} not integral")
        if problems:
            return problems
        for con in self.constraints:
            gap = con.violation(values)
            if gap > tol:
                problems.append(f"{con.name}: violated by {gap:.3g}")
        return problems

    def is_feasible(self, values: Mapping[str, float], tol: float = 1e-6) -> bool:
        return not self.violations(values, tol)

    def round_integral(self, values: Mapping[str, float]) -> dict[str, float]:
        out = dict(values)
        for v in self.variables:
            if v.is_integral and v.name in out:
                out[v.name] = float(round(out[v.name]))
        return out
