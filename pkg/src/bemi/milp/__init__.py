from bemi.milp.model import Constraint, MilpModel, Variable, var_name
from bemi.milp.builder import (
    Tolerances,
    build_mm,
    build_mw,
    build_sm,
    derive_values,
    linearize_bilinear,
    linearize_indicator,
)

__all__ = [
    "Constraint",
    "MilpModel",
    "Variable",
    "var_name",
    "Tolerances",
    "build_mm",
    "build_mw",
    "build_sm",
    "derive_values",
    "linearize_bilinear",
    "linearize_indicator",
]
