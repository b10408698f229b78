"""Exact MILP training of few-bit neural networks and one-vs-one voting ensembles."""

from bemi.core import (
    Architecture,
    ClassEncoding,
    LabeledSample,
    WeightAssignment,
    compute_data_bound,
    make_encoding,
)
from bemi.errors import (
    BemiError,
    CapacityError,
    FormatError,
    InvalidArgument,
    SizeError,
    SolverError,
    TrainingFailure,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "ClassEncoding",
    "LabeledSample",
    "WeightAssignment",
    "compute_data_bound",
    "make_encoding",
    "BemiError",
    "CapacityError",
    "FormatError",
    "InvalidArgument",
    "SizeError",
    "SolverError",
    "TrainingFailure",
]
