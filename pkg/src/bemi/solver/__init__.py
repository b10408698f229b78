from bemi.solver.gateway import (
    PROFILES,
    ProcessProfile,
    SolveRequest,
    SolveResult,
    polish_continuous,
    resolve_profile,
    solve,
    unused_time,
)
from bemi.solver.lpformat import parse_solution, read_lp, write_lp, write_start

__all__ = [
    "PROFILES",
    "ProcessProfile",
    "SolveRequest",
    "SolveResult",
    "polish_continuous",
    "resolve_profile",
    "solve",
    "unused_time",
    "parse_solution",
    "read_lp",
    "write_lp",
    "write_start",
]
