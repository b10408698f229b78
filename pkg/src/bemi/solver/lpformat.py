"""LP text format writer/reader, start-value documents and solution parsing."""

from __future__ import annotations

import math
import re
from typing import Mapping

from bemi.errors import FormatError, SolverError
from bemi.milp.model import ROLES, MilpModel

TERMS_PER_LINE = 8
_SENSE_TOKENS = {"<=": "<=", "=<": "<=", "<": "<=", ">=": ">=", "=>": ">=", ">": ">=", "=": "="}


def _num(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if float(x).is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(float(x))


def _terms(coeffs: Mapping[str, float]) -> list[str]:
    out = []
    for name, coef in coeffs.items():
        sign = "-" if coef < 0 else "+"
        out.append(f"{sign} {_num(abs(coef))} {name}")
    return out


def _wrap(head: str, terms: list[str], tail: str = "") -> list[str]:
    lines = []
    for start in range(0, max(len(terms), 1), TERMS_PER_LINE):
        chunk = " ".join(terms[start:start + TERMS_PER_LINE])
        lines.append((f" {head} " if start == 0 else "   ") + chunk)
    if tail:
        lines[-1] += f" {tail}"
    return lines


def write_lp(model: MilpModel) -> str:
    """Render ``model`` in LP text format.

    Every variable gets an explicit bound line so the LP default lower bound
    of zero never applies silently.
    """
    names = [v.name for v in model.variables]
    if len(set(names)) != len(names):
        raise SolverError("variable name collision")
    rows = [c.name for c in model.constraints]
    if len(set(rows)) != len(rows):
        raise SolverError("constraint name collision")

    out = [f"\\ {model.name}", "Maximize" if model.sense == "max" else "Minimize"]
    objective = _terms(model.objective)
    if not objective and model.variables:
        objective = [f"+ 0 {model.variables[0].name}"]
    out += _wrap("obj:", objective)
    out.append("Subject To")
    for con in model.constraints:
        terms = _terms(con.coeffs) or [f"+ 0 {model.variables[0].name}"]
        out += _wrap(f"{con.name}:", terms, f"{con.sense} {_num(con.rhs)}")
    out.append("Bounds")
    for v in model.variables:
        if v.kind == "binary":
            continue
        if math.isinf(v.lb) and math.isinf(v.ub):
            out.append(f" {v.name} free")
        elif v.lb == v.ub:
            out.append(f" {v.name} = {_num(v.lb)}")
        else:
            out.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    general = [v.name for v in model.variables if v.kind == "integer"]
    binary = [v.name for v in model.variables if v.kind == "binary"]
    if general:
        out.append("General")
        out += [" " + " ".join(general[i:i + 10]) for i in range(0, len(general), 10)]
    if binary:
        out.append("Binary")
        out += [" " + " ".join(binary[i:i + 10]) for i in range(0, len(binary), 10)]
    out.append("End")
    return "\n".join(out) + "\n"


# reading -----------------------------------------------------------------------

_SECTION = {
    "maximize": "max", "maximum": "max", "max": "max",
    "minimize": "min", "minimum": "min", "min": "min",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "general": "general", "generals": "general", "gen": "general",
    "binary": "binary", "binaries": "binary", "bin": "binary",
    "end": "end",
}
_TOKEN = re.compile(r"[<>=]+|(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?|[+-]|[^\s+\-<>=]+")


def _parse_number(tok: str, where: str) -> float:
    low = tok.lower()
    if low in ("inf", "infinity"):
        return math.inf
    try:
        return float(tok)
    except ValueError:
        raise FormatError(f"{where}: unparseable number {tok!r}") from None


def _parse_linear(tokens: list[str], where: str) -> dict[str, float]:
    coeffs: dict[str, float] = {}
    sign, coef = 1.0, None
    for tok in tokens:
        if tok in "+-":
            sign = -1.0 if tok == "-" else 1.0
            continue
        try:
            coef = float(tok)
            continue
        except ValueError:
            pass
        value = sign * (1.0 if coef is None else coef)
        coeffs[tok] = coeffs.get(tok, 0.0) + value
        sign, coef = 1.0, None
    if coef is not None:
        raise FormatError(f"{where}: dangling coefficient")
    return coeffs


def _role_of(name: str) -> tuple[str, tuple[int, ...]]:
    head, *rest = name.split("_")
    if head in ROLES and all(p.lstrip("-").isdigit() for p in rest):
        return head, tuple(int(p) for p in rest)
    return "x", ()


def read_lp(text: str) -> MilpModel:
    """Parse an LP document (as produced by :func:`write_lp`) back into a model."""
    statements: dict[str, list[str]] = {"obj": [], "st": [], "bounds": [], "general": [], "binary": []}
    section, sense = None, None
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        key = _SECTION.get(line.lower())
        if key in ("max", "min"):
            section, sense = "obj", key
            continue
        if key == "end":
            break
        if key is not None:
            section = key
            continue
        if section is None:
            raise FormatError(f"content before the objective section: {raw!r}")
        statements[section].append(line)
    if sense is None:
        raise FormatError("missing objective sense")

    model = MilpModel(name="lp")
    obj_tokens = " ".join(statements["obj"])
    if ":" in obj_tokens:
        obj_tokens = obj_tokens.split(":", 1)[1]
    objective = _parse_linear(_TOKEN.findall(obj_tokens), "objective")

    # constraints may continue across lines; a new one starts at "name:"
    rows: list[tuple[str, str]] = []
    for line in statements["st"]:
        if re.match(r"^[^\s:]+\s*:", line):
            name, body = line.split(":", 1)
            rows.append((name.strip(), body))
        elif rows:
            rows[-1] = (rows[-1][0], rows[-1][1] + " " + line)
        else:
            raise FormatError(f"unnamed constraint {line!r}")
    parsed_rows = []
    for name, body in rows:
        toks = _TOKEN.findall(body)
        idx = next((n for n, t in enumerate(toks) if t in _SENSE_TOKENS), None)
        if idx is None:
            raise FormatError(f"constraint {name}: no comparison operator")
        coeffs = _parse_linear(toks[:idx], f"constraint {name}")
        rhs_toks = toks[idx + 1:]
        rhs_sign = -1.0 if rhs_toks and rhs_toks[0] == "-" else 1.0
        rhs_toks = [t for t in rhs_toks if t not in "+-"]
        if len(rhs_toks) != 1:
            raise FormatError(f"constraint {name}: bad right-hand side")
        parsed_rows.append((name, coeffs, _SENSE_TOKENS[toks[idx]], rhs_sign * _parse_number(rhs_toks[0], name)))

    binary = {n for line in statements["binary"] for n in line.split()}
    general = {n for line in statements["general"] for n in line.split()}
    bounds: dict[str, list[float]] = {}
    for line in statements["bounds"]:
        toks = _TOKEN.findall(line)
        # glue unary minus onto numbers
        merged = []
        for t in toks:
            if merged and merged[-1] == "-" and (len(merged) == 1 or merged[-2] in _SENSE_TOKENS):
                merged[-1] = "-" + t
            else:
                merged.append(t)
        if len(merged) == 2 and merged[1].lower() == "free":
            bounds[merged[0]] = [-math.inf, math.inf]
        elif len(merged) == 5:
            bounds[merged[2]] = [_parse_number(merged[0], line), _parse_number(merged[4], line)]
        elif len(merged) == 3:
            name, op, val = merged
            lo, hi = bounds.get(name, [0.0, math.inf])
            v = _parse_number(val, line)
            if _SENSE_TOKENS.get(op) == "<=":
                hi = v
            elif _SENSE_TOKENS.get(op) == ">=":
                lo = v
            else:
                lo = hi = v
            bounds[name] = [lo, hi]
        else:
            raise FormatError(f"cannot parse bound {line!r}")

    seen: list[str] = []
    for name in [*objective, *(n for _, c, _, _ in parsed_rows for n in c), *bounds, *sorted(general), *sorted(binary)]:
        if name not in seen:
            seen.append(name)
    order = {n: i for i, n in enumerate(seen)}
    for name in sorted(seen, key=order.get):
        role, index = _role_of(name)
        if name in binary:
            kind, (lo, hi) = "binary", (0, 1)
        else:
            kind = "integer" if name in general else "continuous"
            lo, hi = bounds.get(name, [0.0, math.inf])
        model.add_var(role, index, kind, lo, hi, name=None if role != "x" else name)
    for name, coeffs, sense_, rhs in parsed_rows:
        model.add_constraint(name, coeffs, sense_, rhs)
    model.set_objective(sense, {n: c for n, c in objective.items() if c != 0})
    return model


# start values and solutions ------------------------------------------------------


def write_start(model: MilpModel, values: Mapping[str, float] | None = None) -> str:
    """One ``name value`` pair per line."""
    values = model.warm_start if values is None else values
    if not values:
        return ""
    return "".join(f"{v.name} {_num(values[v.name])}\n" for v in model.variables if v.name in values)


def parse_solution(
    document: str,
    model: MilpModel | None = None,
    missing_is_zero: bool = False,
) -> tuple[dict[str, float], float | None]:
    """Read variable values from a solver solution document.

    Understands HiGHS raw solution files, Gurobi-style ``.sol`` files and
    CBC's indexed column listing. With ``model``, unknown names are an error,
    integral variables are rounded and every variable must be present unless
    ``missing_is_zero``.
    """
    values: dict[str, float] = {}
    objective = None
    lines = document.splitlines()
    if any(line.startswith("# Primal solution values") for line in lines):
        lines = _highs_columns(lines)
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        low = line.lower()
        m = re.search(r"objective(?: value)?\s*[:=]?\s*([-+0-9.eE]+|inf)\s*$", line, re.I)
        if line.startswith("#") or low.startswith(("optimal", "stopped", "infeasible", "objective")):
            if m and "objective" in low:
                objective = _parse_number(m.group(1), f"line {lineno}")
            continue
        toks = line.split()
        if len(toks) >= 3 and toks[0].isdigit():  # CBC: index name value reduced-cost
            name, val = toks[1], toks[2]
        elif len(toks) == 2:
            name, val = toks
        else:
            raise FormatError(f"line {lineno}: unrecognised solution line {raw!r}")
        values[name] = _parse_number(val, f"line {lineno}")

    if model is not None:
        for name in values:
            if not model.has_var(name):
                raise FormatError(f"solution names unknown variable {name!r}")
        missing = [v.name for v in model.variables if v.name not in values]
        if missing and not missing_is_zero:
            raise FormatError(f"solution lacks {len(missing)} variables, e.g. {missing[0]}")
        for name in missing:
            values[name] = 0.0
        values = model.round_integral(values)
    return values, objective


def _highs_columns(lines: list[str]) -> list[str]:
    """Extract objective and column lines from a HiGHS raw solution file."""
    out = []
    start = lines.index("# Primal solution values")
    n_cols = None
    pos = start + 1
    while pos < len(lines):
        line = lines[pos]
        if line.startswith("Objective"):
            out.append("# " + line)
        elif line.startswith("# Columns"):
            n_cols = int(line.split()[2])
            out.extend(lines[pos + 1:pos + 1 + n_cols])
            break
        pos += 1
    if n_cols is None:
        raise FormatError("HiGHS solution file has no column section")
    return out
