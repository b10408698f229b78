"""Builders for the three training stages.

* Sat-Margin (SM): maximise the number of confidently correct output bits.
* Max-Margin (MM): on the confidently correct samples, maximise the sum of
  per-neuron activation margins.
* Min-Weight (MW): with margins fixed, minimise the number of nonzero links.

Indicator and bilinear relations are linearised with big-M rows whose
constants come from the variable domain boxes.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from bemi.core import Architecture, LabeledSample, WeightAssignment, compute_data_bound
from bemi.errors import InvalidArgument
from bemi.inference import preactivations, sign
from bemi.milp.model import Constraint, MilpModel, var_name

INTEGER_EPSILON = 0.1
CONTINUOUS_EPSILON = 1e-6


@dataclass(frozen=True)
class Tolerances:
    """Strictness offsets.

    ``epsilon`` separates the two sides of every sign test. With
    ``strict_hidden`` (the default) a hidden neuron that fires needs a
    pre-activation of at least ``epsilon``, so no training sample sits on a
    zero pre-activation; this keeps every SM solution admissible as an MM
    warm start at margin ``epsilon``. ``strict_hidden=False`` accepts a zero
    pre-activation as firing.
    """

    epsilon: float = INTEGER_EPSILON
    strict_hidden: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgument(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def for_data(cls, samples: Sequence[LabeledSample], **kw) -> "Tolerances":
        """0.1 for integer-valued features, 1e-6 for continuous ones."""
        integral = all(np.all(np.equal(np.round(s.features), s.features)) for s in samples)
        return cls(INTEGER_EPSILON if integral else CONTINUOUS_EPSILON, **kw)

    def eps_hat(self, arch: Architecture) -> float:
        """``epsilon / (2 P (n_{L-1} + 1))``."""
        return self.epsilon / (2 * arch.weight_bound * (arch.layer_sizes[-2] + 1))


def output_scale(arch: Architecture) -> float:
    """Factor mapping the output pre-activation to the predicted value ``yhat``."""
    return 2.0 / (arch.weight_bound * (arch.layer_sizes[-2] + 1))


def product_bound(arch: Architecture, layer: int, data_bound) -> float:
    """Bound on ``|c|`` for one link product entering ``layer``."""
    P = arch.weight_bound
    return P * data_bound if layer == 1 else P


def sum_bound(arch: Architecture, layer: int, data_bound) -> float:
    """Bound on ``|sum_i c_ilj|``: ``n_0 P b`` on layer 1, ``n_{l-1} P`` above."""
    return arch.layer_sizes[layer - 1] * product_bound(arch, layer, data_bound)


margin_upper = sum_bound


def activation_big_m(arch: Architecture, layer: int, data_bound, tol: Tolerances) -> float:
    """Big-M of the hidden sign indicator rows: box bound of the neuron sum plus ``epsilon``."""
    return sum_bound(arch, layer, data_bound) + tol.epsilon


# gadgets ---------------------------------------------------------------------


def _expr_plus(expr: Mapping[str, float], name: str, coef: float) -> dict[str, float]:
    out = dict(expr)
    out[name] = out.get(name, 0.0) + coef
    return out


def linearize_indicator(
    binary: str,
    expr: Mapping[str, float],
    threshold: float,
    big_m: float,
    gap: float,
    sense: str = ">=",
    name: str = "ind",
) -> tuple[Constraint, Constraint]:
    """Two big-M rows for an on/off threshold test.

    With ``sense='>='``: ``b = 1 => expr >= threshold`` and
    ``b = 0 => expr <= threshold - gap``. With ``sense='<='`` the roles flip:
    ``b = 1 => expr <= threshold`` and ``b = 0 => expr >= threshold + gap``.
    ``big_m`` must cover ``|expr - threshold|`` plus ``gap`` over the domain box.
    """
    if not big_m > 0:
        raise InvalidArgument(f"big-M must be positive, got {big_m}")
    if sense == ">=":
        # expr >= threshold - M (1 - b);  expr <= threshold - gap + M b
        on = Constraint(f"{name}_on", _expr_plus(expr, binary, -big_m), ">=", threshold - big_m)
        off = Constraint(f"{name}_off", _expr_plus(expr, binary, -big_m), "<=", threshold - gap)
    elif sense == "<=":
        on = Constraint(f"{name}_on", _expr_plus(expr, binary, big_m), "<=", threshold + big_m)
        off = Constraint(f"{name}_off", _expr_plus(expr, binary, big_m), ">=", threshold + gap)
    else:
        raise InvalidArgument(f"indicator sense must be '>=' or '<=', got {sense!r}")
    return on, off


def linearize_bilinear(u: str, w: str, c: str, P: int, name: str = "bil") -> tuple[Constraint, ...]:
    """Rows forcing ``c = (2u - 1) w`` for binary ``u`` and ``w`` in ``[-P, P]``."""
    M = 2 * P
    return (
        # c >= w - 2P(1-u)
        Constraint(f"{name}_a", {c: 1.0, w: -1.0, u: -M}, ">=", -M),
        # c <= w + 2P(1-u)
        Constraint(f"{name}_b", {c: 1.0, w: -1.0, u: M}, "<=", M),
        # c >= -w - 2P u
        Constraint(f"{name}_c", {c: 1.0, w: 1.0, u: M}, ">=", 0.0),
        # c <= -w + 2P u
        Constraint(f"{name}_d", {c: 1.0, w: 1.0, u: -M}, "<=", 0.0),
    )


def _add(model: MilpModel, rows) -> None:
    for row in rows:
        model.add_constraint(row.name, row.coeffs, row.sense, row.rhs)


# shared network skeleton -----------------------------------------------------


def _check_data(arch: Architecture, data: Sequence[LabeledSample], sample_ids) -> list[int]:
    if len(data) == 0:
        raise InvalidArgument("training data is empty")
    for s in data:
        s.check(arch)
    ids = list(range(len(data))) if sample_ids is None else [int(k) for k in sample_ids]
    if len(ids) != len(data) or len(set(ids)) != len(ids):
        raise InvalidArgument("sample ids must be distinct and match the data length")
    return ids


def _add_weights(model: MilpModel, arch: Architecture) -> None:
    P = arch.weight_bound
    for l, i, j in arch.links():
        model.add_var("w", (l, i, j), "integer", -P, P)


def _add_network(model: MilpModel, arch: Architecture, data, ids, data_bound) -> None:
    """Per-sample ``u`` and ``c`` variables with the product/propagation rows."""
    P = arch.weight_bound
    L = arch.depth
    for s, k in zip(data, ids):
        x = s.features
        for l in range(1, L):
            for j in range(arch.width(l)):
                model.add_var("u", (k, l, j), "binary", 0, 1)
        for l in range(1, L + 1):
            n_in, n_out = arch.layer_shape(l)
            for i in range(n_in):
                for j in range(n_out):
                    w = var_name("w", (l, i, j))
                    if l == 1:
                        cb = P * data_bound
                        c = model.add_var("c", (k, l, i, j), "continuous", -cb, cb)
                        model.add_constraint(f"prod_{k}_{i}_{j}", {c: 1.0, w: -float(x[i])}, "=", 0.0)
                    else:
                        c = model.add_var("c", (k, l, i, j), "integer", -P, P)
                        u = var_name("u", (k, l - 1, i))
                        _add(model, linearize_bilinear(u, w, c, P, name=f"bil_{k}_{l}_{i}_{j}"))


def _neuron_sum(k: int, l: int, j: int, n_in: int, scale: float = 1.0) -> dict[str, float]:
    return {var_name("c", (k, l, i, j)): scale for i in range(n_in)}


def _base_meta(arch: Architecture, ids, tol: Tolerances, data_bound, stage: str) -> dict:
    return {
        "stage": stage,
        "arch": arch.layer_sizes,
        "P": arch.weight_bound,
        "sample_ids": list(ids),
        "epsilon": tol.epsilon,
        "strict_hidden": tol.strict_hidden,
        "data_bound": data_bound,
    }


# stage models ------------------------------------------------------------------


def build_sm(
    arch: Architecture,
    data: Sequence[LabeledSample],
    tol: Tolerances = Tolerances(),
    sample_ids: Sequence[int] | None = None,
) -> MilpModel:
    """Sat-Margin model over all training samples."""
    ids = _check_data(arch, data, sample_ids)
    b = compute_data_bound(data)
    eps = tol.epsilon
    L = arch.depth
    model = MilpModel(name="SM", meta=_base_meta(arch, ids, tol, b, "SM"))
    _add_weights(model, arch)
    _add_network(model, arch, data, ids, b)

    scale = output_scale(arch)
    yhat_bound = scale * sum_bound(arch, L, b)
    eps_hat = tol.eps_hat(arch)
    n_last = arch.layer_sizes[-2]
    objective = {}
    for s, k in zip(data, ids):
        for l in range(1, L):
            big_m = activation_big_m(arch, l, b, tol)
            for j in range(arch.width(l)):
                expr = _neuron_sum(k, l, j, arch.layer_sizes[l - 1])
                u = var_name("u", (k, l, j))
                if tol.strict_hidden:
                    rows = linearize_indicator(u, expr, eps, big_m, 2 * eps, name=f"act_{k}_{l}_{j}")
                else:
                    rows = linearize_indicator(u, expr, 0.0, big_m, eps, name=f"act_{k}_{l}_{j}")
                _add(model, rows)
        for j in range(arch.n_outputs):
            yh = model.add_var("yhat", (k, j), "continuous", -yhat_bound, yhat_bound)
            q = model.add_var("q", (k, j), "binary", 0, 1)
            row = _neuron_sum(k, L, j, n_last, -scale)
            row[yh] = 1.0
            model.add_constraint(f"pred_{k}_{j}", row, "=", 0.0)
            y = s.target[j]
            _add(model, linearize_indicator(q, {yh: float(y)}, 0.5, yhat_bound + 0.5, eps_hat, name=f"sat_{k}_{j}"))
            objective[q] = 1.0
    model.set_objective("max", objective)
    return model


def _add_margin_rows(model, arch, data, ids, margin, b, label) -> None:
    """Margin-tightened activation rows; ``margin(l, j)`` is a variable name or a constant."""
    L = arch.depth
    for s, k in zip(data, ids):
        for l in range(1, L):
            for j in range(arch.width(l)):
                m = margin(l, j)
                expr = _neuron_sum(k, l, j, arch.layer_sizes[l - 1])
                u = var_name("u", (k, l, j))
                if isinstance(m, str):
                    big_m = sum_bound(arch, l, b) + margin_upper(arch, l, b)
                    # u = 1 => sum c >= m
                    model.add_constraint(f"{label}_on_{k}_{l}_{j}", {**expr, m: -1.0, u: -big_m}, ">=", -big_m)
                    # u = 0 => sum c <= -m
                    model.add_constraint(f"{label}_off_{k}_{l}_{j}", {**expr, m: 1.0, u: -big_m}, "<=", 0.0)
                else:
                    big_m = sum_bound(arch, l, b) + m
                    model.add_constraint(f"{label}_on_{k}_{l}_{j}", {**expr, u: -big_m}, ">=", m - big_m)
                    model.add_constraint(f"{label}_off_{k}_{l}_{j}", {**expr, u: -big_m}, "<=", -m)
        n_last = arch.layer_sizes[-2]
        for j in range(arch.n_outputs):
            m = margin(L, j)
            row = _neuron_sum(k, L, j, n_last, float(s.target[j]))
            if isinstance(m, str):
                model.add_constraint(f"{label}_out_{k}_{j}", {**row, m: -1.0}, ">=", 0.0)
            else:
                model.add_constraint(f"{label}_out_{k}_{j}", row, ">=", m)


def _copy_warm(model: MilpModel, warm: Mapping[str, float] | None) -> None:
    if warm is None:
        return
    model.warm_start = {v.name: float(warm[v.name]) for v in model.variables if v.name in warm}


def build_mm(
    arch: Architecture,
    data: Sequence[LabeledSample],
    tol: Tolerances = Tolerances(),
    warm: Mapping[str, float] | None = None,
    sample_ids: Sequence[int] | None = None,
) -> MilpModel:
    """Max-Margin model over the confidently correct samples.

    Shared ``w``, ``u`` and ``c`` values are copied from ``warm``; margins
    start at ``epsilon`` unless ``warm`` carries them.
    """
    ids = _check_data(arch, data, sample_ids)
    b = compute_data_bound(data)
    model = MilpModel(name="MM", meta=_base_meta(arch, ids, tol, b, "MM"))
    _add_weights(model, arch)
    objective = {}
    for l in range(1, arch.depth + 1):
        for j in range(arch.width(l)):
            # all-zero data gives an empty box; keep the domain and let the rows be infeasible
            upper = max(margin_upper(arch, l, b), tol.epsilon)
            objective[model.add_var("m", (l, j), "continuous", tol.epsilon, upper)] = 1.0
    _add_network(model, arch, data, ids, b)
    _add_margin_rows(model, arch, data, ids, lambda l, j: var_name("m", (l, j)), b, "mm")
    model.set_objective("max", objective)
    if warm is not None:
        start = {var_name("m", (l, j)): tol.epsilon for l in range(1, arch.depth + 1) for j in range(arch.width(l))}
        start.update(warm)
        _copy_warm(model, start)
    return model


def build_mw(
    arch: Architecture,
    data: Sequence[LabeledSample],
    margins: Mapping[tuple[int, int], float],
    tol: Tolerances = Tolerances(),
    warm: Mapping[str, float] | None = None,
    sample_ids: Sequence[int] | None = None,
) -> MilpModel:
    """Min-Weight model with the per-neuron margins fixed to ``margins[(l, j)]``.

    If ``warm`` has weights but no ``v`` values, ``v`` is set to 1 exactly on
    the nonzero weights.
    """
    ids = _check_data(arch, data, sample_ids)
    b = compute_data_bound(data)
    for l in range(1, arch.depth + 1):
        for j in range(arch.width(l)):
            if (l, j) not in margins:
                raise InvalidArgument(f"no fixed margin for neuron ({l}, {j})")
            if margins[(l, j)] < tol.epsilon:
                raise InvalidArgument(f"fixed margin {margins[(l, j)]} for neuron ({l}, {j}) is below epsilon")
    P = arch.weight_bound
    model = MilpModel(name="MW", meta=_base_meta(arch, ids, tol, b, "MW"))
    model.meta["margins"] = {f"{l}_{j}": float(m) for (l, j), m in margins.items()}
    _add_weights(model, arch)
    objective = {}
    for l, i, j in arch.links():
        v = model.add_var("v", (l, i, j), "binary", 0, 1)
        w = var_name("w", (l, i, j))
        model.add_constraint(f"link_lo_{l}_{i}_{j}", {w: 1.0, v: float(P)}, ">=", 0.0)
        model.add_constraint(f"link_hi_{l}_{i}_{j}", {w: 1.0, v: -float(P)}, "<=", 0.0)
        objective[v] = 1.0
    _add_network(model, arch, data, ids, b)
    _add_margin_rows(model, arch, data, ids, lambda l, j: float(margins[(l, j)]), b, "mw")
    model.set_objective("min", objective)
    if warm is not None:
        start = dict(warm)
        for l, i, j in arch.links():
            w = var_name("w", (l, i, j))
            if w in start:
                start.setdefault(var_name("v", (l, i, j)), 0.0 if round(start[w]) == 0 else 1.0)
        _copy_warm(model, start)
    return model


# values implied by a weight assignment -------------------------------------------


def implied_margins(W: WeightAssignment, data: Sequence[LabeledSample]) -> dict[tuple[int, int], float]:
    """Largest margin each neuron clears on ``data`` under weights ``W``.

    Hidden neurons: ``min_k |pre|``; output neurons: ``min_k y_j pre``. A
    hidden neuron with a zero pre-activation, or an output neuron with a
    non-positive signed sum, has margin 0.
    """
    X = np.stack([s.features for s in data])
    Y = np.array([s.target for s in data])
    pres = preactivations(W, X)
    out = {}
    for l, pre in enumerate(pres, start=1):
        if l < W.arch.depth:
            mins = np.abs(pre).min(axis=0)
        else:
            mins = np.maximum((pre * Y).min(axis=0), 0)
        for j, m in enumerate(mins):
            out[(l, j)] = float(m)
    return out


def derive_values(
    stage: str,
    W: WeightAssignment,
    data: Sequence[LabeledSample],
    tol: Tolerances = Tolerances(),
    sample_ids: Sequence[int] | None = None,
    margins: Mapping[tuple[int, int], float] | None = None,
) -> dict[str, float]:
    """Every model variable's value determined by the weights ``W``.

    ``u`` and ``c`` follow the forward pass; SM gets ``yhat`` and the best
    ``q``; MM gets ``margins`` (default: implied margins clipped to the
    variable box); MW gets ``v`` from the nonzero pattern.
    """
    arch = W.arch
    ids = _check_data(arch, data, sample_ids)
    b = compute_data_bound(data)
    L = arch.depth
    X = np.stack([s.features for s in data])
    pres = preactivations(W, X)
    acts = [X] + [sign(p) for p in pres]
    values: dict[str, float] = {}
    for l, i, j in arch.links():
        values[var_name("w", (l, i, j))] = float(W.weight(l, i, j))
    for row, (s, k) in enumerate(zip(data, ids)):
        for l in range(1, L + 1):
            mat = W.layers[l - 1]
            z_prev = acts[l - 1][row]
            if l < L:
                for j in range(arch.width(l)):
                    values[var_name("u", (k, l, j))] = 1.0 if acts[l][row, j] > 0 else 0.0
            prods = z_prev[:, None] * mat
            for i in range(mat.shape[0]):
                for j in range(mat.shape[1]):
                    values[var_name("c", (k, l, i, j))] = float(prods[i, j])
        if stage == "SM":
            n_last = arch.layer_sizes[-2]
            for j in range(arch.n_outputs):
                total = pres[-1][row, j]
                values[var_name("yhat", (k, j))] = float(Fraction(2) * Fraction(total) / (arch.weight_bound * (n_last + 1)))
                confident = 4 * s.target[j] * total >= arch.weight_bound * (n_last + 1)
                values[var_name("q", (k, j))] = 1.0 if confident else 0.0
    if stage == "MM":
        if margins is None:
            margins = {
                key: min(max(m, tol.epsilon), margin_upper(arch, key[0], b))
                for key, m in implied_margins(W, data).items()
            }
        for (l, j), m in margins.items():
            values[var_name("m", (l, j))] = float(m)
    elif stage == "MW":
        for l, i, j in arch.links():
            values[var_name("v", (l, i, j))] = 0.0 if W.weight(l, i, j) == 0 else 1.0
    elif stage != "SM":
        raise InvalidArgument(f"unknown stage {stage!r}")
    return values


def weights_from_values(arch: Architecture, values: Mapping[str, float]) -> WeightAssignment:
    flat = [int(round(values[var_name("w", link)])) for link in arch.links()]
    return WeightAssignment.from_flat(arch, flat)
