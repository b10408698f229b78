import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bemi.core import Architecture, LabeledSample, WeightAssignment
from bemi.errors import InvalidArgument
from bemi.milp.builder import (
    Tolerances,
    activation_big_m,
    build_mm,
    build_mw,
    build_sm,
    derive_values,
    implied_margins,
    linearize_bilinear,
    linearize_indicator,
    weights_from_values,
)
from bemi.milp.model import var_name
from oracles import naive_forward, row_holds, weights_as_lists

EPS = 0.1


def _sample(x, y=1):
    return LabeledSample(np.array(x), (y,) if isinstance(y, int) else y)


# counts ---------------------------------------------------------------------------------


def test_sm_counts_single_sample(arch221):
    model = build_sm(arch221, [_sample([1, 2])])
    assert model.role_counts() == {"w": 6, "u": 2, "c": 6, "yhat": 1, "q": 1}
    assert model.sense == "max"
    assert set(model.objective) == {"q_0_0"}


def test_sm_weight_count_of_mnist_architecture():
    arch = Architecture((784, 4, 4, 1))
    model = build_sm(arch, [_sample(np.arange(784) % 256)])
    assert model.role_counts()["w"] == 3156


def test_empty_training_set_rejected(arch221):
    for build in (build_sm, build_mm):
        with pytest.raises(InvalidArgument):
            build(arch221, [])


def test_dimension_mismatch_rejected(arch221):
    with pytest.raises(InvalidArgument):
        build_sm(arch221, [_sample([1, 2, 3])])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 3), min_size=2, max_size=4), st.integers(1, 3), st.integers(1, 3))
def test_counts_follow_closed_forms(sizes, P, t):
    arch = Architecture(tuple(sizes), P)
    rng = np.random.default_rng(t)
    data = [LabeledSample(rng.integers(-3, 4, sizes[0]), tuple(rng.choice([-1, 1], sizes[-1]))) for _ in range(t)]
    sm = build_sm(arch, data)
    hidden = sum(sizes[1:-1])
    later_links = arch.total_links - sizes[0] * sizes[1]
    counts = sm.role_counts()
    assert counts["w"] == arch.total_links
    assert counts.get("u", 0) == t * hidden
    assert counts["c"] == t * arch.total_links
    assert counts["q"] == counts["yhat"] == t * sizes[-1]
    expected_rows = t * (sizes[0] * sizes[1] + 4 * later_links + 2 * hidden + 3 * sizes[-1])
    assert len(sm.constraints) == expected_rows
    mm = build_mm(arch, data)
    assert mm.role_counts()["m"] == arch.total_neurons
    mw = build_mw(arch, data, {(l, j): EPS for l in range(1, arch.depth + 1) for j in range(sizes[l])})
    assert mw.role_counts()["v"] == arch.total_links


def test_mm_margin_variables_for_mnist_architecture():
    arch = Architecture((784, 4, 4, 1))
    model = build_mm(arch, [_sample(np.ones(784, dtype=int))])
    ms = model.vars_with_role("m")
    assert len(ms) == 9
    assert all(v.lb == EPS for v in ms)


def test_mw_link_indicators_for_wide_architecture():
    arch = Architecture((784, 10, 3, 1))
    margins = {(l, j): EPS for l in range(1, 4) for j in range(arch.width(l))}
    model = build_mw(arch, [_sample(np.ones(784, dtype=int))], margins)
    assert model.role_counts()["v"] == 7873
    assert sum(c.name.startswith("link_") for c in model.constraints) == 2 * 7873


def test_mw_rejects_small_or_missing_margins(arch221):
    data = [_sample([1, 2])]
    good = {(1, 0): EPS, (1, 1): EPS, (2, 0): EPS}
    with pytest.raises(InvalidArgument):
        build_mw(arch221, data, {**good, (2, 0): 0.05})
    with pytest.raises(InvalidArgument):
        build_mw(arch221, data, {(1, 0): EPS})


def test_mw_zero_indicator_forces_zero_weight(arch221):
    model = build_mw(arch221, [_sample([1, 2])], {(1, 0): EPS, (1, 1): EPS, (2, 0): EPS})
    lo = next(c for c in model.constraints if c.name == "link_lo_1_0_0")
    hi = next(c for c in model.constraints if c.name == "link_hi_1_0_0")
    for w in (-1, 0, 1):
        point = {"w_1_0_0": w, "v_1_0_0": 0}
        assert (lo.violation(point) == 0 and hi.violation(point) == 0) == (w == 0)


def test_domain_boxes(arch221):
    data = [_sample([-7, 3])]
    sm = build_sm(arch221, data)
    for v in sm.variables:
        if v.role == "w":
            assert (v.lb, v.ub, v.kind) == (-1, 1, "integer")
        elif v.role in ("u", "q"):
            assert v.kind == "binary"
        elif v.role == "c" and v.index[1] == 1:
            assert (v.lb, v.ub, v.kind) == (-7, 7, "continuous")
        elif v.role == "c":
            assert (v.lb, v.ub, v.kind) == (-1, 1, "integer")
    mm = build_mm(arch221, data)
    uppers = {v.index: v.ub for v in mm.vars_with_role("m")}
    assert uppers == {(1, 0): 14, (1, 1): 14, (2, 0): 2}


# big-M values ------------------------------------------------------------------------------


def test_first_layer_big_m_example():
    arch = Architecture((2, 2, 1), 1)
    assert activation_big_m(arch, 1, 7, Tolerances(EPS)) == pytest.approx(14.1)
    model = build_sm(arch, [_sample([7, -1])])
    row = next(c for c in model.constraints if c.name == "act_0_1_0_on")
    assert row.coeffs["u_0_1_0"] == pytest.approx(-14.1)


def test_second_layer_big_m_example():
    arch = Architecture((2, 4, 3, 1), 1)
    assert activation_big_m(arch, 2, 7, Tolerances(EPS)) == pytest.approx(4 + EPS)


def test_indicator_rejects_nonpositive_big_m():
    for bad in (0, -1):
        with pytest.raises(InvalidArgument):
            linearize_indicator("b", {"x": 1}, 0, bad, EPS)
    with pytest.raises(InvalidArgument):
        linearize_indicator("b", {"x": 1}, 0, 1, EPS, sense="==")


def test_indicator_with_empty_support_checks_threshold_sign():
    # expression identically 0: b=1 allowed iff 0 >= threshold, b=0 allowed iff 0 <= threshold - gap
    for thr, gap in ((0.0, EPS), (EPS, 2 * EPS), (-1.0, EPS)):
        rows = linearize_indicator("b", {}, thr, 5.0, gap)
        for b in (0, 1):
            ok = all(row_holds(r.coeffs, r.sense, r.rhs, {"b": b}) for r in rows)
            assert ok == ((0 >= thr) if b else (0 <= thr - gap))


# exhaustive exactness of the gadgets ----------------------------------------------------------


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("P", [1, 2, 3])
@pytest.mark.parametrize("strict", [True, False])
@pytest.mark.parametrize("sense", [">=", "<="])
def test_indicator_exact_on_integer_box(n, P, strict, sense):
    thr, gap = (EPS, 2 * EPS) if strict else (0.0, EPS)
    names = [f"c{i}" for i in range(n)]
    expr = {name: 1.0 for name in names}
    rows = linearize_indicator("b", expr, thr, n * P + abs(thr) + gap, gap, sense=sense)
    mismatches = 0
    for b in (0, 1):
        for point in itertools.product(range(-P, P + 1), repeat=n):
            e = Fraction(sum(point))
            values = dict(zip(names, point), b=b)
            gadget = all(row_holds(r.coeffs, r.sense, r.rhs, values) for r in rows)
            t, g = Fraction(thr).limit_denominator(100), Fraction(gap).limit_denominator(100)
            if sense == ">=":
                logic = e >= t if b else e <= t - g
            else:
                logic = e <= t if b else e >= t + g
            mismatches += gadget != logic
    assert mismatches == 0


@pytest.mark.parametrize("P", [1, 2, 3])
def test_bilinear_exact_on_integer_box(P):
    rows = linearize_bilinear("u", "w", "c", P)
    mismatches = 0
    for u in (0, 1):
        for w in range(-P, P + 1):
            for c in range(-2 * P - 1, 2 * P + 2):
                gadget = all(row_holds(r.coeffs, r.sense, r.rhs, {"u": u, "w": w, "c": c}) for r in rows)
                mismatches += gadget != (c == (2 * u - 1) * w)
    assert mismatches == 0


@pytest.mark.parametrize("u,w,P,expected", [(1, -3, 3, -3), (0, 2, 3, -2)])
def test_bilinear_substitution_examples(u, w, P, expected):
    rows = linearize_bilinear("u", "w", "c", P)
    feasible = [c for c in range(-P, P + 1) if all(row_holds(r.coeffs, r.sense, r.rhs, {"u": u, "w": w, "c": c}) for r in rows)]
    assert feasible == [expected]


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("P", [1, 2])
def test_margin_rows_exact_on_grid(n, P):
    """Margin-tightened hidden rows: u=1 => sum >= m, u=0 => sum <= -m, for m on a grid."""
    arch = Architecture((n, 1, 1, 1), P)
    # a layer-2 neuron sees n_1 = 1 input; use layer 1 with unit features instead
    data = [_sample([1] * n)]
    model = build_mm(arch, data)
    on = next(c for c in model.constraints if c.name == "mm_on_0_1_0")
    off = next(c for c in model.constraints if c.name == "mm_off_0_1_0")
    upper = model.var("m_1_0").ub
    grid = [Fraction(k, 10) for k in range(1, int(upper * 10) + 1, 3)]
    mismatches = 0
    for u in (0, 1):
        for point in itertools.product(range(-P, P + 1), repeat=n):
            for m in grid:
                values = {var_name("c", (0, 1, i, 0)): point[i] for i in range(n)}
                values.update({"u_0_1_0": u, "m_1_0": m})
                gadget = row_holds(on.coeffs, on.sense, on.rhs, values) and row_holds(off.coeffs, off.sense, off.rhs, values)
                s = sum(point)
                mismatches += gadget != (s >= m if u else s <= -m)
    assert mismatches == 0


# values implied by weights ------------------------------------------------------------------

tiny_points = st.lists(
    st.tuples(st.integers(-3, 3), st.integers(-3, 3)).filter(any), min_size=1, max_size=4
)
weights6 = st.lists(st.integers(-1, 1), min_size=6, max_size=6)


def _admissible(W, data, eps=Fraction(1, 10)):
    """Whether the forward pass avoids every forbidden band of the SM indicators."""
    n_last = W.arch.layer_sizes[-2]
    P = W.arch.weight_bound
    for s in data:
        _, pres = naive_forward(weights_as_lists(W), s.features)
        if any(-eps < p < eps for pre in pres[:-1] for p in pre):
            return False
        for j, p in enumerate(pres[-1]):
            yy = Fraction(2 * s.target[j]) * p / (P * (n_last + 1))
            if Fraction(1, 2) - eps / (2 * P * (n_last + 1)) < yy < Fraction(1, 2):
                return False
    return True


@settings(max_examples=80, deadline=None)
@given(tiny_points, weights6, st.lists(st.sampled_from([-1, 1]), min_size=4, max_size=4))
def test_sm_values_from_weights_feasible_iff_admissible(points, flat, ys):
    arch = Architecture((2, 2, 1), 1)
    data = [_sample(p, ys[i]) for i, p in enumerate(points)]
    W = WeightAssignment.from_flat(arch, flat)
    model = build_sm(arch, data)
    values = derive_values("SM", W, data)
    assert model.is_feasible(values) == _admissible(W, data)
    if model.is_feasible(values):
        confident = sum(
            4 * s.target[0] * naive_forward(weights_as_lists(W), s.features)[1][-1][0] >= 3 for s in data
        )
        assert model.objective_value(values) == confident
        assert weights_from_values(arch, values) == W


@settings(max_examples=80, deadline=None)
@given(tiny_points, weights6, st.lists(st.sampled_from([-1, 1]), min_size=4, max_size=4))
def test_sm_solution_filtered_to_confident_samples_is_mm_feasible_at_epsilon(points, flat, ys):
    arch = Architecture((2, 2, 1), 1)
    data = [_sample(p, ys[i]) for i, p in enumerate(points)]
    W = WeightAssignment.from_flat(arch, flat)
    values = derive_values("SM", W, data)
    if not build_sm(arch, data).is_feasible(values):
        return
    keep = [k for k in range(len(data)) if values[f"q_{k}_0"] == 1]
    if not keep:
        return
    t_hat = [data[k] for k in keep]
    mm = build_mm(arch, t_hat, sample_ids=keep)
    start = {n: v for n, v in values.items() if mm.has_var(n)}
    start.update({f"m_{l}_{j}": EPS for l, j in [(1, 0), (1, 1), (2, 0)]})
    assert mm.is_feasible(start)


@settings(max_examples=80, deadline=None)
@given(tiny_points, weights6, st.lists(st.sampled_from([-1, 1]), min_size=4, max_size=4))
def test_mm_values_with_link_indicators_are_mw_feasible(points, flat, ys):
    arch = Architecture((2, 2, 1), 1)
    data = [_sample(p, ys[i]) for i, p in enumerate(points)]
    W = WeightAssignment.from_flat(arch, flat)
    margins = implied_margins(W, data)
    if min(margins.values()) < EPS:
        return
    mm = build_mm(arch, data)
    mm_values = derive_values("MM", W, data)
    assert mm.is_feasible(mm_values)
    mw = build_mw(arch, data, {k: mm_values[f"m_{k[0]}_{k[1]}"] for k in margins}, warm=mm_values)
    assert mw.is_feasible(mw.warm_start)
    assert mw.objective_value(mw.warm_start) == W.nonzero_count()


def test_mm_warm_start_defaults_margins_to_epsilon(arch221):
    data = [_sample([1, 2])]
    W = WeightAssignment.from_flat(arch221, [1, 1, 1, 1, 1, 1])
    warm = {k: v for k, v in derive_values("SM", W, data).items() if k[0] in "wuc"}
    mm = build_mm(arch221, data, warm=warm)
    assert all(mm.warm_start[f"m_{l}_{j}"] == EPS for l, j in [(1, 0), (1, 1), (2, 0)])


def test_verbatim_hidden_rule_accepts_zero_preactivation(arch221):
    data = [_sample([1, 2])]
    W = WeightAssignment.from_flat(arch221, [0, 0, 0, 0, 1, 1])  # hidden sums are 0
    values = derive_values("SM", W, data)
    assert not build_sm(arch221, data, Tolerances(EPS)).is_feasible(values)
    assert build_sm(arch221, data, Tolerances(EPS, strict_hidden=False)).is_feasible(values)


def test_tolerances():
    assert Tolerances.for_data([_sample([1, 2])]).epsilon == 0.1
    assert Tolerances.for_data([_sample([1.5, 2])]).epsilon == 1e-6
    assert Tolerances(0.1).eps_hat(Architecture((2, 2, 1), 1)) == pytest.approx(0.1 / 6)
    with pytest.raises(InvalidArgument):
        Tolerances(0)
