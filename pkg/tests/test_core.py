import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bemi.core import (
    UNCLASSIFIED,
    Architecture,
    LabeledSample,
    WeightAssignment,
    all_patterns,
    compute_data_bound,
    make_encoding,
)
from bemi.errors import InvalidArgument

archs = st.lists(st.integers(1, 6), min_size=2, max_size=5).flatmap(
    lambda sizes: st.tuples(st.just(tuple(sizes)), st.integers(1, 4))
)


def test_total_links_of_reported_architectures():
    # "Total links" column values for the two architectures used in the experiments
    assert Architecture((784, 4, 4, 1)).total_links == 3156
    assert Architecture((784, 10, 3, 1)).total_links == 7873


@given(archs)
def test_total_links_matches_link_enumeration(shape):
    sizes, P = shape
    arch = Architecture(sizes, P)
    assert arch.total_links == len(list(arch.links())) == sum(a * b for a, b in zip(sizes, sizes[1:]))


@pytest.mark.parametrize("sizes,P", [((3,), 1), ((2, 0, 1), 1), ((2, 1), 0), ((2, 1), 1.5)])
def test_architecture_rejects_bad_shapes(sizes, P):
    with pytest.raises(InvalidArgument):
        Architecture(sizes, P)


def test_architecture_parse():
    assert Architecture.parse("784,4,4,1", 3) == Architecture((784, 4, 4, 1), 3)


@given(archs, st.data())
def test_weight_assignment_round_trip_and_counts(shape, data):
    sizes, P = shape
    arch = Architecture(sizes, P)
    flat = data.draw(st.lists(st.integers(-P, P), min_size=arch.total_links, max_size=arch.total_links))
    W = WeightAssignment.from_flat(arch, flat)
    assert list(W.flat()) == flat
    assert W.nonzero_count() == sum(v != 0 for v in flat) <= arch.total_links
    hist = W.histogram()
    assert set(hist) == set(range(-P, P + 1))
    assert sum(hist.values()) == arch.total_links
    for l, i, j in arch.links():
        assert -P <= W.weight(l, i, j) <= P
    assert W == WeightAssignment.from_flat(arch, flat)
    assert hash(W) == hash(WeightAssignment.from_flat(arch, flat))


def test_weight_assignment_is_immutable():
    W = WeightAssignment.zeros(Architecture((2, 2, 1)))
    with pytest.raises(ValueError):
        W.layers[0][0, 0] = 1


@pytest.mark.parametrize("bad", [[[2, 0], [0, 0]], [[0.5, 0], [0, 0]]])
def test_weight_assignment_rejects_out_of_domain(bad):
    arch = Architecture((2, 2, 1), 1)
    with pytest.raises(InvalidArgument):
        WeightAssignment(arch, (np.array(bad), np.zeros((2, 1))))


def test_weight_assignment_rejects_wrong_shape():
    with pytest.raises(InvalidArgument):
        WeightAssignment(Architecture((2, 2, 1)), (np.zeros((2, 3)), np.zeros((2, 1))))


def test_labeled_sample_validation():
    arch = Architecture((2, 2, 1))
    with pytest.raises(InvalidArgument):
        LabeledSample([1, 2], (0,))
    with pytest.raises(InvalidArgument):
        LabeledSample([1, 2, 3], (1,)).check(arch)
    with pytest.raises(InvalidArgument):
        LabeledSample([1, 2], (1, 1)).check(arch)
    LabeledSample([1, 2], (1,)).check(arch)


def test_data_bound_examples():
    assert compute_data_bound([LabeledSample([-3, 2], (1,)), LabeledSample([1, -7], (1,))]) == 7
    assert compute_data_bound([LabeledSample([0, 0], (1,))]) == 0
    with pytest.raises(InvalidArgument):
        compute_data_bound([])


@given(st.lists(st.lists(st.integers(-1000, 1000), min_size=3, max_size=3), min_size=1, max_size=10))
def test_data_bound_dominates_every_feature(rows):
    b = compute_data_bound([LabeledSample(r, (1,)) for r in rows])
    assert all(abs(v) <= b for r in rows for v in r)
    assert any(abs(v) == b for r in rows for v in r)


def test_encoding_two_classes():
    enc = make_encoding(["A", "B"])
    assert enc.bit_width == 1
    assert enc.encode("A") == (1,)
    assert enc.encode("B") == (-1,)


def test_encoding_three_classes_leaves_one_pattern_unclassified():
    enc = make_encoding(["c1", "c2", "c3"])
    assert enc.bit_width == 2
    assert enc.decode((-1, -1)) is UNCLASSIFIED
    assert enc.unassigned_patterns() == [(-1, -1)]


def test_encoding_ten_classes_uses_four_bits():
    assert make_encoding(range(10)).bit_width == 4


@pytest.mark.parametrize("classes", [[], ["only"], ["a", "a"]])
def test_encoding_rejects_degenerate_class_sets(classes):
    with pytest.raises(InvalidArgument):
        make_encoding(classes)


@given(st.integers(2, 20))
def test_encoding_round_trips_and_abstains_elsewhere(n):
    enc = make_encoding(range(n))
    for cls in range(n):
        assert enc.decode(enc.encode(cls)) == cls
    assigned = set(enc.patterns)
    assert len(assigned) == n
    for p in itertools.product((1, -1), repeat=enc.bit_width):
        if p not in assigned:
            assert enc.decode(p) is UNCLASSIFIED


def test_patterns_start_all_plus_and_descend():
    pats = all_patterns(2)
    assert pats == [(1, 1), (1, -1), (-1, 1), (-1, -1)]
