import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepsr.errors import InputError
from sepsr.sampling import (DomainBox, SampleSet, anchor_points, grid_sample,
                            lhs_sample)


def test_box_rejects_empty_and_degenerate_intervals():
    with pytest.raises(InputError):
        DomainBox((0.0,), (0.0,))
    with pytest.raises(InputError):
        DomainBox((1.0,), (0.5,))
    with pytest.raises(InputError):
        DomainBox((), ())


def test_grid_13_points_includes_endpoints():
    ss = grid_sample(DomainBox((-3.0,), (3.0,)), [13])
    xs = ss.points[:, 0]
    assert ss.n_points == 13
    assert xs[0] == -3.0 and xs[-1] == 3.0
    assert np.allclose(np.diff(xs), 0.5)


def test_grid_169_points_on_square():
    box = DomainBox((-3.0, -3.0), (3.0, 3.0))
    ss = grid_sample(box, [13, 13])
    assert ss.n_points == 169
    assert bool(box.contains(ss.points).all())


def test_grid_count_one_is_midpoint():
    ss = grid_sample(DomainBox((0.0,), (1.0,)), [1])
    assert ss.points[0, 0] == 0.5


def test_grid_cap():
    with pytest.raises(InputError):
        grid_sample(DomainBox((0.0, 0.0), (1.0, 1.0)), [2000, 2000])


def test_lhs_stratification_small():
    box = DomainBox((0.0, 0.0), (1.0, 1.0))
    ss = lhs_sample(box, 4, seed=7)
    for j in range(2):
        strata = np.floor(ss.points[:, j] * 4).astype(int)
        assert sorted(strata.clip(0, 3)) == [0, 1, 2, 3]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 40))
def test_lhs_stratification_property(seed, n):
    box = DomainBox((-2.0, 5.0), (4.0, 9.0))
    ss = lhs_sample(box, n, seed)
    assert bool(box.contains(ss.points).all())
    for j, (a, b) in enumerate(zip(box.lo, box.hi)):
        strata = np.floor((ss.points[:, j] - a) / (b - a) * n).astype(int)
        assert sorted(strata.clip(0, n - 1)) == list(range(n))


def test_lhs_deterministic_per_seed():
    box = DomainBox((0.0,), (1.0,))
    a = lhs_sample(box, 17, seed=123).points
    b = lhs_sample(box, 17, seed=123).points
    c = lhs_sample(box, 17, seed=124).points
    assert a.tobytes() == b.tobytes()
    assert a.tobytes() != c.tobytes()


def test_lhs_mean_near_half():
    ss = lhs_sample(DomainBox((0.0,), (1.0,)), 1000, seed=5)
    assert abs(ss.points[:, 0].mean() - 0.5) < 0.02


def test_anchor_points_distinct_and_inside():
    box = DomainBox((0.0, 1e4, 1e5), (1.0, 5e4, 1e6))
    anchors = anchor_points(box, [1, 2], 3, seed=11)
    assert anchors.shape == (3, 2)
    sub = box.subbox([1, 2])
    assert bool(sub.contains(anchors).all())
    for i in range(3):
        for j in range(i + 1, 3):
            assert not np.array_equal(anchors[i], anchors[j])


def test_anchor_needs_two():
    with pytest.raises(InputError):
        anchor_points(DomainBox((0.0,), (1.0,)), [0], 1, seed=0)


def test_sample_set_csv_round_trip():
    box = DomainBox((0.0, -1.0), (1.0, 1.0))
    ss = lhs_sample(box, 9, seed=3).with_values(np.arange(9.0))
    back = SampleSet.from_csv(ss.to_csv())
    assert np.array_equal(back.points, ss.points)
    assert np.array_equal(back.values, ss.values)


def test_sample_set_csv_header_validation():
    with pytest.raises(InputError):
        SampleSet.from_csv("a,b\n1,2\n")
