import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sepsr.errors import IndeterminateError, InputError
from sepsr.septest import (DEGENERATE, CorrelationResult, OperatorClass,
                           SepTestConfig, correlation, infer_operator,
                           subset_separability)
from sepsr.targets import get_builtin


def test_perfect_line():
    xs = np.array([0.0, 1.0, 2.0, 3.0])
    c = correlation(xs, 2 * xs + 1)
    assert c.r == pytest.approx(1.0, abs=1e-15)
    assert c.slope == pytest.approx(2.0, abs=1e-12)
    assert c.intercept == pytest.approx(1.0, abs=1e-12)


def test_perfect_negative_line():
    xs = np.array([1.0, 2.0, 5.0, 9.0])
    assert correlation(xs, -xs).r == pytest.approx(-1.0, abs=1e-15)


def test_hand_computed_quadratic_correlation():
    xs = np.array([1.0, 2.0, 3.0, 4.0])
    ys = xs**2
    # independent recomputation of the sample correlation
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    expected = (xc @ yc) / math.sqrt((xc @ xc) * (yc @ yc))
    got = correlation(xs, ys)
    assert got.r == pytest.approx(expected, abs=1e-15)
    assert got.r == pytest.approx(0.9844, abs=1e-4)


def test_correlation_input_contract():
    with pytest.raises(InputError):
        correlation([1.0, 2.0], [1.0, 2.0])  # too short
    with pytest.raises(IndeterminateError):
        correlation([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])


def test_spearman_and_kendall_agree_on_monotone_data():
    xs = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    ys = np.exp(xs)
    assert correlation(xs, ys, "spearman").r == pytest.approx(1.0)
    assert correlation(xs, ys, "kendall").r == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 50.0), st.floats(-20.0, 20.0))
def test_pearson_invariant_under_positive_affine_maps(seed, scale, shift):
    rng = np.random.default_rng(seed)
    xs = rng.normal(size=20)
    ys = rng.normal(size=20)
    base = correlation(xs, ys).r
    assert correlation(scale * xs + shift, ys).r == pytest.approx(base, abs=1e-9)
    assert correlation(xs, scale * ys + shift).r == pytest.approx(base, abs=1e-9)


# --- operator inference -------------------------------------------------------


def _fit(slope, intercept, xi_mean=1.0):
    return CorrelationResult(1.0, slope, intercept, "pearson", 50, xi_mean)


def test_infer_pure_scaling_is_times():
    fits = [_fit(0.5, 0.0), _fit(2.0, 1e-9), _fit(-1.3, 0.0)]
    assert infer_operator(fits) == OperatorClass.TIMES


def test_infer_pure_shift_is_plus_minus():
    fits = [_fit(1.0, 2.0), _fit(1.0, -0.7), _fit(1.0 + 1e-9, 3.0)]
    assert infer_operator(fits) == OperatorClass.PLUS_MINUS


def test_infer_scaling_with_shared_offset_is_times():
    # slope away from 1 plus a nonzero intercept: product with constant term
    fits = [_fit(0.5, 0.4), _fit(2.0, -0.8)]
    assert infer_operator(fits) == OperatorClass.TIMES


def test_infer_degenerate_requests_redraw():
    fits = [_fit(1.0, 0.0), _fit(1.0 - 1e-9, 1e-12)]
    assert infer_operator(fits) is DEGENERATE


def test_infer_mixed_is_unknown():
    fits = [_fit(1.0, 2.0), _fit(0.5, 0.0)]
    assert infer_operator(fits) == OperatorClass.UNKNOWN


# --- subset tests on the built-in targets -------------------------------------


CFG = SepTestConfig(seed=99)


def _verdict(name, subset, seed=99):
    t = get_builtin(name)
    cfg = SepTestConfig(seed=seed)
    return subset_separability(t.oracle(), t.box, subset, cfg)


def test_additive_toy_first_variable_is_additive_block():
    v = _verdict("eq3", (0,))
    assert v.separable and v.operator == OperatorClass.PLUS_MINUS


def test_multiplicative_toy_first_variable_is_times_block():
    v = _verdict("eq5", (0,))
    assert v.separable and v.operator == OperatorClass.TIMES


def test_entangled_sine_is_not_separable():
    v = _verdict("nonsep3", (0,))
    assert not v.separable


def test_enthalpy_pair_separable_only_jointly():
    alone = _verdict("eq2", (3,))
    # the first test family is linear in x4, so only the conjunction rejects
    assert not alone.separable
    assert all(1.0 - abs(c.r) <= 1e-6 for c in alone.test1)
    assert any(1.0 - abs(c.r) > 1e-6 for c in alone.test2)
    pair = _verdict("eq2", (3, 4))
    assert pair.separable and pair.operator == OperatorClass.TIMES


def test_flat_plate_angle_block_is_times():
    v = _verdict("eq1", (0,))
    assert v.separable and v.operator == OperatorClass.TIMES
    # pure product: every test-1 fit has a near-zero intercept
    for c in v.test1:
        assert abs(c.intercept) <= 1e-6 * max(abs(c.xi_mean), 1.0)


def test_verdict_symmetry_under_complement():
    for name in ("eq1", "eq2", "eq3", "eq4", "eq5", "nonsep3"):
        t = get_builtin(name)
        subset = t.true_blocks[0]
        if len(subset) >= t.n:
            subset = (0,)
        comp = tuple(i for i in range(t.n) if i not in subset)
        a = subset_separability(t.oracle(), t.box, subset, SepTestConfig(seed=5))
        b = subset_separability(t.oracle(), t.box, comp, SepTestConfig(seed=5))
        assert a.separable == b.separable, name


def test_subset_validation():
    t = get_builtin("eq3")
    with pytest.raises(InputError):
        subset_separability(t.oracle(), t.box, (), CFG)
    with pytest.raises(InputError):
        subset_separability(t.oracle(), t.box, (0, 1, 2), CFG)


def test_necessity_on_true_blocks_many_seeds():
    # every pairwise correlation on a true block stays within 1e-9 of |r|=1
    for name in ("eq3", "eq5"):
        t = get_builtin(name)
        for seed in range(5):
            for block in t.true_blocks:
                v = subset_separability(t.oracle(), t.box, block,
                                        SepTestConfig(seed=seed))
                assert v.separable
                for c in v.test1 + v.test2:
                    assert 1.0 - abs(c.r) <= 1e-9


def test_verdict_serializes():
    v = _verdict("eq3", (0,))
    doc = v.to_json()
    assert doc["subset"] == [1]
    assert doc["separable"] is True
    assert len(doc["test1"]) == 3
