"""
Tests for growth fits, the W_i envelope, DMT curves and SNR thresholds

Covers:
1. Exact recovery of power and pure-log growth, and the anchored growth ratio
2. W_i exponents and regimes for the Golden and diagonal codes
3. DMT lines with rational coefficients and their envelopes
4. Error probability bounds and threshold exponents
"""
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.bounds import (
    DmtCurve, DmtSegment, diagonal_nf_c_exponent, dmt_envelope, dmt_from_envelope, dmt_ml_bound,
    dmt_naive_bound, full_multiplexing_check, growth_fit, growth_ratio, pe_upper_bound, scheme_pe_bound,
    snr_threshold, wi_envelope,
)
from src.errors import DegenerateFit, InvalidArgument, MissingExponent

RADII = np.array([2.0, 4.0, 8.0, 16.0, 32.0])


def test_growth_fit_pure_power():
    fit = growth_fit((RADII, 3.0 * RADII ** 4))
    assert fit.s == pytest.approx(4.0, abs=1e-8)
    assert fit.t == pytest.approx(0.0, abs=1e-8)
    assert fit.logK == pytest.approx(np.log(3.0), abs=1e-8)
    assert fit.residual < 1e-10
    assert not fit.has_log_factor
    np.testing.assert_allclose(fit.predict(RADII), 3.0 * RADII ** 4, rtol=1e-8)


def test_growth_fit_pure_log():
    fit = growth_fit((RADII, np.log(RADII) ** 5))
    assert fit.s == pytest.approx(0.0, abs=1e-8)
    assert fit.t == pytest.approx(5.0, abs=1e-8)
    assert fit.has_log_factor
    assert "log M" in fit.description


def test_growth_fit_without_log_term():
    fit = growth_fit((RADII, RADII ** 2.5), log_term=False)
    assert fit.s == pytest.approx(2.5, abs=1e-10)
    assert fit.t == 0.0


def test_growth_fit_drops_small_radii():
    Ms = np.array([1.0, 2.0, 4.0, 8.0, 16.0])
    fit = growth_fit((Ms, Ms ** 3))
    assert fit.samples == 4


def test_growth_fit_degenerate():
    with pytest.raises(DegenerateFit):
        growth_fit((np.full(5, 4.0), np.arange(1.0, 6.0)))
    with pytest.raises(DegenerateFit):
        growth_fit((RADII[:3], RADII[:3]))
    with pytest.raises(DegenerateFit):
        growth_fit((RADII, np.zeros(5)))


def test_growth_ratio():
    df = growth_ratio((RADII, 3.0 * RADII ** 4), exponent=4.5)
    assert list(df.columns) == ["M", "value", "ratio"]
    np.testing.assert_allclose(df["ratio"], 3.0 * RADII ** -0.5)
    assert np.all(np.diff(df["ratio"]) < 0)
    with pytest.raises(InvalidArgument):
        growth_ratio((RADII, RADII), exponent=float("nan"))
    with pytest.raises(InvalidArgument):
        growth_ratio((RADII[:2], RADII), exponent=1.0)


def test_golden_envelope():
    env = wi_envelope(n=2, k=8, m=4, s_table={4: 4, 2: 4}, indices=[0, 2, 4])
    w0, w2, w4 = env.entry(0), env.entry(2), env.entry(4)
    assert (w0.c_exponent, w0.M_exponent, w0.regime) == (8, 4, "poly")
    assert (w2.c_exponent, w2.M_exponent, w2.regime, w2.log_power) == (6, 0, "log", 1)
    assert (w4.c_exponent, w4.M_exponent, w4.regime, w4.log_power) == (4, 0, "log", 1)
    assert env.notes
    assert env.active_index(1e4, 2.0) == 0
    assert env.active_index(0.5, 1e3) == 4


def test_envelope_missing_exponent():
    with pytest.raises(MissingExponent):
        wi_envelope(n=2, k=8, m=4, s_table={4: 4, 2: 4})


def test_envelope_trichotomy():
    # the W_m regime compares k with 2m
    assert wi_envelope(n=1, k=2, m=1, s_table={}, indices=[1]).entry(1).regime == "log"
    assert wi_envelope(n=1, k=2, m=2, s_table={}, indices=[2]).entry(2).regime == "constant"
    poly = wi_envelope(n=2, k=8, m=2, s_table={}, indices=[2]).entry(2)
    assert (poly.regime, poly.M_exponent) == ("poly", 4)

    entries = wi_envelope(n=3, k=18, m=3, s_table={1: 4, 2: 1, 3: 9}).entries
    assert [e.regime for e in entries] == ["poly", "constant", "log", "poly"]
    assert [e.c_exponent for e in entries] == [9, 7, 5, 3]


def test_diagonal_nf_envelope():
    env = wi_envelope(n=2, k=4, m=2, s_table={1: 0, 2: 0})
    assert env.entry(0).regime == "constant"
    assert env.entry(0).c_exponent == 4
    assert env.entry(1).regime == "constant"
    assert env.entry(2).regime == "log"
    assert diagonal_nf_c_exponent(2, 2) == 3
    with pytest.raises(InvalidArgument):
        diagonal_nf_c_exponent(2, 1)


def test_golden_dmt_lines_are_exact():
    line0 = dmt_ml_bound(8, 4, 8, 2)
    line2 = dmt_ml_bound(6, 0, 8, 2)
    assert (line0.segments[0].slope, line0.segments[0].intercept) == (Fraction(-5), Fraction(8))
    assert (line2.segments[0].slope, line2.segments[0].intercept) == (Fraction(-3), Fraction(6))


def test_golden_envelope_is_optimal_interpolation():
    env = dmt_envelope([dmt_ml_bound(8, 4, 8, 2, r_max=2), dmt_ml_bound(6, 0, 8, 2, r_max=2)])
    assert [env.evaluate_exact(r) for r in (0, 1, 2)] == [8, 3, 0]
    assert env.breakpoints() == [Fraction(1)]
    assert env.is_nonincreasing()
    # piecewise linear interpolation of (r, (4 - r)(2 - r)) at r = 0, 1, 2
    for j in range(201):
        r = Fraction(j, 100)
        expected = 8 - 5 * r if r <= 1 else 3 - 3 * (r - 1)
        assert env.evaluate_exact(r) == expected
        assert env.evaluate(float(r)) == pytest.approx(float(expected), abs=1e-12)


def test_dmt_from_golden_envelope():
    env = wi_envelope(n=2, k=8, m=4, s_table={4: 4, 2: 4}, indices=[0, 2, 4])
    curve = dmt_from_envelope(env, T=2, r_max=2)
    assert [curve.evaluate_exact(r) for r in (0, 1, 2)] == [8, 3, 0]


def test_naive_bounds():
    golden = dmt_naive_bound(4, 8, 2)
    assert golden.segments[0].slope == Fraction(-2)
    assert golden.r_max == 2
    # diagonal code: (n_t n_r - 1)(1 - r)
    for n_r, a in [(2, 3), (4, 7)]:
        curve = dmt_naive_bound(a, 4, 2)
        assert curve.segments[0].intercept == n_r * 2 - 1
        assert curve.segments[0].slope == -(n_r * 2 - 1)
    assert dmt_ml_bound(5, 0, 8, 2) == dmt_naive_bound(5, 8, 2)


def test_envelope_algebra():
    a = dmt_ml_bound(8, 4, 8, 2, r_max=2)
    b = dmt_ml_bound(6, 0, 8, 2, r_max=2)
    ab = dmt_envelope([a, b])
    assert ab == dmt_envelope([b, a])
    assert dmt_envelope([ab, a]) == ab
    assert dmt_envelope([ab]) == ab
    with pytest.raises(InvalidArgument):
        dmt_envelope([])
    with pytest.raises(InvalidArgument):
        DmtCurve([], 1)


def test_vector_evaluation_clips_at_zero():
    curve = dmt_ml_bound(8, 4, 8, 2)
    grid = np.array([0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(curve.evaluate(grid), [8.0, 5.5, 3.0, 0.5, 0.0])
    assert curve.r_max == Fraction(8, 5)
    assert curve.active_segment(2) is None
    df = curve.to_frame(grid)
    assert list(df.columns) == ["r", "d"]


def test_segment_zero_crossing():
    assert DmtSegment(Fraction(-3), Fraction(6)).zero_crossing() == 2
    assert DmtSegment(Fraction(0), Fraction(6)).zero_crossing() is None


def test_full_multiplexing():
    curve = full_multiplexing_check(n=2, T=2, n_r=6, k=8)
    assert curve is not None
    assert curve.segments[0].slope == -3 and curve.segments[0].intercept == 6
    assert curve.r_max == 2
    assert full_multiplexing_check(n=2, T=2, n_r=5, k=8) is None
    assert full_multiplexing_check(n=2, T=2, n_r=6, k=6) is None


def test_error_probability_bounds():
    assert pe_upper_bound(1.0, 8, 4, 1.0, 10.0) == pytest.approx(1e-8)
    assert pe_upper_bound(1.0, 4, 0, 4.0, 10.0) == pytest.approx(256e-4)
    assert pe_upper_bound(1.0, 4, 0, 4.0, 100.0) < pe_upper_bound(1.0, 4, 0, 4.0, 10.0)
    assert scheme_pe_bound(1.0, 8, 4, 0.0, 2, 8, 10.0) == pytest.approx(1.6e-7)
    with pytest.raises(InvalidArgument):
        pe_upper_bound(1.0, 4, 0, 1.0, 0.0)


def test_snr_thresholds():
    exponent, value = snr_threshold(8, 4, 4.0)
    assert exponent == Fraction(3, 2)
    assert value == pytest.approx(8.0)
    assert snr_threshold(4, 0)[0] == 1
    with pytest.raises(InvalidArgument):
        snr_threshold(0, 1)


lines_strategy = st.lists(
    st.tuples(st.integers(1, 12), st.integers(0, 8)), min_size=1, max_size=5,
)


@settings(max_examples=60, deadline=None, derandomize=True)
@given(lines=lines_strategy, order=st.randoms(use_true_random=False))
def test_envelope_is_order_free_pointwise_max(lines, order):
    curves = [dmt_ml_bound(a, b, 8, 2, r_max=2) for a, b in lines]
    env = dmt_envelope(curves)
    shuffled = list(curves)
    order.shuffle(shuffled)
    assert dmt_envelope(shuffled) == env
    assert dmt_envelope([env, curves[0]]) == env
    for j in range(0, 41):
        r = Fraction(j, 20)
        assert env.evaluate_exact(r) == max(c.evaluate_exact(r) for c in curves)
    assert env.is_nonincreasing()
