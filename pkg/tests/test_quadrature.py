import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit

from histlogit import Rectangle, integrate_bin
from histlogit.quadrature import log_integral_logistic


def logistic_1d(b0, b1):
    return lambda p: expit(b0 + b1 * p[:, 0])


def test_constant_integrand_exact():
    r = Rectangle([0.3], [2.8])
    assert integrate_bin(lambda p: np.full(len(p), 0.5), r, 2) == pytest.approx(1.25, rel=1e-15)


def test_logistic_unit_interval():
    val = integrate_bin(logistic_1d(0.0, 1.0), Rectangle([0.0], [1.0]), 32)
    assert val == pytest.approx(math.log((1 + math.e) / 2), rel=1e-13)
    assert val == pytest.approx(0.620115, abs=1e-6)


def test_polynomial_exactness():
    r = Rectangle([-1.0, 0.5], [2.0, 1.5])
    f = lambda p: p[:, 0] ** 3 * p[:, 1] ** 3 + p[:, 0] ** 2
    exact = (2 ** 4 - 1) / 4 * (1.5 ** 4 - 0.5 ** 4) / 4 + (8 + 1) / 3 * 1.0
    assert integrate_bin(f, r, 2) == pytest.approx(exact, rel=1e-13)


@given(st.integers(0, 10_000))
def test_2d_matches_midpoint_oracle(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=3)
    lo = rng.uniform(-2, 0, size=2)
    hi = lo + rng.uniform(0.2, 2, size=2)
    f = lambda p: expit(b[0] + p @ b[1:])
    n = 400
    xs = [lo[d] + (np.arange(n) + 0.5) * (hi[d] - lo[d]) / n for d in range(2)]
    gx, gy = np.meshgrid(*xs, indexing="ij")
    oracle = f(np.column_stack([gx.ravel(), gy.ravel()])).mean() * np.prod(hi - lo)
    assert integrate_bin(f, Rectangle(lo, hi), 8) == pytest.approx(oracle, rel=1e-4)


def test_refinement_converges():
    f = lambda p: expit(2.0 - 3.0 * p[:, 0] + 1.5 * p[:, 1])
    r = Rectangle([-1.0, -1.0], [2.0, 1.0])
    est = [integrate_bin(f, r, n) for n in (2, 4, 8, 16)]
    diffs = np.abs(np.diff(est))
    assert np.all(diffs[1:] < diffs[:-1])


@given(st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_additivity(seed, frac):
    b = np.random.default_rng(seed).normal(scale=2, size=3)
    f = lambda p: expit(b[0] + p @ b[1:])
    lo, hi = np.array([-1.0, 0.0]), np.array([1.0, 2.0])
    cut = lo[0] + frac * (hi[0] - lo[0])
    whole = integrate_bin(f, Rectangle(lo, hi), 40)
    parts = (integrate_bin(f, Rectangle(lo, [cut, hi[1]]), 40)
             + integrate_bin(f, Rectangle([cut, lo[1]], hi), 40))
    assert whole == pytest.approx(parts, abs=1e-8)


@given(st.integers(0, 10_000))
def test_probability_integral_within_volume(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(scale=3, size=3)
    r = Rectangle([-1.0, -2.0], [0.5, 1.0])
    v = integrate_bin(lambda p: expit(b[0] + p @ b[1:]), r, 2)
    assert 0 < v < r.volume


def test_overflow_and_bad_rectangles():
    with pytest.raises(FloatingPointError, match="integrand overflow"):
        integrate_bin(lambda p: np.full(len(p), np.inf), Rectangle([0.0], [1.0]))
    with pytest.raises(ValueError):
        Rectangle([1.0], [1.0])
    with pytest.raises(ValueError):
        Rectangle([0.0], [np.inf])


def _mp_log_integral(a, b, lo, hi):
    mpmath.mp.dps = 50
    f = lambda x: 1 / (1 + mpmath.exp(-(a + b * x)))
    return float(mpmath.log(mpmath.quad(f, [lo, hi])))


@given(st.floats(-30, 30), st.floats(-40, 40), st.floats(-3, 3), st.floats(1e-6, 4))
def test_closed_form_matches_high_precision(a, b, lo, width):
    hi = lo + width
    val, da, db = log_integral_logistic(a, b, lo, hi)
    assert float(val) == pytest.approx(_mp_log_integral(a, b, lo, hi), rel=1e-9, abs=1e-11)
    h = 1e-6
    fa = (log_integral_logistic(a + h, b, lo, hi)[0] - log_integral_logistic(a - h, b, lo, hi)[0]) / (2 * h)
    fb = (log_integral_logistic(a, b + h, lo, hi)[0] - log_integral_logistic(a, b - h, lo, hi)[0]) / (2 * h)
    assert float(da) == pytest.approx(float(fa), rel=1e-5, abs=1e-7)
    assert float(db) == pytest.approx(float(fb), rel=1e-5, abs=1e-7)


def test_zero_slope_limit():
    val, _, _ = log_integral_logistic(0.3, 0.0, -1.0, 2.0)
    assert float(val) == pytest.approx(math.log(3 * expit(0.3)), rel=1e-14)
    near, _, _ = log_integral_logistic(0.3, 1e-12, -1.0, 2.0)
    assert float(near) == pytest.approx(float(val), rel=1e-11)
