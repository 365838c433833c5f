import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from histlogit import Coefficients, class_probability, predict, prediction_accuracy
from histlogit.model import probabilities


def _coef(B, model):
    return Coefficients(np.asarray(B, dtype=float), model)


@given(st.integers(2, 5), st.integers(1, 4), st.integers(0, 1000))
def test_zero_beta_probabilities(K, D, seed):
    x = np.random.default_rng(seed).normal(size=D)
    m = Coefficients.zeros(D, K, "multinomial")
    o = Coefficients.zeros(D, K, "ovr")
    for k in range(1, K + 1):
        assert math.isclose(class_probability(m, x, k), 1 / K, rel_tol=1e-14)
        assert class_probability(o, x, k) == 0.5


def test_binary_multinomial_value():
    beta = _coef([[0.0, 0.0], [1.0, 0.0]], "multinomial")
    assert math.isclose(class_probability(beta, [1.0], 1), math.e / (1 + math.e), rel_tol=1e-14)
    assert math.isclose(class_probability(beta, [1.0], 1), 0.731059, abs_tol=1e-6)


def test_reference_column_enforced():
    with pytest.raises(ValueError):
        _coef([[0.0, 1.0], [1.0, 0.0]], "multinomial")


def test_predict_tie_break_and_scale():
    X = np.random.default_rng(0).normal(size=(20, 3))
    assert np.all(predict(Coefficients.zeros(3, 4, "multinomial"), X) == 1)
    B = np.random.default_rng(1).normal(size=(4, 2))
    B[:, 1] = 0
    p1 = predict(_coef(B, "multinomial"), X)
    p2 = predict(_coef(3.7 * B, "multinomial"), X)
    assert np.array_equal(p1, p2)


@given(st.sampled_from(["multinomial", "ovr"]), st.integers(0, 1000))
def test_predict_brute_force(model, seed):
    rng = np.random.default_rng(seed)
    K, D = 4, 3
    B = rng.normal(size=(D + 1, K))
    if model == "multinomial":
        B[:, -1] = 0
    X = rng.normal(size=(100, D))
    expected = []
    for x in X:
        eta = B[0] + x @ B[1:]
        p = np.exp(eta) / np.exp(eta).sum() if model == "multinomial" else 1 / (1 + np.exp(-eta))
        expected.append(int(np.argmax(p)) + 1)
    assert predict(_coef(B, model), X).tolist() == expected


def test_accuracy_examples():
    assert prediction_accuracy([1, 2, 3], [1, 2, 3]).overall == 1.0
    assert prediction_accuracy([2, 1], [1, 2]).overall == 0.0
    acc = prediction_accuracy([1, 2, 2, 1], [1, 2, 1, 1])
    assert acc.overall == 0.75
    assert acc.per_class[1] == pytest.approx(2 / 3) and acc.per_class[2] == 1.0
    with pytest.raises(ValueError):
        prediction_accuracy([1, 2], [1])


@given(st.integers(2, 6), st.integers(0, 10_000))
def test_multinomial_sums_to_one(K, seed):
    rng = np.random.default_rng(seed)
    B = rng.normal(scale=5, size=(4, K))
    B[:, -1] = 0
    P = probabilities(_coef(B, "multinomial"), rng.normal(size=(50, 3)))
    assert np.all(P > 0)
    assert np.allclose(P.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("model", ["multinomial", "ovr"])
def test_stable_for_large_predictors(model):
    B = np.array([[0.0, 0.0], [700.0, 0.0]])
    if model == "ovr":
        B[:, 1] = [0.0, -700.0]
    P = probabilities(_coef(B, model), np.array([[1.0], [-1.0]]))
    assert np.all(np.isfinite(P))
    assert P[0, 0] == pytest.approx(1.0) and P[1, 0] == pytest.approx(0.0, abs=1e-300)


@given(st.integers(0, 10_000))
def test_binary_multinomial_equals_ovr(seed):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=3)
    x = rng.normal(size=2)
    m = _coef(np.column_stack([b, np.zeros(3)]), "multinomial")
    o = _coef(np.column_stack([b, np.zeros(3)]), "ovr")
    assert class_probability(m, x, 1) == pytest.approx(class_probability(o, x, 1), rel=1e-13)


def test_json_round_trip():
    c = _coef([[1.0, -2.0], [0.5, 0.25]], "ovr")
    d = c.to_dict()
    assert d["model"] == "ovr" and d["K"] == 2 and d["D"] == 1
    assert np.array_equal(Coefficients.from_dict(d).beta, c.beta)
