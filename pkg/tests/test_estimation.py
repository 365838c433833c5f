import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from histlogit import (Coefficients, Dataset, FitConfig, FitResult, aggregate_mixed,
                       cross_validate, fit, mmse)
from histlogit.estimation import default_penalty_grid
from histlogit.simulation import draw_labels

from conftest import random_dataset


def test_symmetric_intercept_near_zero():
    rng = np.random.default_rng(5)
    x = rng.normal(size=5000)
    y = np.where(rng.uniform(size=5000) < expit(1.3 * x), 1, 2)
    # mirrored copy of every row makes the sample exactly symmetric about 0
    data = Dataset(np.r_[y, 3 - y], np.r_[x, -x][:, None], 2)
    res = fit(FitConfig(family="M"), data)
    assert abs(res.coefficients.beta[0, 0]) < 1e-3


def test_consistency_multinomial():
    rng = np.random.default_rng(8)
    B = rng.uniform(-1, 1, size=(3, 3))
    B[:, -1] = 0
    truth = Coefficients(B, "multinomial")
    X = rng.normal(size=(50_000, 2))
    y = draw_labels(truth, X, rng)
    res = fit(FitConfig(family="M"), Dataset(y, X, 3))
    assert res.converged
    assert np.max(np.abs(res.coefficients.beta - B)) < 0.1


@pytest.mark.parametrize("model", ["M", "O"])
def test_mixture_all_retained_equals_classical(rng, model):
    data = random_dataset(rng, N=300, D=2, K=3)
    ordered = data.subset(np.argsort(data.y, kind="stable"))
    a = fit(FitConfig(family=model), ordered).coefficients.beta
    b = fit(FitConfig(family="M" + model), aggregate_mixed(data, 4, data.N + 1)).coefficients.beta
    assert np.array_equal(a, b)


@given(st.integers(0, 10_000), st.sampled_from(["M", "O"]))
@settings(max_examples=15)
def test_gradient_small_at_convergence(seed, model):
    data = random_dataset(np.random.default_rng(seed), N=200, D=2, K=3)
    res = fit(FitConfig(family=model), data)
    assert res.converged
    assert res.grad_norm < 1e-6


@pytest.mark.parametrize("model", ["M", "O"])
def test_restarts_agree(rng, model):
    data = random_dataset(rng, N=400, D=2, K=3)
    cols = 2 if model == "M" else 3
    base = fit(FitConfig(family=model), data).coefficients.beta
    for _ in range(5):
        theta0 = rng.normal(scale=2, size=3 * cols)
        other = fit(FitConfig(family=model), data, theta0=theta0).coefficients.beta
        assert np.max(np.abs(other - base)) < 1e-5


def test_determinism(rng):
    data = random_dataset(rng, N=300, D=3, K=3)
    for fam in ("M", "SO", "composite"):
        cfg = FitConfig(family=fam, bins=4, seed=3)
        a = fit(cfg, data).coefficients.beta
        b = fit(cfg, data).coefficients.beta
        assert a.tobytes() == b.tobytes()


def test_non_convergence_is_flagged(rng):
    data = random_dataset(rng, N=300, D=3, K=3)
    res = fit(FitConfig(family="M", max_iter=1, polish=False), data)
    assert not res.converged


def _signal_data(seed=2, N=600):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(N, 2))
    y = np.where(rng.uniform(size=N) < expit(2.5 * X[:, 0] - 2 * X[:, 1]), 1, 2)
    return Dataset(y, X, 2)


def test_cv_zero_grid_equals_fit():
    data = _signal_data()
    cfg = FitConfig(family="M", penalty_grid=(0.0,), cv_folds=4)
    a = cross_validate(cfg, data)
    b = fit(cfg, data)
    assert np.array_equal(a.coefficients.beta, b.coefficients.beta)
    assert a.penalty == 0.0


def test_cv_huge_penalty_intercept_only():
    data = _signal_data()
    res = cross_validate(FitConfig(family="O", penalty_grid=(1e6,), cv_folds=3), data)
    assert np.all(res.coefficients.beta[1:] == 0)


def test_cv_selects_zero_on_strong_signal():
    res = cross_validate(FitConfig(family="M", penalty_grid=(0.0, 1e6), cv_folds=5), _signal_data())
    assert res.penalty == 0.0
    assert res.cv_scores[0.0] > res.cv_scores[1e6]


def test_default_grid():
    g = default_penalty_grid()
    assert len(g) == 25 and g[0] == pytest.approx(1e-4) and g[-1] == pytest.approx(10.0)


def test_mmse_examples():
    t = Coefficients(np.array([[1.0, 0.0], [2.0, 0.0]]), "multinomial")
    assert mmse([t, t], t) == 0.0
    off = Coefficients(np.array([[1.0, 0.0], [3.0, 0.0]]), "multinomial")
    assert mmse([off], t) == 1.0
    rng = np.random.default_rng(0)
    ests = [t.beta + np.c_[rng.normal(size=2), np.zeros(2)] for _ in range(10)]
    expected = sum(float(((e - t.beta) ** 2).sum()) for e in ests) / 10
    assert mmse(ests, t) == pytest.approx(expected, rel=1e-14)
    with pytest.raises(ValueError):
        mmse([np.zeros((3, 2))], t)


def test_config_and_result_json(rng):
    cfg = FitConfig(family="SO", bins=[3, 4], penalty=0.01)
    assert FitConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError, match="bogus"):
        FitConfig.from_dict({"bogus": 1})
    res = fit(FitConfig(family="M"), random_dataset(rng, N=100, D=2, K=2))
    back = FitResult.from_dict(json.loads(json.dumps(res.to_dict())))
    assert np.array_equal(back.coefficients.beta, res.coefficients.beta)
    assert back.converged == res.converged
