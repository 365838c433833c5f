import numpy as np
import pytest
from hypothesis import given, strategies as st

from histlogit import (BinGrid, Dataset, FitConfig, aggregate_fixed, aggregate_mixed,
                       detect_separation, fit)
from histlogit.separation import VertexBudgetError, check_witness


def _complete():
    return Dataset([1, 1, 2, 2], [[-2.0], [-1.0], [1.0], [2.0]], 2)


def _quasi():
    return Dataset([1, 1, 1, 2, 2, 2], [[-2.0], [-1.0], [0.0], [0.0], [1.0], [2.0]], 2)


def _overlap(n=200, seed=0):
    rng = np.random.default_rng(seed)
    y = np.r_[np.ones(n // 2), 2 * np.ones(n // 2)]
    X = rng.normal(size=(n, 2)) + np.where(y == 1, -0.5, 0.5)[:, None]
    return Dataset(y, X, 2)


def _points(data):
    return [data.class_rows(k) for k in range(1, data.K + 1)]


def test_complete():
    r = detect_separation(_complete())
    assert r.status == "complete"
    w = np.asarray(r.witness[2])
    assert w[0] == pytest.approx(0.0, abs=1e-9) and w[1] > 0
    assert check_witness(_points(_complete()), w, 2, strict=True)
    assert check_witness(_points(_complete()), r.witness[1], 1, strict=True)


def test_quasi():
    r = detect_separation(_quasi())
    assert r.status == "quasi-complete"
    for k, w in r.witness.items():
        assert check_witness(_points(_quasi()), w, k, strict=False)
        assert not check_witness(_points(_quasi()), w, k, strict=True)


def test_none_and_mle_exists():
    data = _overlap()
    assert detect_separation(data).status == "none"
    assert detect_separation(data, "multinomial").status == "none"
    res = fit(FitConfig(family="M"), data)
    assert res.converged and res.grad_norm < 1e-6 * data.N
    assert np.max(np.abs(res.coefficients.beta)) < 10


@pytest.mark.parametrize("maker,status", [(_complete, "complete"), (_quasi, "quasi-complete"),
                                          (_overlap, "none")])
def test_multinomial_scheme(maker, status):
    r = detect_separation(maker(), "multinomial")
    assert r.status == status
    if status != "none":
        assert set(r.witness) == {(1, 2), (2, 1)}


def test_histogram_blurring_counterexample():
    data = Dataset([1, 1, 2, 2], [[0.0], [0.4], [0.6], [1.0]], 2)
    assert detect_separation(data).status == "complete"
    grid = BinGrid((np.array([-1.0, 0.3, 0.7, 1.5]),))
    hists = aggregate_fixed(data, None, grid=grid)
    assert detect_separation(hists).status == "none"


def test_separated_fit_refused():
    with pytest.raises(ArithmeticError, match="MLE does not exist"):
        fit(FitConfig(family="M"), _complete())


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_histogram_separation_implies_point_separation(seed, B):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 12))
    X = rng.normal(size=(n, 2))
    y = np.r_[1, 2, rng.integers(1, 3, size=n - 2)]
    shift = rng.uniform(0, 4)
    X[y == 2, 0] += shift
    data = Dataset(y, X, 2)
    hist = detect_separation(aggregate_fixed(data, B, shared_grid=True))
    point = detect_separation(data)
    if hist.separated:
        assert point.separated
    for k, w in point.witness.items():
        assert check_witness(_points(data), w, k, strict=point.per_class[k] == "complete")


def test_mixed_aggregates_use_vertices_and_points():
    data = _overlap(60, seed=3)
    r = detect_separation(aggregate_mixed(data, 3, 5))
    assert r.status == "none"
    sep = Dataset([1, 1, 1, 2, 2, 2], [[0.0], [0.1], [0.2], [5.0], [5.1], [9.0]], 2)
    assert detect_separation(aggregate_mixed(sep, 2, 2)).status == "complete"


def test_vertex_budget():
    rng = np.random.default_rng(0)
    data = Dataset(rng.integers(1, 3, size=400), rng.normal(size=(400, 6)), 2)
    with pytest.raises(VertexBudgetError, match="bin vertex budget exceeded"):
        detect_separation(aggregate_fixed(data, 3), vertex_budget=100)


def test_report_json():
    d = detect_separation(_complete()).to_dict()
    assert d["schema_version"] == 1 and d["status"] == "complete"
    assert set(d["per_class"]) == {"1", "2"}
