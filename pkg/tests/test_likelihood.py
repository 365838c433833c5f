import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import expit, logsumexp

from histlogit import (BinGrid, Dataset, FitConfig, Histogram, LikelihoodSpec, aggregate_fixed,
                       aggregate_mixed, fit, gradient, loglik_classical, loglik_mixture,
                       loglik_symbolic)
from histlogit.likelihood import FAMILIES

from conftest import random_beta, random_dataset

GL_X, GL_W = np.polynomial.legendre.leggauss(64)


def _row_oracle(B, data, model):
    total = 0.0
    for x, y in zip(data.X, data.y):
        eta = B[0] + x @ B[1:]
        if model == "M":
            total += eta[y - 1] - logsumexp(eta)
        else:
            for k in range(data.K):
                total += np.log(expit(eta[k])) if k == y - 1 else np.log(expit(-eta[k]))
    return total


def _gl_1d(f, lo, hi):
    x = 0.5 * (hi - lo) * GL_X + 0.5 * (hi + lo)
    return 0.5 * (hi - lo) * np.sum(GL_W * f(x))


def _so_1d_oracle(B, hists):
    """Histogram OvR log-likelihood for D=1 by 64-node quadrature of each factor."""
    total = 0.0
    K = len(hists)
    for h in hists:
        lo, hi = h.bounds()
        for a, b, s in zip(lo[:, 0], hi[:, 0], h.counts):
            for k in range(K):
                sign = 1.0 if k == h.label - 1 else -1.0
                total += s * np.log(_gl_1d(lambda x: expit(sign * (B[0, k] + B[1, k] * x)), a, b))
    return total


def test_zero_beta_classical(rng):
    data = random_dataset(rng, N=77, D=2, K=4)
    assert loglik_classical(np.zeros((3, 4)), data, "M") == pytest.approx(77 * np.log(1 / 4))
    assert loglik_classical(np.zeros((3, 4)), data, "O") == pytest.approx(77 * 4 * np.log(0.5))


@pytest.mark.parametrize("model", ["M", "O"])
def test_classical_row_oracle(rng, model):
    data = random_dataset(rng, N=50, D=2, K=3)
    B = random_beta(rng, 2, 3, model)
    assert loglik_classical(B, data, model) == pytest.approx(_row_oracle(B, data, model), rel=1e-12)


def test_zero_beta_symbolic_volume(rng):
    data = random_dataset(rng, N=90, D=2, K=3)
    hists = aggregate_fixed(data, 4)
    logvol = sum(float(np.sum(h.counts * np.sum(np.log(h.bounds()[1] - h.bounds()[0]), axis=1)))
                 for h in hists)
    assert loglik_symbolic(np.zeros((3, 3)), hists, "SM") == pytest.approx(
        90 * np.log(1 / 3) + logvol, rel=1e-12)


@pytest.mark.parametrize("model", ["SM", "SO"])
def test_shrinking_bins_approach_classical(rng, model):
    data = random_dataset(rng, N=40, D=2, K=3)
    B = random_beta(rng, 2, 3, model[1])
    classical = loglik_classical(B, data, model[1])
    gaps = []
    for w in (1e-1, 1e-2, 1e-3):
        hists = []
        for k in range(1, 4):
            pts = data.class_rows(k)
            lo, hi = pts - w / 2, pts + w / 2
            # one single-point bin per row, expressed as a histogram over its own grid
            for p_lo, p_hi in zip(lo, hi):
                g = BinGrid(tuple(np.array([a, b]) for a, b in zip(p_lo, p_hi)))
                hists.append((k, g))
        total = 0.0
        for k, g in hists:
            hs = [Histogram(g, np.zeros((1 if j == k else 0, 2)), [1] if j == k else [], j)
                  for j in range(1, 4)]
            # SO has one integral per class factor, each carrying the volume
            factors = 1 if model == "SM" else 3
            total += loglik_symbolic(B, hs, model) - factors * 2 * np.log(w)
        gaps.append(abs(total - classical))
    assert gaps[2] < gaps[1] < gaps[0]
    assert gaps[2] < 1e-3 * abs(classical)


@given(st.integers(2, 4), st.integers(0, 10_000))
def test_so_univariate_matches_quadrature(K, seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, N=60, D=1, K=K)
    hists = aggregate_fixed(data, 5)
    B = rng.normal(scale=2, size=(2, K))
    assert loglik_symbolic(B, hists, "SO") == pytest.approx(_so_1d_oracle(B, hists), rel=1e-9)
    # the quadrature path agrees at high node count as well
    assert loglik_symbolic(B, hists, "SO", nodes_per_dim=40, exact_univariate=False) == \
        pytest.approx(_so_1d_oracle(B, hists), rel=1e-9)


@pytest.mark.parametrize("fam", [("MM", "SM", "M"), ("MO", "SO", "O")])
def test_mixture_reductions(rng, fam):
    mixed_fam, sym_fam, cls_fam = fam
    data = random_dataset(rng, N=120, D=2, K=3)
    B = random_beta(rng, 2, 3, cls_fam)
    hists = aggregate_fixed(data, 4)
    assert loglik_mixture(B, aggregate_mixed(data, 4, 1), mixed_fam) == pytest.approx(
        loglik_symbolic(B, hists, sym_fam), rel=1e-12)
    assert loglik_mixture(B, aggregate_mixed(data, 4, data.N + 1), mixed_fam) == pytest.approx(
        loglik_classical(B, data, cls_fam), rel=1e-12)


@pytest.mark.parametrize("fam", [("MM", "SM", "M"), ("MO", "SO", "O")])
def test_mixture_split_and_sum(rng, fam):
    mixed_fam, sym_fam, cls_fam = fam
    data = random_dataset(rng, N=300, D=2, K=3)
    B = random_beta(rng, 2, 3, cls_fam)
    mixed = aggregate_mixed(data, 3, 4)
    kept = [Histogram(m.grid, m.index, m.counts, m.label) for m in mixed]
    rows = np.vstack([m.retained for m in mixed])
    labels = np.concatenate([np.full(m.retained.shape[0], m.label) for m in mixed])
    assert 0 < rows.shape[0] < data.N
    point = _row_oracle(B, Dataset(labels, rows, 3), cls_fam)
    assert loglik_mixture(B, mixed, mixed_fam) == pytest.approx(
        loglik_symbolic(B, kept, sym_fam) + point, rel=1e-11)


def _spec(family, data, bins=3):
    if family in ("M", "O"):
        return LikelihoodSpec(family, data)
    if family in ("SM", "SO"):
        return LikelihoodSpec(family, aggregate_fixed(data, bins))
    return LikelihoodSpec(family, aggregate_mixed(data, bins, 3))


def _fd(spec, B, h=1e-5):
    G = np.zeros_like(B)
    for idx in np.ndindex(B.shape):
        E = np.zeros_like(B)
        E[idx] = h
        G[idx] = (spec(B + E)[0] - spec(B - E)[0]) / (2 * h)
    return G


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("D", [1, 2])
def test_gradient_finite_differences(rng, family, D):
    data = random_dataset(rng, N=150, D=D, K=3)
    spec = _spec(family, data)
    B = random_beta(rng, D, 3, family[-1])
    G = gradient(B, spec)
    F = _fd(spec, B)
    if family[-1] == "M":
        assert np.all(G[:, -1] == 0)
        F[:, -1] = 0
    assert np.max(np.abs(G - F)) / max(1.0, np.max(np.abs(F))) < 1e-5


def test_symmetric_intercept_gradient():
    x = np.linspace(-2, 2, 40)
    data = Dataset(np.r_[np.ones(40), 2 * np.ones(40)], np.r_[x, x], 2)
    G = gradient(np.zeros((2, 2)), LikelihoodSpec("M", data))
    assert G[0, 0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("family", FAMILIES)
def test_ordering_invariance(rng, family):
    data = random_dataset(rng, N=100, D=2, K=3)
    perm = rng.permutation(data.N)
    shuffled = data.subset(perm)
    B = random_beta(rng, 2, 3, family[-1])
    assert _spec(family, data)(B)[0] == pytest.approx(_spec(family, shuffled)(B)[0], rel=1e-12)
    if family in ("SM", "SO"):
        hists = aggregate_fixed(data, 3)
        rev = [Histogram(h.grid, h.index[::-1], h.counts[::-1], h.label) for h in hists[::-1]]
        assert loglik_symbolic(B, rev, family) == pytest.approx(
            loglik_symbolic(B, hists, family), rel=1e-12)


def test_family_data_mismatch(rng):
    data = random_dataset(rng, N=30, D=1, K=2)
    with pytest.raises(TypeError):
        LikelihoodSpec("SM", data)
    with pytest.raises(TypeError):
        LikelihoodSpec("M", aggregate_fixed(data, 3))
    with pytest.raises(TypeError):
        LikelihoodSpec("MM", aggregate_fixed(data, 3))


def test_symbolic_argmax_approaches_classical():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(4000, 1))
    p = expit(0.3 + 1.2 * X[:, 0])
    y = np.where(rng.uniform(size=4000) < p, 1, 2)
    data = Dataset(y, X, 2)
    ref = fit(FitConfig(family="M"), data).coefficients.beta
    gaps = []
    for B in (8, 16, 32, 64, 128):
        est = fit(FitConfig(family="SM", bins=B, nodes_per_dim=4), aggregate_fixed(data, B))
        gaps.append(np.max(np.abs(est.coefficients.beta - ref)))
    assert gaps[-1] < gaps[0]
