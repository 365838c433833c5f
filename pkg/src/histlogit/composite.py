"""Approximate composite likelihoods for the one-vs-rest model.

Each term of a j-wise composite likelihood sees only the covariates in one
subset ``i`` of size ``j``. The omitted covariates are modelled as a linear
function of the included ones plus Gaussian noise,
``X_o = gamma + alpha^T X_i + eps`` with ``Cov(eps) = Lambda``, which turns
the full coefficients into attenuated, shifted coefficients for the subset:

    numerator   = beta_i + (gamma @ beta_o, alpha @ beta_o)
    denominator = sqrt(1 + beta_o^T Lambda beta_o / C),   C = pi^2 / 3

The ``"scaled"`` variance form multiplies by ``C`` instead of dividing.
``gamma`` keeps ``eps`` mean-zero for uncentred covariates; it is zero when
the statistics come from a covariance matrix alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .aggregation import Histogram, QuantileHistogram, subsets
from .dataset import Dataset
from .likelihood import (Classical, LikelihoodError, Sum, SymbolicExact1D, beta_array,
                         bins_evaluator)
from .quadrature import log_integral_logistic

LOGISTIC_VARIANCE = math.pi ** 2 / 3
KINDS = ("classical", "symbolic", "quantile", "naive")
VARIANCE_FORMS = ("divided", "scaled")


class CollinearError(ValueError):
    pass


@dataclass(frozen=True)
class SubsetStats:
    """Regression of the omitted covariates on one included subset."""

    subset: tuple
    omitted: tuple
    alpha: np.ndarray  # (j, m): column t regresses omitted[t] on the subset
    resid_cov: np.ndarray  # (m, m): diagonal lambda^2, off-diagonal cross terms
    offset: np.ndarray | None = None  # (m,): mean of X_o - alpha^T X_i

    def __post_init__(self):
        if self.offset is None:
            object.__setattr__(self, "offset", np.zeros(len(self.omitted)))

    @property
    def lambda2(self) -> np.ndarray:
        return np.diag(self.resid_cov).copy()

    def lambda_cross(self, a: int, b: int) -> float:
        """Residual covariance between omitted covariates ``a`` and ``b`` (0-based)."""
        return float(self.resid_cov[self.omitted.index(a), self.omitted.index(b)])


@dataclass(frozen=True)
class ProjectionStats:
    j: int
    D: int
    source: str  # "full-data" or "assumed-independent"
    per_subset: dict

    def __getitem__(self, subset) -> SubsetStats:
        return self.per_subset[tuple(subset)]

    def to_dict(self) -> dict:
        from .aggregation import SCHEMA_VERSION
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "projection_stats",
            "j": self.j,
            "D": self.D,
            "source": self.source,
            "subsets": [
                {"subset": list(s.subset), "omitted": list(s.omitted),
                 "alpha": s.alpha.tolist(), "resid_cov": s.resid_cov.tolist(),
                 "offset": s.offset.tolist()}
                for s in self.per_subset.values()
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionStats":
        for key in ("j", "D", "source", "subsets"):
            if key not in d:
                raise ValueError(f"projection stats JSON: missing field '{key}'")
        per = {}
        for entry in d["subsets"]:
            for key in ("subset", "omitted", "alpha", "resid_cov"):
                if key not in entry:
                    raise ValueError(f"projection stats JSON: missing field '{key}'")
            sub = tuple(entry["subset"])
            om = tuple(entry["omitted"])
            alpha = np.asarray(entry["alpha"], dtype=float).reshape(len(sub), len(om))
            lam = np.asarray(entry["resid_cov"], dtype=float).reshape(len(om), len(om))
            off = np.asarray(entry.get("offset", np.zeros(len(om))), dtype=float)
            per[sub] = SubsetStats(sub, om, alpha, lam, off.reshape(len(om)))
        return cls(int(d["j"]), int(d["D"]), d["source"], per)


def estimate_projection_stats(data_or_cov, j: int, independent: bool = False
                              ) -> ProjectionStats:
    """Projection statistics for every subset of size ``j``.

    Parameters
    ----------
    data_or_cov : Dataset or (D, D) array
        Pooled covariates (covariance computed over all classes) or their
        covariance matrix.
    independent : bool
        Ignore correlations: ``alpha = 0`` and ``Lambda = diag(Var)``.
    """
    if isinstance(data_or_cov, Dataset):
        S = np.atleast_2d(np.cov(data_or_cov.X, rowvar=False))
        mu = data_or_cov.X.mean(axis=0)
    else:
        S = np.atleast_2d(np.asarray(data_or_cov, dtype=float))
        mu = np.zeros(S.shape[0])
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("covariance must be a square matrix")
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise ValueError("covariance must be symmetric")
    D = S.shape[0]
    per = {}
    for sub in subsets(D, j):
        om = tuple(d for d in range(D) if d not in sub)
        si, so = list(sub), list(om)
        if independent:
            alpha = np.zeros((len(si), len(so)))
            lam = np.diag(np.diag(S)[so])
        else:
            Sii = S[np.ix_(si, si)]
            Sio = S[np.ix_(si, so)]
            try:
                L = np.linalg.cholesky(Sii)
            except np.linalg.LinAlgError:
                raise CollinearError("collinear covariates") from None
            if np.min(np.diag(L)) ** 2 <= 1e-12 * np.max(np.diag(Sii)):
                raise CollinearError("collinear covariates")
            alpha = np.linalg.solve(Sii, Sio)
            lam = S[np.ix_(so, so)] - Sio.T @ alpha
            lam = (lam + lam.T) / 2
        offset = mu[so] - alpha.T @ mu[si]
        per[sub] = SubsetStats(sub, om, alpha, lam, offset)
    return ProjectionStats(j, D, "assumed-independent" if independent else "full-data", per)


def _transform(B, sub: SubsetStats, variance_form: str, C: float):
    """Transformed coefficients plus what the chain rule needs."""
    rows_in = [0] + [1 + d for d in sub.subset]
    rows_out = [1 + d for d in sub.omitted]
    num = B[rows_in].copy()
    if not rows_out:
        return num, num, np.ones(B.shape[1]), None, rows_in, rows_out
    bo = B[rows_out]
    num[0] += sub.offset @ bo
    num[1:] += sub.alpha @ bo
    lam_bo = sub.resid_cov @ bo
    q = np.sum(bo * lam_bo, axis=0)
    scale = C if variance_form == "scaled" else 1.0 / C
    radicand = 1.0 + scale * q
    if np.any(radicand <= 0) or not np.all(np.isfinite(radicand)):
        raise ValueError("invalid variance inflation")
    den = np.sqrt(radicand)
    return num / den, num, den, scale * lam_bo, rows_in, rows_out


def transform_coefficients(beta, subset, stats: ProjectionStats | None,
                           variance_form: str = "divided",
                           C: float = LOGISTIC_VARIANCE) -> np.ndarray:
    """``(j+1, K)`` coefficients seen by the composite term for ``subset``.

    ``stats=None`` gives the untransformed sub-block (naive composite).
    """
    if variance_form not in VARIANCE_FORMS:
        raise ValueError(f"variance_form must be one of {VARIANCE_FORMS}")
    B = beta_array(beta, "ovr")
    subset = tuple(subset)
    if stats is None:
        return B[[0] + [1 + d for d in subset]].copy()
    if stats.D != B.shape[0] - 1:
        raise ValueError("projection stats cover a different number of covariates")
    return _transform(B, stats[subset], variance_form, C)[0]


class Composite:
    """Sum over subsets of a term evaluated at transformed coefficients.

    ``terms`` maps each subset to an evaluator of ``(j+1, K)`` coefficients.
    """

    def __init__(self, terms: dict, D: int, stats: ProjectionStats | None,
                 variance_form: str = "divided", C: float = LOGISTIC_VARIANCE):
        if variance_form not in VARIANCE_FORMS:
            raise ValueError(f"variance_form must be one of {VARIANCE_FORMS}")
        self.terms = terms
        self.D = D
        self.stats = stats
        self.variance_form = variance_form
        self.C = C
        if stats is not None:
            missing = [s for s in terms if s not in stats.per_subset]
            if missing or stats.D != D:
                raise ValueError("projection stats do not cover every subset")
        self._stack = None
        if all(len(s) == 1 and isinstance(t, SymbolicExact1D) for s, t in terms.items()):
            self._stack = _UnivariateStack(terms, D, stats, variance_form, C)

    @property
    def n_obs(self) -> float:
        return max(t.n_obs for t in self.terms.values())

    def __call__(self, B):
        if self._stack is not None:
            return self._stack(B)
        return self.loop(B)

    def loop(self, B):
        """Term-by-term evaluation (reference path)."""
        total = 0.0
        G = np.zeros_like(B)
        for subset, term in self.terms.items():
            if self.stats is None:
                rows = [0] + [1 + d for d in subset]
                v, g = term(B[rows])
                G[rows] += g
            else:
                bt, num, den, dq, rows_in, rows_out = _transform(
                    B, self.stats[subset], self.variance_form, self.C)
                v, g = term(bt)
                G[rows_in] += g / den
                if rows_out:
                    gnum = np.sum(g * num, axis=0) / den ** 3
                    st = self.stats[subset]
                    G[rows_out] += (st.alpha.T @ (g[1:] / den) + np.outer(st.offset, g[0] / den)
                                    - dq * gnum)
            total += v
        return total, G


class _UnivariateStack:
    """All univariate closed-form terms evaluated in one vectorised pass."""

    def __init__(self, terms: dict, D: int, stats, variance_form: str, C: float):
        order = sorted(terms)
        self.D = D
        parts = [terms[s] for s in order]
        self.margin = np.array([s[0] for s in order])
        self.sid = np.concatenate([np.full(t.labels.size, i) for i, t in enumerate(parts)])
        self.lo = np.vstack([t.lo for t in parts])
        self.hi = np.vstack([t.hi for t in parts])
        self.sgn = np.vstack([t.sgn for t in parts])
        self.counts = np.concatenate([t.counts for t in parts])[:, None]
        self.n_terms = len(parts)
        self._n_obs = max(t.n_obs for t in parts)
        T = self.n_terms
        self.A = np.zeros((T, D))
        self.G = np.zeros((T, D))
        self.L = np.zeros((T, D, D))
        if stats is not None:
            for i, s in enumerate(order):
                st = stats[s]
                om = list(st.omitted)
                self.A[i, om] = st.alpha[0]
                self.G[i, om] = st.offset
                self.L[i][np.ix_(om, om)] = st.resid_cov
        self.scale = C if variance_form == "scaled" else 1.0 / C

    @property
    def n_obs(self) -> float:
        return self._n_obs

    def __call__(self, B):
        Bs = B[1:]
        lam_b = np.einsum("tij,jk->tik", self.L, Bs)
        radicand = 1.0 + self.scale * np.einsum("ik,tik->tk", Bs, lam_b)
        if np.any(radicand <= 0) or not np.all(np.isfinite(radicand)):
            raise ValueError("invalid variance inflation")
        den = np.sqrt(radicand)
        num0 = B[0][None, :] + self.G @ Bs
        num1 = Bs[self.margin] + self.A @ Bs
        a, b = num0 / den, num1 / den
        val, da, db = log_integral_logistic(self.sgn * a[self.sid], self.sgn * b[self.sid],
                                            self.lo, self.hi)
        c = self.counts * self.sgn
        total = float(np.sum(self.counts * val))
        if not np.isfinite(total):
            raise LikelihoodError("bin integral underflow")
        K = B.shape[1]
        g0 = np.zeros((self.n_terms, K))
        g1 = np.zeros((self.n_terms, K))
        np.add.at(g0, self.sid, c * da)
        np.add.at(g1, self.sid, c * db)
        h0, h1 = g0 / den, g1 / den
        grad = np.zeros_like(B)
        grad[0] = h0.sum(axis=0)
        gs = self.A.T @ h1 + self.G.T @ h0
        np.add.at(gs, self.margin, h1)
        w = (h0 * num0 + h1 * num1) / radicand
        gs -= self.scale * np.einsum("tk,tik->ik", w, lam_b)
        grad[1:] = gs
        return total, grad


def _classical_terms(data: Dataset, j: int) -> dict:
    return {s: Classical(data.X[:, list(s)], data.y, data.K, "O") for s in subsets(data.D, j)}


def _symbolic_terms(marginals: dict, nodes_per_dim: int, exact_univariate: bool) -> dict:
    terms = {}
    for s, hists in marginals.items():
        los, his, labels, counts = [], [], [], []
        for h in hists:
            lo, hi = h.bounds()
            los.append(lo)
            his.append(hi)
            labels.append(np.full(h.counts.size, h.label, dtype=np.int64))
            counts.append(h.counts)
        terms[tuple(s)] = bins_evaluator(
            np.vstack(los), np.vstack(his), np.concatenate(labels), np.concatenate(counts),
            len(hists), "O", nodes_per_dim, exact_univariate)
    return terms


def _quantile_terms(qhists) -> dict:
    """One term per margin: closed-form bin part plus the cut points as data."""
    K = len(qhists)
    D = len(qhists[0])
    terms = {}
    for d in range(D):
        los, his, labels, counts, cut_x, cut_y = [], [], [], [], [], []
        for per_margin in qhists:
            q: QuantileHistogram = per_margin[d]
            los.append(q.edges[:-1])
            his.append(q.edges[1:])
            sym = q.symbolic_counts()
            counts.append(sym)
            labels.append(np.full(sym.size, q.label, dtype=np.int64))
            cut_x.append(q.cuts)
            cut_y.append(np.full(q.cuts.size, q.label, dtype=np.int64))
        counts = np.concatenate(counts)
        keep = counts > 0
        bins = SymbolicExact1D(np.concatenate(los)[keep], np.concatenate(his)[keep],
                               np.concatenate(labels)[keep], counts[keep], K)
        points = Classical(np.concatenate(cut_x)[:, None], np.concatenate(cut_y), K, "O")
        terms[(d,)] = Sum([bins, points])
    return terms


def _is_marginal_dict(data) -> bool:
    return isinstance(data, dict) and all(
        isinstance(v, (list, tuple)) and all(isinstance(h, Histogram) for h in v)
        for v in data.values())


def _is_quantile(data) -> bool:
    return (isinstance(data, (list, tuple)) and data
            and all(isinstance(m, (list, tuple)) and all(isinstance(q, QuantileHistogram) for q in m)
                    for m in data))


def build_composite(data, j: int, kind: str, stats: ProjectionStats | None = None,
                    variance_form: str = "divided", C: float = LOGISTIC_VARIANCE,
                    nodes_per_dim: int = 2, exact_univariate: bool = True) -> Composite:
    """Composite objective over ``data``.

    ``data`` is a Dataset (classical), a dict from subset to per-class
    histograms (symbolic), or per-class lists of per-margin quantile
    histograms (quantile). ``naive`` accepts any of these and skips the
    coefficient transform. ``stats=None`` with a transforming kind uses the
    identity transform, which only makes sense when ``j = D``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    if isinstance(data, Dataset):
        if kind not in ("classical", "naive"):
            raise ValueError(f"kind '{kind}' needs histogram data, got a Dataset")
        terms, D = _classical_terms(data, j), data.D
    elif _is_marginal_dict(data):
        if kind not in ("symbolic", "naive"):
            raise ValueError(f"kind '{kind}' does not take marginal histograms")
        sizes = {len(s) for s in data}
        if sizes != {j}:
            raise ValueError(f"marginal histograms have subset size {sorted(sizes)}, j={j}")
        D = max(max(s) for s in data) + 1
        if set(map(tuple, data)) != set(subsets(D, j)):
            raise ValueError(f"marginal histograms must cover every subset of size {j}")
        terms = _symbolic_terms(data, nodes_per_dim, exact_univariate)
    elif _is_quantile(data):
        if kind not in ("quantile", "naive"):
            raise ValueError(f"kind '{kind}' does not take quantile histograms")
        if j != 1:
            raise ValueError("quantile composite likelihood needs j=1")
        terms, D = _quantile_terms(data), len(data[0])
    else:
        raise TypeError("unsupported data for a composite likelihood")
    if kind == "naive":
        stats = None
    elif stats is None:
        if j != D:
            raise ValueError("projection stats are required when j < D")
    return Composite(terms, D, stats, variance_form, C)


def loglik_composite(beta, data, j: int, kind: str, stats: ProjectionStats | None = None,
                     **options) -> float:
    """j-wise composite OvR log-likelihood at full-dimensional ``beta``."""
    B = beta_array(beta, "ovr")
    obj = build_composite(data, j, kind, stats, **options)
    if B.shape[0] - 1 != obj.D:
        raise ValueError(f"beta has {B.shape[0] - 1} covariates, data has {obj.D}")
    return obj(B)[0]
