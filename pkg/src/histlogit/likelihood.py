"""Log-likelihoods and analytic gradients for point, histogram and mixed data.

Families:

=====  ===========================  ======================
name   model                        data
=====  ===========================  ======================
M      multinomial                  Dataset
O      one-vs-rest                  Dataset
SM     multinomial, symbolic        list of Histogram
SO     one-vs-rest, symbolic        list of Histogram
MM     multinomial, mixed           list of MixedAggregate
MO     one-vs-rest, mixed           list of MixedAggregate
=====  ===========================  ======================

A histogram bin holding ``s`` points of class ``k`` contributes ``s`` times
the log of the bin integral of the class probability (for OvR, the product
of the integrals of ``P(Y=k|x)`` and ``P(Y!=k'|x)`` for every ``k' != k``).
Multinomial normalising constants of the count distribution are dropped.

Every evaluator takes the raw ``(D+1, K)`` coefficient array and returns
``(loglik, gradient)``; the gradient of the multinomial reference column is
always zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .aggregation import Histogram, MixedAggregate
from .dataset import Dataset
from .model import Coefficients, augment
from .quadrature import log_integral_logistic, tensor_rule

FAMILIES = ("M", "O", "SM", "SO", "MM", "MO")
MULTINOMIAL_FAMILIES = ("M", "SM", "MM")


class LikelihoodError(ArithmeticError):
    """Non-finite likelihood value or a degenerate bin integral."""


def model_of(family: str) -> str:
    if family not in FAMILIES:
        raise ValueError(f"unknown family '{family}'")
    return "multinomial" if family in MULTINOMIAL_FAMILIES else "ovr"


def _short(model: str) -> str:
    return {"multinomial": "M", "ovr": "O", "M": "M", "O": "O"}[model]


def beta_array(beta, model: str) -> np.ndarray:
    """Raw coefficient array, checked against the model's pivot convention."""
    if isinstance(beta, Coefficients):
        B = beta.beta
        if _short(beta.model) != _short(model):
            raise ValueError(f"coefficients are {beta.model}, likelihood is {model}")
        return B
    B = np.asarray(beta, dtype=float)
    if B.ndim != 2:
        raise ValueError("beta must be a (D+1, K) matrix")
    if _short(model) == "M" and np.any(B[:, -1] != 0):
        raise ValueError("multinomial reference column must be zero")
    return B


class Classical:
    """Point-data log-likelihood, optionally with per-row weights."""

    def __init__(self, X, y, K: int, model: str, weights=None):
        self.Z = augment(X)
        self.y = np.asarray(y, dtype=np.int64)
        self.K = K
        self.model = _short(model)
        self.onehot = np.zeros((self.Z.shape[0], K))
        self.onehot[np.arange(self.y.size), self.y - 1] = 1.0
        self.w = None if weights is None else np.asarray(weights, dtype=float)

    @property
    def n_obs(self) -> float:
        return float(self.y.size if self.w is None else self.w.sum())

    def __call__(self, B):
        if self.Z.shape[0] == 0:
            return 0.0, np.zeros_like(B)
        eta = self.Z @ B
        if self.model == "M":
            logp = eta - logsumexp(eta, axis=1, keepdims=True)
            terms = np.sum(logp * self.onehot, axis=1)
            dEta = self.onehot - np.exp(logp)
        else:
            sgn = 2.0 * self.onehot - 1.0
            terms = np.sum(log_expit(sgn * eta), axis=1)
            dEta = sgn * expit(-sgn * eta)
        if self.w is not None:
            terms = terms * self.w
            dEta = dEta * self.w[:, None]
        G = self.Z.T @ dEta
        if self.model == "M":
            G[:, -1] = 0.0
        return float(np.sum(terms)), G


class SymbolicQuadrature:
    """Bin terms with integrals by tensor Gauss-Legendre quadrature in log space."""

    def __init__(self, lo, hi, labels, counts, K: int, model: str, nodes_per_dim: int = 2):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        self.M, D = lo.shape
        self.K = K
        self.model = _short(model)
        U, w = tensor_rule(D, int(nodes_per_dim))
        self.Q = w.size
        self.logw = np.log(w)
        width = hi - lo
        if np.any(width <= 0):
            raise LikelihoodError("bin with non-positive width")
        pts = lo[:, None, :] + width[:, None, :] * U[None, :, :]
        self.Z = augment(pts.reshape(-1, D))
        self.logvol = np.sum(np.log(width), axis=1)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=float)
        self.onehot = np.zeros((self.M, K))
        self.onehot[np.arange(self.M), self.labels - 1] = 1.0

    @property
    def n_obs(self) -> float:
        return float(self.counts.sum())

    def __call__(self, B):
        if self.M == 0:
            return 0.0, np.zeros_like(B)
        eta = (self.Z @ B).reshape(self.M, self.Q, self.K)
        if self.model == "M":
            logp = eta - logsumexp(eta, axis=2, keepdims=True)
            lp = np.sum(logp * self.onehot[:, None, :], axis=2) + self.logw
            li = logsumexp(lp, axis=1)
            r = np.exp(lp - li[:, None]) * self.counts[:, None]
            dEta = r[:, :, None] * (self.onehot[:, None, :] - np.exp(logp))
            total = np.sum(self.counts * (li + self.logvol))
        else:
            sgn = (2.0 * self.onehot - 1.0)[:, None, :]
            lp = log_expit(sgn * eta) + self.logw[None, :, None]
            li = logsumexp(lp, axis=1)
            r = np.exp(lp - li[:, None, :])
            dEta = (r * sgn * expit(-sgn * eta)) * self.counts[:, None, None]
            total = np.sum(self.counts[:, None] * (li + self.logvol[:, None]))
        if not np.isfinite(total):
            raise LikelihoodError("bin integral underflow")
        G = self.Z.T @ dEta.reshape(-1, self.K)
        if self.model == "M":
            G[:, -1] = 0.0
        return float(total), G


class SymbolicExact1D:
    """One-vs-rest bin terms for univariate bins in closed form."""

    def __init__(self, lo, hi, labels, counts, K: int):
        self.lo = np.asarray(lo, dtype=float).reshape(-1, 1)
        self.hi = np.asarray(hi, dtype=float).reshape(-1, 1)
        if np.any(self.hi <= self.lo):
            raise LikelihoodError("bin with non-positive width")
        self.labels = np.asarray(labels, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=float)
        self.K = K
        onehot = np.zeros((self.labels.size, K))
        onehot[np.arange(self.labels.size), self.labels - 1] = 1.0
        self.sgn = 2.0 * onehot - 1.0

    @property
    def n_obs(self) -> float:
        return float(self.counts.sum())

    def terms(self, a, b):
        """Per-bin, per-factor log integrals and partials for intercepts ``a``
        and slopes ``b`` given per bin (``(M, K)`` arrays)."""
        s = self.sgn
        val, da, db = log_integral_logistic(s * a, s * b, self.lo, self.hi)
        return val, s * da, s * db

    def __call__(self, B):
        if self.labels.size == 0:
            return 0.0, np.zeros_like(B)
        val, da, db = self.terms(B[0][None, :], B[1][None, :])
        c = self.counts[:, None]
        total = float(np.sum(c * val))
        if not np.isfinite(total):
            raise LikelihoodError("bin integral underflow")
        G = np.vstack([np.sum(c * da, axis=0), np.sum(c * db, axis=0)])
        return total, G


class Sum:
    def __init__(self, parts):
        self.parts = [p for p in parts if p is not None]

    @property
    def n_obs(self) -> float:
        return sum(p.n_obs for p in self.parts)

    def __call__(self, B):
        total = 0.0
        G = np.zeros_like(B)
        for p in self.parts:
            v, g = p(B)
            total += v
            G += g
        return total, G


def _stack_bins(summaries):
    los, his, labels, counts = [], [], [], []
    for s in summaries:
        if s.counts.size == 0:
            continue
        lo, hi = s.bounds()
        los.append(lo)
        his.append(hi)
        labels.append(np.full(s.counts.size, s.label, dtype=np.int64))
        counts.append(s.counts)
    D = summaries[0].grid.D
    if not los:
        return np.zeros((0, D)), np.zeros((0, D)), np.zeros(0, np.int64), np.zeros(0)
    return (np.vstack(los), np.vstack(his), np.concatenate(labels),
            np.concatenate(counts))


def bins_evaluator(lo, hi, labels, counts, K: int, model: str,
                   nodes_per_dim: int = 2, exact_univariate: bool = True):
    """Evaluator for a stack of bins: closed form for univariate OvR bins,
    quadrature otherwise."""
    model = _short(model)
    keep = np.asarray(counts) > 0
    lo, hi = np.asarray(lo)[keep], np.asarray(hi)[keep]
    labels, counts = np.asarray(labels)[keep], np.asarray(counts)[keep]
    if model == "O" and exact_univariate and lo.shape[1] == 1:
        return SymbolicExact1D(lo, hi, labels, counts, K)
    return SymbolicQuadrature(lo, hi, labels, counts, K, model, nodes_per_dim)


@dataclass
class LikelihoodSpec:
    """A likelihood family bound to its data and quadrature settings."""

    family: str
    data: object
    nodes_per_dim: int = 2
    exact_univariate: bool = True
    weights: np.ndarray | None = None
    _evaluator: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        model_of(self.family)
        if self.family in ("M", "O"):
            if not isinstance(self.data, Dataset):
                raise TypeError(f"family {self.family} needs a Dataset")
        elif self.family in ("SM", "SO"):
            if isinstance(self.data, (list, tuple)) and self.data and all(
                    isinstance(m, MixedAggregate) and m.retained.shape[0] == 0
                    for m in self.data):
                self.data = [m.as_histogram() for m in self.data]
            if not (isinstance(self.data, (list, tuple)) and self.data
                    and all(isinstance(h, Histogram) for h in self.data)):
                raise TypeError(f"family {self.family} needs a list of Histogram")
        else:
            if not (isinstance(self.data, (list, tuple)) and self.data
                    and all(isinstance(h, MixedAggregate) for h in self.data)):
                raise TypeError(f"family {self.family} needs a list of MixedAggregate")

    @property
    def model(self) -> str:
        return model_of(self.family)

    @property
    def K(self) -> int:
        return self.data.K if isinstance(self.data, Dataset) else len(self.data)

    @property
    def D(self) -> int:
        return self.data.D if isinstance(self.data, Dataset) else self.data[0].grid.D

    def evaluator(self):
        if self._evaluator is None:
            self._evaluator = _build(self)
        return self._evaluator

    def __call__(self, B):
        return self.evaluator()(B)


def _build(spec: LikelihoodSpec):
    K, model = spec.K, spec.model
    if spec.family in ("M", "O"):
        return Classical(spec.data.X, spec.data.y, K, model, spec.weights)
    lo, hi, labels, counts = _stack_bins(spec.data)
    bins = bins_evaluator(lo, hi, labels, counts, K, model, spec.nodes_per_dim,
                          spec.exact_univariate)
    if spec.family in ("SM", "SO"):
        return bins
    pts = [m.retained for m in spec.data]
    ys = [np.full(p.shape[0], m.label, dtype=np.int64) for p, m in zip(pts, spec.data)]
    point = Classical(np.vstack(pts), np.concatenate(ys), K, model)
    return Sum([bins, point])


def _value(spec: LikelihoodSpec, beta) -> float:
    B = beta_array(beta, spec.model)
    v, _ = spec(B)
    if not np.isfinite(v):
        raise LikelihoodError("overflow")
    return v


def loglik_classical(beta, data: Dataset, model: str = "M", weights=None) -> float:
    """Point-data log-likelihood under the multinomial (``M``) or OvR (``O``) model."""
    return _value(LikelihoodSpec(_short(model), data, weights=weights), beta)


def loglik_symbolic(beta, hists, model: str = "SM", nodes_per_dim: int = 2,
                    exact_univariate: bool = True) -> float:
    """Histogram log-likelihood (``SM`` or ``SO``), constants dropped."""
    if model not in ("SM", "SO"):
        raise ValueError("model must be 'SM' or 'SO'")
    return _value(LikelihoodSpec(model, list(hists), nodes_per_dim, exact_univariate), beta)


def loglik_mixture(beta, mixed, model: str = "MM", nodes_per_dim: int = 2,
                   exact_univariate: bool = True) -> float:
    """Kept bins contribute histogram terms, retained points classical terms."""
    if model not in ("MM", "MO"):
        raise ValueError("model must be 'MM' or 'MO'")
    return _value(LikelihoodSpec(model, list(mixed), nodes_per_dim, exact_univariate), beta)


def gradient(beta, spec: LikelihoodSpec) -> np.ndarray:
    """Gradient of the log-likelihood with respect to the ``(D+1, K)`` coefficients."""
    _, G = spec(beta_array(beta, spec.model))
    return G
