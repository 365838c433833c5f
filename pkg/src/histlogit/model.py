"""Multinomial and one-vs-rest logistic class probabilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit, log_expit, logsumexp

MODELS = ("multinomial", "ovr")


@dataclass(frozen=True)
class Coefficients:
    """``(D+1, K)`` matrix of intercepts (row 0) and slopes, one column per class.

    Under the multinomial model the last column is the reference class and
    must be zero.
    """

    beta: np.ndarray
    model: str

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float)
        if beta.ndim != 2 or beta.shape[0] < 2 or beta.shape[1] < 2:
            raise ValueError("beta must be a (D+1, K) matrix with D >= 1, K >= 2")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("coefficients must be finite")
        if self.model == "multinomial" and np.any(beta[:, -1] != 0):
            raise ValueError("multinomial reference column must be zero")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def D(self) -> int:
        return self.beta.shape[0] - 1

    @property
    def K(self) -> int:
        return self.beta.shape[1]

    @classmethod
    def zeros(cls, D: int, K: int, model: str) -> "Coefficients":
        return cls(np.zeros((D + 1, K)), model)

    def to_dict(self) -> dict:
        return {"model": self.model, "K": self.K, "D": self.D,
                "beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Coefficients":
        for key in ("model", "K", "D", "beta"):
            if key not in d:
                raise ValueError(f"coefficients JSON: missing field '{key}'")
        beta = np.asarray(d["beta"], dtype=float)
        if beta.shape != (int(d["D"]) + 1, int(d["K"])):
            raise ValueError("coefficients JSON: field 'beta' has the wrong shape")
        return cls(beta, d["model"])


def augment(X: np.ndarray) -> np.ndarray:
    """Prepend a column of ones."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    return np.column_stack([np.ones(X.shape[0]), X])


def _as_beta(beta) -> tuple[np.ndarray, str]:
    if isinstance(beta, Coefficients):
        return beta.beta, beta.model
    raise TypeError("expected Coefficients")


def log_probabilities(beta: Coefficients, X: np.ndarray) -> np.ndarray:
    """``(N, K)`` log class probabilities, stable for large linear predictors."""
    B, model = _as_beta(beta)
    Z = augment(X)
    if Z.shape[1] != B.shape[0]:
        raise ValueError(f"expected {B.shape[0] - 1} covariates, got {Z.shape[1] - 1}")
    eta = Z @ B
    if model == "multinomial":
        return eta - logsumexp(eta, axis=1, keepdims=True)
    return log_expit(eta)


def probabilities(beta: Coefficients, X: np.ndarray) -> np.ndarray:
    """``(N, K)`` class probabilities. OvR rows need not sum to one."""
    B, model = _as_beta(beta)
    if model == "ovr":
        return expit(augment(X) @ B)
    return np.exp(log_probabilities(beta, X))


def class_probability(beta: Coefficients, x, k: int) -> float:
    """P(Y = k | X = x) for a single covariate vector and 1-based class ``k``."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if not 1 <= k <= beta.K:
        raise ValueError(f"class must lie in 1..{beta.K}")
    return float(probabilities(beta, x)[0, k - 1])


def predict(beta: Coefficients, X: np.ndarray) -> np.ndarray:
    """Most probable class per row (1-based); ties go to the lowest class."""
    return np.argmax(log_probabilities(beta, X), axis=1) + 1


class Accuracy(NamedTuple):
    overall: float
    per_class: dict


def prediction_accuracy(pred, truth, K: int | None = None) -> Accuracy:
    """Fraction of correct predictions, overall and within each true class."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ValueError("no predictions")
    hit = pred == truth
    if K is None:
        K = int(max(pred.max(), truth.max()))
    per_class = {}
    for k in range(1, K + 1):
        mask = truth == k
        per_class[k] = float(hit[mask].mean()) if mask.any() else float("nan")
    return Accuracy(float(hit.mean()), per_class)
