"""Labelled point data and CSV ingestion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats


class DataError(ValueError):
    """Malformed or invalid input data."""


@dataclass(frozen=True)
class Dataset:
    """N labelled rows: class labels in ``1..K`` and an ``(N, D)`` covariate matrix."""

    y: np.ndarray
    X: np.ndarray
    K: int

    def __post_init__(self):
        y = np.asarray(self.y)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError("covariates must be a 2-D matrix")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DataError("labels and covariates disagree in length")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise DataError("dataset needs N >= 1 and D >= 1")
        if self.K < 2:
            raise DataError("K must be at least 2")
        if not np.all(np.isfinite(X)):
            raise DataError("non-finite input")
        if not np.all(y == np.round(y)):
            raise DataError("labels must be integers")
        y = y.astype(np.int64)
        if y.min() < 1 or y.max() > self.K:
            raise DataError(f"labels must lie in 1..{self.K}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def D(self) -> int:
        return self.X.shape[1]

    def class_rows(self, k: int) -> np.ndarray:
        """Covariate rows with label ``k`` (1-based)."""
        return self.X[self.y == k]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.K + 1)[1:]

    def subset(self, rows) -> "Dataset":
        return Dataset(self.y[rows], self.X[rows], self.K)

    def columns(self, cols) -> "Dataset":
        return Dataset(self.y, self.X[:, list(cols)], self.K)


def read_csv(path, K: int | None = None) -> Dataset:
    """Read ``y,x1..xD`` CSV (header row, integer class labels first).

    Parameters
    ----------
    path : path-like
    K : int, optional
        Class count. Defaults to the largest label seen.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if not header or header[0] != "y":
            raise DataError(f"{path}: first column must be 'y', got {header[:1]}")
        if len(header) < 2:
            raise DataError(f"{path}: no covariate columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows)
    y = arr[:, 0]
    if not np.all(y == np.round(y)):
        raise DataError(f"{path}: column 'y' must hold integer class labels")
    y = y.astype(np.int64)
    if K is None:
        K = max(int(y.max()), 2)
    return Dataset(y, arr[:, 1:], K)


def read_susy(path) -> Dataset:
    """Read the headerless UCI SUSY layout: label (0/1) then 18 features.

    Background (0) maps to class 1 and signal (1) to class 2.
    """
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    labels = arr[:, 0]
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise DataError(f"{path}: SUSY label column must be 0 or 1")
    return Dataset(labels.astype(np.int64) + 1, arr[:, 1:], 2)


def write_csv(path, data: Dataset) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{d + 1}" for d in range(data.D)])
        for label, row in zip(data.y, data.X):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def rank_normalize(X: np.ndarray) -> np.ndarray:
    """Map each column to normal scores of its average ranks.

    A fixed stand-in for data-driven normality transforms; ties share a score.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    ranks = stats.rankdata(X, axis=0)
    return stats.norm.ppf((ranks - 0.5) / n)
