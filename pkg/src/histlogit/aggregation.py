"""Histogram summaries of per-class covariate matrices.

Four summaries are supported:

* fixed-bin histograms (``aggregate_fixed``), counts over a D-dimensional
  lattice of right-closed bins ``(lo, hi]``;
* mixed aggregates (``aggregate_mixed``) that keep only bins holding at least
  ``tau`` points and retain the raw points of every other bin;
* univariate quantile histograms (``aggregate_quantile``) whose bin edges are
  order statistics and whose counts are fixed by the chosen ranks;
* marginal histograms (``marginalize``, ``marginal_histograms``) over a subset
  of the covariates.

Counts are stored sparsely: an ``(M, D)`` array of 0-based bin multi-indices
(lexicographically sorted) and a length-M vector of positive counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .dataset import DataError, Dataset

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BinGrid:
    """Per-margin strictly increasing bin edges."""

    edges: tuple

    def __post_init__(self):
        edges = tuple(np.asarray(e, dtype=float) for e in self.edges)
        if not edges:
            raise DataError("grid needs at least one margin")
        for d, e in enumerate(edges):
            if e.ndim != 1 or e.size < 2:
                raise DataError(f"margin {d}: need at least two edges")
            if not np.all(np.isfinite(e)):
                raise DataError(f"margin {d}: edges must be finite")
            if not np.all(np.diff(e) > 0):
                raise DataError(f"margin {d}: edges must be strictly increasing")
        object.__setattr__(self, "edges", edges)

    @property
    def D(self) -> int:
        return len(self.edges)

    @property
    def shape(self) -> tuple:
        return tuple(e.size - 1 for e in self.edges)

    @classmethod
    def equal_width(cls, X: np.ndarray, bins) -> "BinGrid":
        """Equal-width edges over each column's ``[min, max]``.

        The lowest edge sits one ulp below the minimum so that the minimum
        falls inside the first right-closed bin.
        """
        X = np.asarray(X, dtype=float)
        D = X.shape[1]
        bins = _bins_per_margin(bins, D)
        edges = []
        for d in range(D):
            lo, hi = X[:, d].min(), X[:, d].max()
            if hi <= lo:
                lo, hi = lo - 0.5, hi + 0.5
            e = np.linspace(lo, hi, bins[d] + 1)
            e[0] = np.nextafter(lo, -np.inf)
            edges.append(e)
        return cls(tuple(edges))

    def locate(self, X: np.ndarray) -> np.ndarray:
        """0-based bin multi-index of each row of ``X``."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.D:
            raise DataError(f"grid has {self.D} margins, data has {X.shape[1]}")
        idx = np.empty(X.shape, dtype=np.int64)
        for d, e in enumerate(self.edges):
            col = np.searchsorted(e, X[:, d], side="left") - 1
            if np.any(col < 0) or np.any(col >= e.size - 1):
                raise DataError(f"margin {d}: point outside grid")
            idx[:, d] = col
        return idx

    def bounds(self, index: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Lower and upper corners of the bins in ``index`` (``(M, D)`` each)."""
        index = np.asarray(index, dtype=np.int64).reshape(-1, self.D)
        lo = np.column_stack([e[index[:, d]] for d, e in enumerate(self.edges)])
        hi = np.column_stack([e[index[:, d] + 1] for d, e in enumerate(self.edges)])
        return lo, hi

    def project(self, subset: Sequence[int]) -> "BinGrid":
        return BinGrid(tuple(self.edges[i] for i in subset))


@dataclass(frozen=True)
class Histogram:
    """Sparse D-dimensional histogram of one class's covariates."""

    grid: BinGrid
    index: np.ndarray
    counts: np.ndarray
    label: int
    subset: tuple | None = None

    def __post_init__(self):
        index = np.asarray(self.index, dtype=np.int64).reshape(-1, self.grid.D)
        counts = np.asarray(self.counts)
        if counts.shape != (index.shape[0],):
            raise DataError("one count per occupied bin required")
        if np.any(counts < 0) or not np.all(counts == np.round(counts)):
            raise DataError("counts must be nonnegative integers")
        shape = np.array(self.grid.shape)
        if index.size and (np.any(index < 0) or np.any(index >= shape)):
            raise DataError("bin index outside grid")
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "counts", counts.astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def dense(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=np.int64)
        np.add.at(out, tuple(self.index.T), self.counts)
        return out

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.bounds(self.index)


@dataclass(frozen=True)
class MixedAggregate:
    """Bins holding at least ``tau`` points plus the raw points of all other bins."""

    grid: BinGrid
    index: np.ndarray
    counts: np.ndarray
    retained: np.ndarray
    tau: int
    label: int

    def __post_init__(self):
        index = np.asarray(self.index, dtype=np.int64).reshape(-1, self.grid.D)
        counts = np.asarray(self.counts, dtype=np.int64).reshape(-1)
        retained = np.asarray(self.retained, dtype=float).reshape(-1, self.grid.D)
        if counts.shape[0] != index.shape[0]:
            raise DataError("one count per kept bin required")
        if self.tau < 1:
            raise DataError("tau must be a positive integer")
        if np.any(counts < self.tau):
            raise DataError("kept bin below threshold tau")
        object.__setattr__(self, "index", index)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "retained", retained)

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.retained.shape[0]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.grid.bounds(self.index)

    def as_histogram(self) -> Histogram:
        """The kept bins as a plain histogram; only valid with nothing retained."""
        if self.retained.shape[0]:
            raise DataError("mixed aggregate has retained points")
        return Histogram(self.grid, self.index, self.counts, self.label)


@dataclass(frozen=True)
class QuantileHistogram:
    """Univariate histogram with order-statistic edges and rank-fixed counts.

    ``edges`` runs from the (nudged) class minimum through the cut values to
    the class maximum; ``counts[b]`` is the number of ranks falling in bin
    ``b``. Cut values are themselves data points; ``cut_mask`` flags which
    edges are cuts (the clamps are not).
    """

    edges: np.ndarray
    counts: np.ndarray
    cut_mask: np.ndarray
    ranks: np.ndarray
    label: int
    margin: int

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def cuts(self) -> np.ndarray:
        return self.edges[self.cut_mask]

    @property
    def clamps(self) -> tuple[float, float]:
        return float(self.edges[0]), float(self.edges[-1])

    def symbolic_counts(self) -> np.ndarray:
        """Bin counts once every cut point is moved out of the bin it closes."""
        return self.counts - self.cut_mask[1:].astype(np.int64)


def _bins_per_margin(bins, D: int) -> list[int]:
    if np.isscalar(bins):
        bins = [int(bins)] * D
    bins = [int(b) for b in bins]
    if len(bins) != D:
        raise DataError(f"need {D} bin counts, got {len(bins)}")
    if min(bins) < 1:
        raise DataError("bin counts must be >= 1")
    return bins


def _class_grids(data: Dataset, bins, shared_grid: bool, grid: BinGrid | None):
    counts = data.class_counts()
    if np.any(counts == 0):
        raise DataError(f"empty class {int(np.argmin(counts)) + 1}")
    if grid is not None:
        return [grid] * data.K
    if shared_grid:
        g = BinGrid.equal_width(data.X, bins)
        return [g] * data.K
    return [BinGrid.equal_width(data.class_rows(k), bins) for k in range(1, data.K + 1)]


def _count_rows(idx: np.ndarray, shape: tuple, return_inverse: bool = False):
    """Distinct bin multi-indices (lexicographic), their counts and optionally
    the inverse map. Uses flat indices when the lattice fits in an int64."""
    if math.prod(shape) < 2 ** 62:
        flat = np.ravel_multi_index(tuple(idx.T), shape)
        res = np.unique(flat, return_inverse=return_inverse, return_counts=True)
        uniq = np.column_stack(np.unravel_index(res[0], shape)).astype(np.int64)
        uniq = uniq.reshape(-1, len(shape))
    else:
        res = np.unique(idx, axis=0, return_inverse=return_inverse, return_counts=True)
        uniq = res[0]
    if return_inverse:
        return uniq, res[1].reshape(-1), res[2]
    return uniq, res[1]


def aggregate_fixed(data: Dataset, bins, shared_grid: bool = False,
                    grid: BinGrid | None = None) -> list[Histogram]:
    """Per-class fixed-bin histograms.

    Parameters
    ----------
    data : Dataset
    bins : int or sequence of int
        Bins per margin.
    shared_grid : bool
        Build one grid over all classes instead of one grid per class.
    grid : BinGrid, optional
        Explicit grid used for every class; overrides ``bins``.
    """
    grids = _class_grids(data, bins, shared_grid, grid)
    out = []
    for k in range(1, data.K + 1):
        g = grids[k - 1]
        idx = g.locate(data.class_rows(k))
        uniq, cnt = _count_rows(idx, g.shape)
        out.append(Histogram(g, uniq, cnt, k))
    return out


def aggregate_mixed(data: Dataset, bins, tau: int, shared_grid: bool = False,
                    grid: BinGrid | None = None) -> list[MixedAggregate]:
    """Per-class mixed aggregates with threshold ``tau``.

    Bins with at least ``tau`` points are kept as counts; points of all other
    bins are retained verbatim, in their original row order.
    """
    tau = int(tau)
    if tau < 1:
        raise DataError("tau must be a positive integer")
    grids = _class_grids(data, bins, shared_grid, grid)
    out = []
    for k in range(1, data.K + 1):
        g = grids[k - 1]
        Xk = data.class_rows(k)
        idx = g.locate(Xk)
        uniq, inv, cnt = _count_rows(idx, g.shape, return_inverse=True)
        keep = cnt >= tau
        out.append(MixedAggregate(g, uniq[keep], cnt[keep], Xk[~keep[inv]], tau, k))
    return out


def quantile_levels(B: int, tail_trim: float) -> np.ndarray:
    """Quantile levels of the cut points for ``B`` body bins."""
    if tail_trim > 0:
        return tail_trim + (1.0 - 2.0 * tail_trim) * np.arange(B + 1) / B
    return np.arange(1, B) / B


def aggregate_quantile(data: Dataset, B: int,
                       tail_trim: float = 0.0) -> list[list[QuantileHistogram]]:
    """Per-class, per-margin quantile histograms.

    With ``tail_trim = 0`` the ``B - 1`` interior equal-probability order
    statistics split the data into ``B`` bins. With ``tail_trim > 0`` cuts sit
    at the ``tail_trim`` quantile, ``B - 1`` interior levels and the
    ``1 - tail_trim`` quantile, and two outer bins run to the class min/max.
    The cut for level ``q`` is the order statistic of rank ``ceil(q N_k)``.

    Returns
    -------
    list (over classes) of lists (over margins) of QuantileHistogram
    """
    B = int(B)
    if B < 2:
        raise DataError("quantile histograms need B >= 2")
    if not 0.0 <= tail_trim < 0.5:
        raise DataError("tail_trim must lie in [0, 0.5)")
    levels = quantile_levels(B, tail_trim)
    counts_k = data.class_counts()
    if np.any(counts_k == 0):
        raise DataError(f"empty class {int(np.argmin(counts_k)) + 1}")
    out = []
    for k in range(1, data.K + 1):
        Xk = data.class_rows(k)
        n = Xk.shape[0]
        if n <= B:
            raise DataError(f"class {k}: need more than B={B} points")
        ranks = np.clip(np.ceil(levels * n - 1e-9).astype(np.int64), 1, n)
        per_margin = []
        for d in range(data.D):
            col = Xk[:, d]
            cuts = np.partition(col, ranks - 1)[ranks - 1]
            lo, hi = col.min(), col.max()
            if np.any(np.diff(cuts) <= 0):
                raise DataError(f"class {k}, margin {d}: degenerate quantiles")
            t = np.concatenate([[0], ranks])
            edges = [np.nextafter(lo, -np.inf), *cuts]
            is_cut = [False] + [True] * cuts.size
            data_edges = [lo, *cuts]
            if hi > cuts[-1]:
                edges.append(hi)
                is_cut.append(False)
                data_edges.append(hi)
                t = np.concatenate([t, [n]])
            elif ranks[-1] != n:
                raise DataError(f"class {k}, margin {d}: degenerate quantiles")
            counts = np.diff(t)
            cut_mask = np.array(is_cut)
            sym = counts - cut_mask[1:]
            widths = np.diff(np.asarray(data_edges))
            if np.any((sym > 0) & (widths <= 0)):
                raise DataError(f"class {k}, margin {d}: degenerate quantiles")
            per_margin.append(QuantileHistogram(
                np.asarray(edges), counts.astype(np.int64), cut_mask,
                ranks.copy(), k, d))
        out.append(per_margin)
    return out


def _check_subset(subset, D: int) -> tuple:
    subset = tuple(int(i) for i in subset)
    if not subset:
        raise DataError("subset must be non-empty")
    if any(i < 0 or i >= D for i in subset):
        raise DataError(f"subset index out of range for D={D}")
    if any(b <= a for a, b in zip(subset, subset[1:])):
        raise DataError("subset indices must be strictly increasing")
    return subset


def marginalize(h: Histogram, subset: Sequence[int]) -> Histogram:
    """Sum a histogram's counts over the margins not in ``subset`` (0-based)."""
    subset = _check_subset(subset, h.grid.D)
    uniq, inv = np.unique(h.index[:, list(subset)], axis=0, return_inverse=True)
    counts = np.bincount(inv.reshape(-1), weights=h.counts, minlength=uniq.shape[0])
    parent = h.subset if h.subset is not None else tuple(range(h.grid.D))
    return Histogram(h.grid.project(subset), uniq, counts.astype(np.int64),
                     h.label, tuple(parent[i] for i in subset))


def subsets(D: int, j: int) -> list[tuple]:
    """All ``j``-element subsets of ``0..D-1`` in lexicographic order."""
    if not 1 <= j <= D:
        raise DataError(f"j must lie in 1..{D}")
    return list(combinations(range(D), j))


def marginal_histograms(data: Dataset, bins, j: int, shared_grid: bool = False
                        ) -> dict[tuple, list[Histogram]]:
    """Per-class ``j``-dimensional marginal histograms for every subset of size ``j``.

    Each class's grid is built over all D margins first and then projected,
    so the result equals ``marginalize`` applied to the full histogram.
    """
    grids = _class_grids(data, bins, shared_grid, None)
    located = [grids[k - 1].locate(data.class_rows(k)) for k in range(1, data.K + 1)]
    out = {}
    for sub in subsets(data.D, j):
        hists = []
        for k in range(1, data.K + 1):
            g = grids[k - 1].project(sub)
            uniq, cnt = _count_rows(located[k - 1][:, list(sub)], g.shape)
            hists.append(Histogram(g, uniq, cnt, k, sub))
        out[sub] = hists
    return out


# --- JSON ---------------------------------------------------------------

def summary_to_dict(s) -> dict:
    """JSON-ready dict for a Histogram, MixedAggregate or QuantileHistogram."""
    if isinstance(s, QuantileHistogram):
        return {
            "class": s.label, "type": "quantile", "margin": s.margin,
            "edges": [s.edges.tolist()],
            "counts": [[[b], int(c)] for b, c in enumerate(s.counts)],
            "cut_mask": s.cut_mask.tolist(), "ranks": s.ranks.tolist(),
            "total": s.total,
        }
    edges = [e.tolist() for e in s.grid.edges]
    counts = [[ix.tolist(), int(c)] for ix, c in zip(s.index, s.counts)]
    if isinstance(s, MixedAggregate):
        return {
            "class": s.label, "type": "mixed", "edges": edges, "counts": counts,
            "retained": s.retained.tolist(), "tau": s.tau, "total": s.total,
        }
    out = {"class": s.label, "type": "fixed", "edges": edges, "counts": counts,
           "total": s.total}
    if s.subset is not None:
        out["subset"] = list(s.subset)
    return out


def summary_from_dict(d: dict):
    for key in ("class", "type", "edges", "counts"):
        if key not in d:
            raise DataError(f"histogram JSON: missing field '{key}'")
    kind = d["type"]
    label = int(d["class"])
    if kind == "quantile":
        for key in ("cut_mask", "ranks", "margin"):
            if key not in d:
                raise DataError(f"histogram JSON: missing field '{key}'")
        counts = np.array([c for _, c in d["counts"]], dtype=np.int64)
        return QuantileHistogram(np.asarray(d["edges"][0], dtype=float), counts,
                                 np.asarray(d["cut_mask"], dtype=bool),
                                 np.asarray(d["ranks"], dtype=np.int64), label,
                                 int(d["margin"]))
    grid = BinGrid(tuple(np.asarray(e, dtype=float) for e in d["edges"]))
    index = np.array([ix for ix, _ in d["counts"]], dtype=np.int64).reshape(-1, grid.D)
    counts = np.array([c for _, c in d["counts"]], dtype=np.int64)
    if kind == "mixed":
        if "tau" not in d:
            raise DataError("histogram JSON: missing field 'tau'")
        retained = np.asarray(d.get("retained", []), dtype=float).reshape(-1, grid.D)
        out = MixedAggregate(grid, index, counts, retained, int(d["tau"]), label)
    elif kind == "fixed":
        sub = tuple(d["subset"]) if d.get("subset") is not None else None
        out = Histogram(grid, index, counts, label, sub)
    else:
        raise DataError(f"histogram JSON: unknown type '{kind}'")
    if "total" in d and int(d["total"]) != out.total:
        raise DataError("histogram JSON: field 'total' disagrees with counts")
    return out
