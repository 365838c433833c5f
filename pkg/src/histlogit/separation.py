"""Complete and quasi-complete separation checks.

Every covariate vector is augmented to ``z = (1, x)`` so intercepts take part.
Binary (one-vs-rest) checks look for ``b`` with ``s_n b.z_n >= 0`` for signs
``s_n = +1`` inside the class and ``-1`` outside; the multinomial check looks
for ``b_1..b_K`` (``b_K = 0``) with ``(b_k - b_j).z_n >= 0`` for every point
of class ``k`` and every ``j != k``.

Two linear programs decide the status:

1. maximise the margin ``delta`` subject to every constraint being at least
   ``delta`` and ``|b|_inf <= 1``; ``delta > 1e-9`` means complete separation;
2. otherwise maximise the sum of constraint values subject to all being
   non-negative; a strictly positive optimum means quasi-complete separation.

A histogram bin is a box, and a linear function on a box is extreme at its
corners, so bins are checked through their ``2^D`` vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.optimize import linprog

from .aggregation import Histogram, MixedAggregate
from .dataset import Dataset

MARGIN_TOL = 1e-9
DEFAULT_VERTEX_BUDGET = 2_000_000
STATUSES = ("none", "quasi-complete", "complete")


class VertexBudgetError(ValueError):
    pass


@dataclass
class SeparationReport:
    status: str
    scheme: str
    per_class: dict = field(default_factory=dict)
    witness: dict = field(default_factory=dict)
    margin: dict = field(default_factory=dict)

    @property
    def separated(self) -> bool:
        return self.status != "none"

    def to_dict(self) -> dict:
        from .aggregation import SCHEMA_VERSION
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "separation_report",
            "scheme": self.scheme,
            "status": self.status,
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "witness": {_key(k): np.asarray(v).tolist() for k, v in self.witness.items()},
            "margin": {_key(k): float(v) for k, v in self.margin.items()},
        }


def _key(k) -> str:
    return f"{k[0]}-{k[1]}" if isinstance(k, tuple) else str(k)


def _worst(statuses) -> str:
    return max(statuses, key=STATUSES.index, default="none")


def _box_vertices(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    D = lo.shape[1]
    corners = np.array(list(product((0.0, 1.0), repeat=D)))
    pts = lo[:, None, :] + corners[None, :, :] * (hi - lo)[:, None, :]
    return pts.reshape(-1, D)


def _class_points(inputs, K: int, budget: int) -> list[np.ndarray]:
    """Per-class point clouds whose separation is equivalent to the input's."""
    if isinstance(inputs, Dataset):
        return [inputs.class_rows(k) for k in range(1, K + 1)]
    out = []
    total = 0
    for s in inputs:
        D = s.grid.D
        n_vert = s.counts.size * 2 ** D
        total += n_vert
        if total > budget:
            raise VertexBudgetError("bin vertex budget exceeded")
        if s.counts.size:
            lo, hi = s.bounds()
            pts = _box_vertices(lo, hi)
        else:
            pts = np.zeros((0, D))
        if isinstance(s, MixedAggregate) and s.retained.shape[0]:
            pts = np.vstack([pts, s.retained])
        out.append(pts)
    return out


def _standardize(points: list[np.ndarray]):
    allp = np.vstack([p for p in points if p.size])
    m = allp.mean(axis=0)
    s = allp.std(axis=0)
    s[s == 0] = 1.0
    Z = [np.column_stack([np.ones(p.shape[0]), (p - m) / s]) for p in points]
    # b in standardized coordinates maps to T @ b in the original ones
    T = np.eye(m.size + 1)
    T[0, 1:] = -m / s
    T[1:, 1:] = np.diag(1.0 / s)
    return Z, T


def _solve(A: np.ndarray, n_b: int):
    """Margin LP then, failing strict separation, the quasi LP.

    ``A`` holds one row per constraint; ``A @ b >= 0`` is the separating
    condition. Returns (status, b, margin).
    """
    n_con = A.shape[0]
    c = np.zeros(n_b + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-A, np.ones((n_con, 1))])
    bounds = [(-1.0, 1.0)] * n_b + [(0.0, 1.0)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n_con), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"separation LP failed: {res.message}")
    delta = float(res.x[-1])
    if delta > MARGIN_TOL:
        return "complete", res.x[:n_b], delta
    res = linprog(-A.sum(axis=0), A_ub=-A, b_ub=np.zeros(n_con),
                  bounds=[(-1.0, 1.0)] * n_b, method="highs")
    if res.status != 0:
        raise RuntimeError(f"separation LP failed: {res.message}")
    b = res.x
    vals = A @ b
    if vals.max() > 1e-7 and vals.min() > -MARGIN_TOL:
        return "quasi-complete", b, 0.0
    return "none", np.zeros(n_b), 0.0


def _binary(Z: list[np.ndarray], k: int):
    A = np.vstack([Zc if c == k else -Zc for c, Zc in enumerate(Z)])
    return _solve(A, A.shape[1])


def _multinomial(Z: list[np.ndarray]):
    K = len(Z)
    p = Z[0].shape[1]
    rows = []
    for k in range(K):
        for j in range(K):
            if j == k or Z[k].shape[0] == 0:
                continue
            block = np.zeros((Z[k].shape[0], (K - 1) * p))
            if k < K - 1:
                block[:, k * p:(k + 1) * p] += Z[k]
            if j < K - 1:
                block[:, j * p:(j + 1) * p] -= Z[k]
            rows.append(block)
    status, b, delta = _solve(np.vstack(rows), (K - 1) * p)
    return status, np.vstack([b.reshape(K - 1, p), np.zeros((1, p))]), delta


def detect_separation(inputs, scheme: str = "ovr",
                      vertex_budget: int = DEFAULT_VERTEX_BUDGET) -> SeparationReport:
    """Separation status of point data, histograms or mixed aggregates.

    Witnesses are in original coordinates as ``(intercept, slopes)``: one per
    separated class for ``ovr``, one per ordered class pair ``(k, j)`` holding
    ``b_k - b_j`` for ``multinomial``.
    """
    if scheme not in ("ovr", "multinomial"):
        raise ValueError("scheme must be 'ovr' or 'multinomial'")
    if isinstance(inputs, Dataset):
        K = inputs.K
    else:
        inputs = list(inputs)
        if not inputs or not all(isinstance(s, (Histogram, MixedAggregate)) for s in inputs):
            raise TypeError("expected a Dataset or a list of histograms / mixed aggregates")
        K = len(inputs)
    points = _class_points(inputs, K, vertex_budget)
    Z, T = _standardize(points)
    report = SeparationReport("none", scheme)
    if scheme == "ovr":
        for k in range(K):
            status, b, delta = _binary(Z, k)
            report.per_class[k + 1] = status
            if status != "none":
                report.witness[k + 1] = T @ b
                report.margin[k + 1] = delta
        report.status = _worst(report.per_class.values())
        return report
    status, B, delta = _multinomial(Z)
    report.status = status
    if status != "none":
        Bo = T @ B.T
        for k in range(K):
            for j in range(K):
                if j != k:
                    report.witness[(k + 1, j + 1)] = Bo[:, k] - Bo[:, j]
                    report.margin[(k + 1, j + 1)] = delta
    return report


def check_witness(points: list[np.ndarray], witness, k: int, strict: bool) -> bool:
    """Re-check a one-vs-rest witness for class ``k`` against raw inequalities."""
    w = np.asarray(witness, dtype=float)
    ok = True
    for c, P in enumerate(points, start=1):
        if P.shape[0] == 0:
            continue
        v = w[0] + P @ w[1:]
        if c == k:
            ok &= bool(np.all(v > 0) if strict else np.all(v >= -1e-9))
        else:
            ok &= bool(np.all(v < 0) if strict else np.all(v <= 1e-9))
    return ok
