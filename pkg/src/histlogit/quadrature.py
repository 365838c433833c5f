"""Integration of class-probability functions over axis-aligned bins.

``integrate_bin`` is the generic tensor-product Gauss-Legendre rule.
``log_mean_sigmoid`` is the exact univariate integral of the logistic
function in log space, used whenever a bin is one-dimensional.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit, log_expit, logsumexp

RULE = "gauss-legendre"

# below this predictor span the closed form loses digits to cancellation
_SMALL_SPAN = 1e-2
_SMALL_SPAN_NODES = 6


@dataclass(frozen=True)
class Rectangle:
    """Finite box with ``lo < hi`` in every dimension."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("rectangle bounds must be finite")
        if np.any(hi <= lo):
            raise ValueError("rectangle needs lo < hi in every dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


@lru_cache(maxsize=64)
def _unit_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=64)
def tensor_rule(dim: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes ``(n**dim, dim)`` in the unit cube and weights summing to one."""
    if n < 1 or dim < 1:
        raise ValueError("need dim >= 1 and n >= 1")
    x, w = _unit_rule(n)
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.column_stack([g.reshape(-1) for g in grids])
    wgrid = np.meshgrid(*([w] * dim), indexing="ij")
    weights = np.prod(np.column_stack([g.reshape(-1) for g in wgrid]), axis=1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def integrate_bin(f, rect: Rectangle, nodes_per_dim: int = 2) -> float:
    """Tensor-product Gauss-Legendre estimate of the integral of ``f`` over ``rect``.

    ``f`` maps an ``(M, dim)`` array of points to ``M`` values. With ``n``
    nodes per axis the rule is exact for polynomials of degree ``2n - 1`` in
    each coordinate.
    """
    nodes, weights = tensor_rule(rect.dim, int(nodes_per_dim))
    pts = rect.lo + nodes * (rect.hi - rect.lo)
    vals = np.asarray(f(pts), dtype=float).reshape(-1)
    if vals.shape[0] != pts.shape[0] or not np.all(np.isfinite(vals)):
        raise FloatingPointError("integrand overflow")
    return float(rect.volume * (weights @ vals))


def _log_softplus(z):
    """log(log(1 + e^z)) without overflow or underflow."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    big = z > 30
    small = z < -30
    mid = ~(big | small)
    out[big] = np.log(z[big] + np.log1p(np.exp(-z[big])))
    out[small] = z[small] - 0.5 * np.exp(z[small])
    out[mid] = np.log(np.log1p(np.exp(z[mid])))
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def _log_softplus_diff(u, v):
    """log(softplus(v) - softplus(u)) for ``u < v``."""
    out = np.empty_like(u)
    pos = u >= 0
    if np.any(pos):
        up, vp = u[pos], v[pos]
        out[pos] = np.log((vp - up) - (_softplus(-up) - _softplus(-vp)))
    neg = ~pos
    if np.any(neg):
        lu, lv = _log_softplus(u[neg]), _log_softplus(v[neg])
        out[neg] = lv + np.log1p(-np.exp(lu - lv))
    return out


def log_mean_sigmoid(u, v):
    """Log of the mean of the logistic function over ``[u, v]`` (either order).

    Returns
    -------
    value, d_du, d_dv : ndarray
        ``log((softplus(v) - softplus(u)) / (v - u))`` and its partials; the
        limit ``log sigmoid(u)`` is used when ``u == v``.
    """
    u, v = np.broadcast_arrays(np.asarray(u, dtype=float), np.asarray(v, dtype=float))
    shape = u.shape
    u = u.reshape(-1)
    v = v.reshape(-1)
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    span = hi - lo
    val = np.empty_like(lo)
    d_lo = np.empty_like(lo)
    d_hi = np.empty_like(lo)

    near = span < _SMALL_SPAN
    if np.any(near):
        x, w = _unit_rule(_SMALL_SPAN_NODES)
        z = lo[near, None] + span[near, None] * x[None, :]
        lp = np.log(w)[None, :] + log_expit(z)
        val[near] = logsumexp(lp, axis=1)
        r = np.exp(lp - val[near, None])
        dz = r * expit(-z)
        d_lo[near] = dz @ (1.0 - x)
        d_hi[near] = dz @ x

    far = ~near
    if np.any(far):
        a, b, s = lo[far], hi[far], span[far]
        L = _log_softplus_diff(a, b)
        val[far] = L - np.log(s)
        d_hi[far] = np.exp(log_expit(b) - L) - 1.0 / s
        d_lo[far] = 1.0 / s - np.exp(log_expit(a) - L)

    swap = u > v
    d_u = np.where(swap, d_hi, d_lo)
    d_v = np.where(swap, d_lo, d_hi)
    return val.reshape(shape), d_u.reshape(shape), d_v.reshape(shape)


def log_integral_logistic(a, b, lo, hi):
    """Log of the integral of ``sigmoid(a + b x)`` over ``[lo, hi]``, with partials.

    Returns
    -------
    value, d_da, d_db : ndarray
    """
    a, b, lo, hi = (np.asarray(t, dtype=float) for t in (a, b, lo, hi))
    g, gu, gv = log_mean_sigmoid(a + b * lo, a + b * hi)
    return np.log(hi - lo) + g, gu + gv, gu * lo + gv * hi
