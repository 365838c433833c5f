"""Synthetic data, replicated experiments and the two-step subsampling baseline."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .dataset import Dataset
from .estimation import (FitConfig, FitResult, NoMLEError, Objective, binary_contrast,
                         fit, fit_objective)
from .likelihood import LikelihoodSpec
from .model import Coefficients, augment, predict, prediction_accuracy, probabilities
from .separation import detect_separation

LAWS = ("normal", "skew-normal")
METHODS = ("M", "O", "MM", "O(1)", "SO(1)-indep", "SO(1)-corr", "SO(2)", "naive",
           "OO(1)", "subsample")
CSV_HEADER = ("method", "sweep_var", "sweep_value", "mean_pa", "mmse", "fit_seconds",
              "total_seconds", "replicates")

# stream purposes
_DATA, _SUBSAMPLE = 0, 1


def stream(seed: int, replicate: int, purpose: int = _DATA) -> np.random.Generator:
    """Independent counter-based generator for (seed, replicate, purpose)."""
    if seed < 0 or replicate < 0:
        raise ValueError("seed and replicate must be non-negative")
    return np.random.Generator(np.random.Philox(key=[seed, replicate * 8 + purpose]))


@dataclass(frozen=True)
class SimDesign:
    N: int = 5000
    D: int = 5
    K: int = 3
    law: str = "normal"
    corr: object = "identity"  # "identity" or [low, high] for off-diagonal entries
    slant: float = 0.0  # slant entries ~ U[-slant, slant]
    beta_low: float = -5.0
    beta_high: float = 5.0
    replicates: int = 50
    seed: int = 42

    def __post_init__(self):
        if self.law not in LAWS:
            raise ValueError(f"law must be one of {LAWS}")
        if self.N < 1 or self.D < 1 or self.K < 2 or self.replicates < 1:
            raise ValueError("design needs N, D, replicates >= 1 and K >= 2")
        if self.corr != "identity":
            lo, hi = self.corr
            if not (-1 < lo <= hi < 1):
                raise ValueError("correlation bounds must lie in (-1, 1)")
        if self.slant < 0 or self.beta_low > self.beta_high:
            raise ValueError("invalid slant or coefficient range")

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["corr"] != "identity":
            d["corr"] = list(d["corr"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimDesign":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"design: unknown field '{sorted(unknown)[0]}'")
        d = dict(d)
        if isinstance(d.get("corr"), list):
            d["corr"] = tuple(d["corr"])
        return cls(**d)


def nearest_correlation(S: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Clip eigenvalues at ``floor`` and rescale to a unit diagonal."""
    S = (S + S.T) / 2
    w, V = np.linalg.eigh(S)
    R = (V * np.maximum(w, floor)) @ V.T
    d = np.sqrt(np.diag(R))
    R = R / np.outer(d, d)
    R = (R + R.T) / 2
    np.fill_diagonal(R, 1.0)
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError:
        raise ValueError("correlation matrix not positive definite after repair") from None
    return R


def draw_correlation(design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    D = design.D
    if design.corr == "identity":
        return np.eye(D)
    lo, hi = design.corr
    S = np.eye(D)
    iu = np.triu_indices(D, 1)
    S[iu] = rng.uniform(lo, hi, size=iu[0].size)
    S = S + np.triu(S, 1).T
    return nearest_correlation(S)


def skew_normal(n: int, corr: np.ndarray, slant: np.ndarray,
                rng: np.random.Generator) -> np.ndarray:
    """Multivariate skew-normal draws by conditioning on a latent sign.

    With ``delta = corr @ slant / sqrt(1 + slant' corr slant)``, draw
    ``(U0, U)`` jointly normal with ``Var(U0) = 1``, ``Cov(U, U0) = delta``
    and ``Var(U) = corr``; return ``U`` where ``U0 > 0`` and ``-U`` elsewhere.
    """
    D = corr.shape[0]
    slant = np.asarray(slant, dtype=float)
    delta = corr @ slant / math.sqrt(1.0 + slant @ corr @ slant)
    joint = np.empty((D + 1, D + 1))
    joint[0, 0] = 1.0
    joint[0, 1:] = joint[1:, 0] = delta
    joint[1:, 1:] = corr
    L = np.linalg.cholesky(joint)
    Z = rng.standard_normal((n, D + 1)) @ L.T
    sign = np.where(Z[:, 0] > 0, 1.0, -1.0)
    return Z[:, 1:] * sign[:, None]


def draw_labels(beta: Coefficients, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    P = probabilities(beta, X)
    u = rng.random(X.shape[0])
    return np.minimum((np.cumsum(P, axis=1) < u[:, None]).sum(axis=1), beta.K - 1) + 1


def generate_synthetic(design: SimDesign, replicate: int):
    """(train, test, beta_true) for one replicate; 2N rows split in halves."""
    rng = stream(design.seed, replicate, _DATA)
    D, K = design.D, design.K
    B = rng.uniform(design.beta_low, design.beta_high, size=(D + 1, K))
    B[:, -1] = 0.0
    beta = Coefficients(B, "multinomial")
    corr = draw_correlation(design, rng)
    n = 2 * design.N
    if design.law == "normal":
        X = rng.standard_normal((n, D)) @ np.linalg.cholesky(corr).T
    else:
        slant = rng.uniform(-design.slant, design.slant, size=D)
        X = skew_normal(n, corr, slant, rng)
    y = draw_labels(beta, X, rng)
    train = Dataset(y[:design.N], X[:design.N], K)
    test = Dataset(y[design.N:], X[design.N:], K)
    return train, test, beta


# --- two-step subsampling -----------------------------------------------------

def subsample_weights(data: Dataset, pilot: Coefficients, kind: str = "mMSE",
                      pilot_rows=None) -> np.ndarray:
    """Sampling probabilities for the second step.

    ``mMSE``: ``|y - p| * ||M^{-1} z||`` with ``M`` the pilot information
    matrix; ``mVc``: ``|y - p| * ||z||``; ``uniform``: ``1/N``.
    """
    N = data.N
    if kind == "uniform":
        return np.full(N, 1.0 / N)
    Z = augment(data.X)
    p = probabilities(pilot, data.X)[:, 0]
    resid = np.abs((data.y == 1).astype(float) - p)
    if kind == "mVc":
        score = resid * np.linalg.norm(Z, axis=1)
    elif kind == "mMSE":
        rows = np.arange(N) if pilot_rows is None else pilot_rows
        Zp, pp = Z[rows], p[rows]
        M = (Zp * (pp * (1 - pp))[:, None]).T @ Zp / rows.size
        score = resid * np.linalg.norm(np.linalg.solve(M, Z.T), axis=0)
    else:
        raise ValueError("weights must be 'mMSE', 'mVc' or 'uniform'")
    total = score.sum()
    if not np.isfinite(total) or total <= 0:
        return np.full(N, 1.0 / N)
    return score / total


def two_step_subsample(data: Dataset, r0: int = 1000, r: int = 1000, seed: int = 0,
                       weights: str = "mMSE", config: FitConfig | None = None,
                       replicate: int = 0) -> FitResult:
    """Pilot fit on a uniform subsample, then a weighted refit on an optimal one.

    The final weighted likelihood pools the ``r0`` pilot rows (weight ``1/(r0/N)``
    per row, i.e. uniform) with the ``r`` second-step draws (weight ``1/(r pi)``).
    ``aggregate_seconds`` holds the pilot and weighting time, ``seconds`` the
    final fit.
    """
    if data.K != 2:
        raise ValueError("two-step subsampling needs K=2")
    if not (0 < r0 < data.N) or r < 1:
        raise ValueError("need 0 < r0 < N and r >= 1")
    cfg = config or FitConfig(family="M")
    cfg = replace(cfg, family="M", penalty=0.0, check_separation=False)
    t0 = time.perf_counter()
    rng = stream(seed, replicate, _SUBSAMPLE)
    pilot_rows = np.sort(rng.choice(data.N, size=r0, replace=False))
    pilot_data = data.subset(pilot_rows)
    if np.any(pilot_data.class_counts() == 0) or detect_separation(
            pilot_data, "multinomial").separated:
        raise NoMLEError("pilot MLE does not exist")
    pilot = fit(cfg, pilot_data)
    pi = subsample_weights(data, pilot.coefficients, weights, pilot_rows)
    second = rng.choice(data.N, size=r, replace=True, p=pi)
    rows = np.concatenate([pilot_rows, second])
    w = np.concatenate([np.full(r0, data.N / r0), 1.0 / (r * pi[second])])
    w = w / w.mean()
    pool = data.subset(rows)
    spec = LikelihoodSpec("M", pool, weights=w)
    obj = Objective(spec.evaluator(), pool.D, 2, "multinomial", float(w.sum()))
    t1 = time.perf_counter()
    res = fit_objective(obj, cfg)
    res.aggregate_seconds = t1 - t0
    return res


# --- experiments ----------------------------------------------------------------

@dataclass
class ExperimentOptions:
    bins: int = 8
    tau: int | None = None
    quantile_bins: int = 10
    tail_trim: float = 0.01
    r0: int = 1000
    r: int = 1000
    subsample_weights: str = "mMSE"
    gtol: float = 1e-6
    max_iter: int = 500
    check_separation: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentOptions":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"options: unknown field '{sorted(unknown)[0]}'")
        return cls(**d)


@dataclass
class ExperimentResult:
    rows: list
    records: list = field(default_factory=list)

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in self.rows:
            vals = [row["method"], row["sweep_var"], _fmt(row["sweep_value"]),
                    _fmt(row["mean_pa"]), _fmt(row["mmse"]),
                    _fmt(row["fit_seconds"] if timing else float("nan")),
                    _fmt(row["total_seconds"] if timing else float("nan")),
                    str(row["replicates"])]
            w.writerow(vals)
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "NaN"
    return repr(v)


def _method_config(method: str, design: SimDesign, opts: ExperimentOptions,
                   bins: int) -> FitConfig:
    base = dict(bins=bins, gtol=opts.gtol, max_iter=opts.max_iter,
                check_separation=opts.check_separation)
    table = {
        "M": dict(family="M"),
        "O": dict(family="O"),
        "MM": dict(family="MM", tau=opts.tau if opts.tau is not None else 2 ** design.D),
        "O(1)": dict(family="composite", kind="classical", j=1),
        "SO(1)-indep": dict(family="composite", kind="symbolic", j=1, independent=True),
        "SO(1)-corr": dict(family="composite", kind="symbolic", j=1),
        "SO(2)": dict(family="composite", kind="symbolic", j=2),
        "naive": dict(family="composite", kind="naive", j=1),
        "OO(1)": dict(family="composite", kind="quantile", j=1,
                      quantile_bins=opts.quantile_bins, tail_trim=opts.tail_trim),
    }
    return FitConfig(**table[method], **base)


def _comparable(beta: Coefficients, truth: Coefficients):
    if beta.model == truth.model:
        return beta
    if beta.K == 2:
        return binary_contrast(beta)
    return None


def _run_method(method, design, opts, bins, train, test, truth, replicate):
    t0 = time.perf_counter()
    if method == "subsample":
        res = two_step_subsample(train, opts.r0, opts.r, design.seed, opts.subsample_weights,
                                 FitConfig(gtol=opts.gtol, max_iter=opts.max_iter),
                                 replicate)
    else:
        res = fit(_method_config(method, design, opts, bins), train)
    total = time.perf_counter() - t0
    pa = prediction_accuracy(predict(res.coefficients, test.X), test.y).overall
    comp = _comparable(res.coefficients, truth)
    sq = float("nan") if comp is None else float(np.sum((comp.beta - truth.beta) ** 2))
    return {"pa": pa, "sq_error": sq, "fit_seconds": res.seconds,
            "total_seconds": total, "converged": res.converged,
            "beta": res.coefficients}


def run_experiment(design: SimDesign, methods, sweep_var: str = "B", sweep_values=(8,),
                   options: ExperimentOptions | None = None, threads: int = 1,
                   keep_records: bool = False) -> ExperimentResult:
    """Mean accuracy, MMSE and timings per method and sweep point.

    Replicates whose fit fails (separated data) are left out of the means; the
    ``replicates`` column counts the ones that succeeded.
    """
    opts = options or ExperimentOptions()
    methods = list(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method '{bad[0]}'")
    if "subsample" in methods and design.K != 2:
        raise ValueError("method 'subsample' needs K=2")
    if sweep_var not in ("B", "N"):
        raise ValueError("sweep_var must be 'B' or 'N'")
    rows, records = [], []
    for value in sweep_values:
        d = replace(design, N=int(value)) if sweep_var == "N" else design
        bins = int(value) if sweep_var == "B" else opts.bins

        def replicate_task(s, d=d, bins=bins):
            train, test, truth = generate_synthetic(d, s)
            out = {}
            for m in methods:
                try:
                    out[m] = _run_method(m, d, opts, bins, train, test, truth, s)
                except NoMLEError:
                    out[m] = None
            return out

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor
            with ThreadPoolExecutor(threads) as ex:
                per_rep = list(ex.map(replicate_task, range(d.replicates)))
        else:
            per_rep = [replicate_task(s) for s in range(d.replicates)]
        for m in methods:
            ok = [(s, rep[m]) for s, rep in enumerate(per_rep) if rep[m] is not None]
            for s, rec in ok:
                if keep_records:
                    records.append({"method": m, "sweep_var": sweep_var,
                                    "sweep_value": value, "replicate": s, **rec})
            n_ok = len(ok)
            mean = (lambda key: float(np.mean([r[key] for _, r in ok])) if n_ok
                    else float("nan"))
            rows.append({"method": m, "sweep_var": sweep_var, "sweep_value": value,
                         "mean_pa": mean("pa"), "mmse": mean("sq_error"),
                         "fit_seconds": mean("fit_seconds"),
                         "total_seconds": mean("total_seconds"), "replicates": n_ok})
    return ExperimentResult(rows, records)
