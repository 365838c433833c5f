"""Maximum (penalised) likelihood fitting, cross-validation and error metrics.

The objective minimised is ``-loglik(beta) / n + penalty * sum|slopes|``,
where ``n`` is the number of observations behind the likelihood. Intercepts
are never penalised and the multinomial reference column stays at zero.

L-BFGS-B does the heavy lifting; the L1 term is handled by splitting each
slope into non-negative positive and negative parts. Unpenalised fits finish
with a few Newton steps on a finite-difference Hessian of the analytic
gradient, which drives the gradient norm well below the tolerance.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import aggregation as agg
from .composite import LOGISTIC_VARIANCE, build_composite, estimate_projection_stats
from .dataset import Dataset
from .likelihood import LikelihoodSpec, model_of
from .model import Coefficients, predict, prediction_accuracy
from .separation import VertexBudgetError, detect_separation

FAMILIES = ("M", "O", "SM", "SO", "MM", "MO", "composite")
COMPOSITE_KINDS = ("classical", "symbolic", "quantile", "naive")


class NoMLEError(ArithmeticError):
    """Separated data: the maximum likelihood estimate does not exist."""


def default_penalty_grid() -> tuple:
    return tuple(float(v) for v in np.logspace(-4, 1, 25))


@dataclass(frozen=True)
class FitConfig:
    family: str = "M"
    # composite settings (family="composite")
    kind: str = "symbolic"
    j: int = 1
    independent: bool = False
    variance_form: str = "divided"
    variance_constant: float = LOGISTIC_VARIANCE
    # aggregation settings, used when fitting a summary family to raw data
    bins: object = 10
    tau: int | None = None
    quantile_bins: int = 10
    tail_trim: float = 0.0
    shared_grid: bool = False
    nodes_per_dim: int = 2
    # optimiser
    gtol: float = 1e-6
    ftol: float = 1e-8
    max_iter: int = 500
    polish: bool = True
    # regularisation
    penalty: float = 0.0
    penalty_grid: tuple = field(default_factory=default_penalty_grid)
    cv_folds: int = 10
    seed: int = 0
    threads: int = 1
    check_separation: bool = True
    vertex_budget: int = 2_000_000

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}")
        if self.family == "composite" and self.kind not in COMPOSITE_KINDS:
            raise ValueError(f"kind must be one of {COMPOSITE_KINDS}")
        if self.gtol <= 0 or self.ftol <= 0 or self.max_iter < 1:
            raise ValueError("tolerances must be positive and max_iter >= 1")
        if self.penalty < 0:
            raise ValueError("penalty must be non-negative")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.tau is not None and self.tau < 1:
            raise ValueError("tau must be a positive integer")

    @property
    def model(self) -> str:
        return "ovr" if self.family == "composite" else model_of(self.family)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["penalty_grid"] = list(self.penalty_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"fit config: unknown field '{sorted(unknown)[0]}'")
        d = dict(d)
        if "penalty_grid" in d:
            d["penalty_grid"] = tuple(d["penalty_grid"])
        return cls(**d)


@dataclass
class FitResult:
    coefficients: Coefficients
    loglik: float
    iterations: int
    converged: bool
    seconds: float
    grad_norm: float
    penalty: float = 0.0
    aggregate_seconds: float = 0.0
    cv_scores: dict | None = None
    config: FitConfig | None = None

    def to_dict(self) -> dict:
        from .aggregation import SCHEMA_VERSION
        return {
            "schema_version": SCHEMA_VERSION,
            "type": "fit_result",
            "coefficients": self.coefficients.to_dict(),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "seconds": self.seconds,
            "aggregate_seconds": self.aggregate_seconds,
            "grad_norm": self.grad_norm,
            "penalty": self.penalty,
            "cv_scores": None if self.cv_scores is None
            else [[k, v] for k, v in self.cv_scores.items()],
            "config": None if self.config is None else self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        for key in ("coefficients", "loglik", "iterations", "converged", "seconds",
                    "grad_norm"):
            if key not in d:
                raise ValueError(f"fit result JSON: missing field '{key}'")
        cv = d.get("cv_scores")
        cfg = d.get("config")
        return cls(Coefficients.from_dict(d["coefficients"]), float(d["loglik"]),
                   int(d["iterations"]), bool(d["converged"]), float(d["seconds"]),
                   float(d["grad_norm"]), float(d.get("penalty", 0.0)),
                   float(d.get("aggregate_seconds", 0.0)),
                   None if cv is None else {float(k): float(v) for k, v in cv},
                   None if cfg is None else FitConfig.from_dict(cfg))


# --- objective construction ---------------------------------------------------

@dataclass
class Objective:
    evaluator: object
    D: int
    K: int
    model: str
    n_obs: float
    separation_input: object = None
    separation_scheme: str = "ovr"


def _default_tau(D: int, j: int | None = None) -> int:
    return 2 ** (D if j is None else j)


def build_objective(config: FitConfig, data) -> Objective:
    """Turn raw data or summaries into the likelihood the config asks for."""
    fam = config.family
    if isinstance(data, Dataset):
        if np.any(data.class_counts() == 0):
            raise agg.DataError("empty class")
        D, K = data.D, data.K
        if fam in ("M", "O"):
            spec = LikelihoodSpec(fam, data)
            return Objective(spec.evaluator(), D, K, spec.model, data.N, data, spec.model)
        if fam in ("SM", "SO"):
            return build_objective(config, agg.aggregate_fixed(data, config.bins,
                                                               config.shared_grid))
        if fam in ("MM", "MO"):
            tau = config.tau if config.tau is not None else _default_tau(D)
            return build_objective(config, agg.aggregate_mixed(data, config.bins, tau,
                                                               config.shared_grid))
        stats = None
        if config.kind != "naive":
            stats = estimate_projection_stats(data, config.j, config.independent)
        if config.kind == "classical":
            handle, sep = data, data
        elif config.kind == "quantile":
            handle = agg.aggregate_quantile(data, config.quantile_bins, config.tail_trim)
            sep = data
        else:
            handle = agg.marginal_histograms(data, config.bins, config.j, config.shared_grid)
            sep = handle
        kind = config.kind
        ev = build_composite(handle, config.j, kind, stats, config.variance_form,
                             config.variance_constant, config.nodes_per_dim)
        return Objective(ev, D, K, "ovr", data.N, sep, "ovr")
    if fam in ("SM", "SO", "MM", "MO"):
        spec = LikelihoodSpec(fam, list(data), config.nodes_per_dim)
        return Objective(spec.evaluator(), spec.D, spec.K, spec.model,
                         spec.evaluator().n_obs, list(spec.data), spec.model)
    if fam == "composite":
        raise ValueError("composite fits from summaries need fit_composite()")
    raise TypeError(f"family {fam} needs a Dataset")


def _separated(obj: Objective, config: FitConfig) -> str:
    inp = obj.separation_input
    if inp is None:
        return "none"
    try:
        if isinstance(inp, dict):
            return max((detect_separation(h, "ovr", config.vertex_budget).status
                        for h in inp.values()),
                       key=("none", "quasi-complete", "complete").index)
        return detect_separation(inp, obj.separation_scheme, config.vertex_budget).status
    except VertexBudgetError:
        return "none"


# --- optimiser ------------------------------------------------------------------

class _Problem:
    def __init__(self, obj: Objective, penalty: float):
        self.obj = obj
        self.p = obj.D + 1
        self.cols = obj.K - 1 if obj.model == "multinomial" else obj.K
        self.n = max(float(obj.n_obs), 1.0)
        self.penalty = penalty
        self.n_free = self.p * self.cols

    def unpack(self, theta):
        B = np.zeros((self.p, self.obj.K))
        B[:, :self.cols] = theta.reshape(self.p, self.cols)
        return B

    def smooth(self, theta):
        """Scaled negative log-likelihood and its gradient in theta."""
        ll, G = self.obj.evaluator(self.unpack(theta))
        return -ll / self.n, -G[:, :self.cols].ravel() / self.n

    # split parametrisation: theta = intercepts + (pos - neg) on slope rows
    def split_obj(self, z):
        n_int = self.cols
        n_sl = self.n_free - n_int
        theta = np.concatenate([z[:n_int], z[n_int:n_int + n_sl] - z[n_int + n_sl:]])
        f, g = self.smooth(theta)
        gs = g[n_int:]
        f += self.penalty * np.sum(z[n_int:])
        return f, np.concatenate([g[:n_int], gs + self.penalty, -gs + self.penalty])

    def split_theta(self, z):
        n_int = self.cols
        n_sl = self.n_free - n_int
        return np.concatenate([z[:n_int], z[n_int:n_int + n_sl] - z[n_int + n_sl:]])

    def optimality(self, theta) -> float:
        """Inf-norm of the (sub)gradient residual of the scaled objective."""
        _, g = self.smooth(theta)
        if self.penalty == 0:
            return float(np.max(np.abs(g)))
        n_int = self.cols
        gi, gs, ts = g[:n_int], g[n_int:], theta[n_int:]
        nz = ts != 0
        r = np.empty_like(gs)
        r[nz] = np.abs(gs[nz] + self.penalty * np.sign(ts[nz]))
        r[~nz] = np.maximum(np.abs(gs[~nz]) - self.penalty, 0.0)
        return float(max(np.max(np.abs(gi), initial=0.0), np.max(r, initial=0.0)))


def _newton_polish(prob: _Problem, theta, target: float, max_steps: int = 8):
    f, g = prob.smooth(theta)
    steps = 0
    for _ in range(max_steps):
        gn = np.max(np.abs(g))
        if gn <= target:
            break
        m = theta.size
        H = np.empty((m, m))
        for i in range(m):
            h = 1e-5 * max(1.0, abs(theta[i]))
            e = np.zeros(m)
            e[i] = h
            H[:, i] = (prob.smooth(theta + e)[1] - prob.smooth(theta - e)[1]) / (2 * h)
        H = (H + H.T) / 2
        try:
            step = -np.linalg.solve(H + 1e-12 * np.eye(m), g)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        accepted = False
        for _ in range(30):
            cand = theta + t * step
            fc, gc = prob.smooth(cand)
            if np.isfinite(fc) and (fc <= f + 1e-12 * abs(f)
                                    or np.max(np.abs(gc)) < gn):
                theta, f, g = cand, fc, gc
                accepted = True
                break
            t /= 2
        steps += 1
        if not accepted:
            break
    return theta, steps


def _optimise(obj: Objective, config: FitConfig, penalty: float, theta0=None):
    prob = _Problem(obj, penalty)
    x0 = np.zeros(prob.n_free) if theta0 is None else np.asarray(theta0, float)
    opts = {"maxiter": config.max_iter, "gtol": config.gtol * 1e-2,
            "ftol": config.ftol * 1e-6, "maxcor": 20}
    if penalty == 0:
        res = minimize(prob.smooth, x0, jac=True, method="L-BFGS-B", options=opts)
        theta = res.x
        iters = int(res.nit)
        if config.polish:
            # aim for the unscaled gradient target; stops early if rounding prevents it
            theta, extra = _newton_polish(prob, theta, config.gtol / prob.n,
                                          min(8, config.max_iter - iters))
            iters += extra
    else:
        n_int = prob.cols
        sl = x0[n_int:]
        z0 = np.concatenate([x0[:n_int], np.maximum(sl, 0), np.maximum(-sl, 0)])
        bounds = [(None, None)] * n_int + [(0, None)] * (2 * (prob.n_free - n_int))
        res = minimize(prob.split_obj, z0, jac=True, method="L-BFGS-B",
                       bounds=bounds, options=opts)
        theta = prob.split_theta(res.x)
        iters = int(res.nit)
    resid = prob.optimality(theta)
    B = prob.unpack(theta)
    ll, G = obj.evaluator(B)
    converged = bool(resid <= config.gtol and np.all(np.isfinite(theta)))
    grad = float(np.max(np.abs(G[:, :prob.cols])))
    return B, float(ll), iters, converged, grad


def fit(config: FitConfig, data, theta0=None) -> FitResult:
    """Maximise the configured likelihood on raw data or summaries.

    Raises
    ------
    NoMLEError
        when the separation pre-check finds separated data.
    """
    t0 = time.perf_counter()
    obj = build_objective(config, data)
    t1 = time.perf_counter()
    if config.check_separation:
        status = _separated(obj, config)
        if status != "none":
            raise NoMLEError(f"MLE does not exist ({status} separation)")
    t2 = time.perf_counter()
    B, ll, iters, converged, grad = _optimise(obj, config, config.penalty, theta0)
    t3 = time.perf_counter()
    return FitResult(Coefficients(B, obj.model), ll, iters, converged, t3 - t2, grad,
                     config.penalty, t1 - t0, None, config)


def fit_objective(obj: Objective, config: FitConfig) -> FitResult:
    """Fit a pre-built objective (e.g. a composite built from stored summaries)."""
    t0 = time.perf_counter()
    if config.check_separation and _separated(obj, config) != "none":
        raise NoMLEError("MLE does not exist")
    t1 = time.perf_counter()
    B, ll, iters, converged, grad = _optimise(obj, config, config.penalty)
    return FitResult(Coefficients(B, obj.model), ll, iters, converged,
                     time.perf_counter() - t1, grad, config.penalty, 0.0, None, config)


def fold_assignment(N: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.permutation(np.arange(N) % folds)


def cross_validate(config: FitConfig, data: Dataset) -> FitResult:
    """Pick the penalty with the best mean held-out accuracy, then refit on all data.

    Ties go to the larger penalty. Folds whose training part cannot be fitted
    (separation, empty class) score zero for that penalty.
    """
    if not isinstance(data, Dataset):
        raise TypeError("cross-validation needs raw data")
    grid = tuple(sorted(set(float(p) for p in config.penalty_grid)))
    if not grid:
        raise ValueError("penalty grid is empty")
    folds = fold_assignment(data.N, config.cv_folds, config.seed)

    def score(args):
        pen, f = args
        train = data.subset(folds != f)
        test = data.subset(folds == f)
        cfg = _replace(config, penalty=pen, check_separation=False)
        try:
            res = fit(cfg, train)
        except (NoMLEError, ValueError, ArithmeticError):
            return 0.0
        return prediction_accuracy(predict(res.coefficients, test.X), test.y).overall

    jobs = [(p, f) for p in grid for f in range(config.cv_folds)]
    if config.threads > 1:
        with ThreadPoolExecutor(config.threads) as ex:
            accs = list(ex.map(score, jobs))
    else:
        accs = [score(j) for j in jobs]
    accs = np.asarray(accs).reshape(len(grid), config.cv_folds)
    means = accs.mean(axis=1)
    best = max(range(len(grid)), key=lambda i: (means[i], grid[i]))
    res = fit(_replace(config, penalty=grid[best]), data)
    res.cv_scores = {p: float(m) for p, m in zip(grid, means)}
    return res


def _replace(config: FitConfig, **changes) -> FitConfig:
    d = {k: getattr(config, k) for k in config.__dataclass_fields__}
    d.update(changes)
    return FitConfig(**d)


# --- metrics --------------------------------------------------------------------

def binary_contrast(beta: Coefficients) -> Coefficients:
    """Express a K=2 fit on the multinomial scale (class 2 as reference).

    Two independent one-vs-rest columns estimate ``+eta`` and ``-eta``; their
    half-difference is the multinomial log-odds column.
    """
    if beta.K != 2:
        raise ValueError("binary contrast needs K=2")
    if beta.model == "multinomial":
        return beta
    B = np.zeros_like(beta.beta)
    B[:, 0] = (beta.beta[:, 0] - beta.beta[:, 1]) / 2
    return Coefficients(B, "multinomial")


def mmse(estimates, truth: Coefficients) -> float:
    """Mean over estimates of the squared Euclidean distance to ``truth``."""
    estimates = list(estimates)
    if not estimates:
        raise ValueError("no estimates")
    T = truth.beta if isinstance(truth, Coefficients) else np.asarray(truth, float)
    total = 0.0
    for e in estimates:
        E = e.beta if isinstance(e, Coefficients) else np.asarray(e, float)
        if E.shape != T.shape:
            raise ValueError(f"shape mismatch: {E.shape} vs {T.shape}")
        total += float(np.sum((E - T) ** 2))
    return total / len(estimates)

