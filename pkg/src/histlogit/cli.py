"""Command-line interface.

Exit codes: 0 success, 1 usage or input error, 2 computation error
(separation, non-convergence, numerical failure).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import aggregation as agg
from .composite import ProjectionStats, build_composite, estimate_projection_stats
from .dataset import DataError, Dataset, rank_normalize, read_csv, read_susy
from .estimation import (FitConfig, FitResult, NoMLEError, Objective, cross_validate, fit,
                         fit_objective)
from .model import predict, prediction_accuracy
from .separation import VertexBudgetError, detect_separation
from .simulation import ExperimentOptions, SimDesign, run_experiment

PRESETS = {
    "susy": "susy.json",
    "susy-quantile": "susy_quantile.json",
    "crop": "crop.json",
    "sim-bins": "sim_bins.json",
    "sim-subsample": "sim_subsample.json",
}


class UsageError(Exception):
    pass


class ComputationError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise UsageError(f"unknown preset '{name}' (choose from {', '.join(PRESETS)})")
    text = resources.files("histlogit").joinpath("presets", PRESETS[name]).read_text()
    return json.loads(text)


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _bins(text):
    try:
        vals = [int(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bins must be integers, got '{text}'") from None
    if any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("bins must be positive")
    return vals[0] if len(vals) == 1 else vals


def _load_data(path, fmt: str = "csv", rank: bool = False, K=None) -> Dataset:
    try:
        data = read_susy(path) if fmt == "susy" else read_csv(path, K)
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    if rank:
        data = Dataset(data.y, rank_normalize(data.X), data.K)
    return data


# --- summaries JSON ------------------------------------------------------------

def summaries_to_json(kind: str, data: Dataset, summaries, stats=None) -> dict:
    if kind == "marginal":
        body = [agg.summary_to_dict(h) for hs in summaries.values() for h in hs]
    elif kind == "quantile":
        body = [agg.summary_to_dict(q) for per_class in summaries for q in per_class]
    else:
        body = [agg.summary_to_dict(s) for s in summaries]
    out = {"schema_version": agg.SCHEMA_VERSION, "type": "summaries", "kind": kind,
           "K": data.K, "D": data.D, "N": data.N, "summaries": body}
    if stats is not None:
        out["projection_stats"] = stats.to_dict()
    return out


def summaries_from_json(d: dict):
    for key in ("kind", "K", "D", "summaries"):
        if key not in d:
            raise UsageError(f"summaries JSON: missing field '{key}'")
    kind, K, D = d["kind"], int(d["K"]), int(d["D"])
    items = [agg.summary_from_dict(s) for s in d["summaries"]]
    stats = (ProjectionStats.from_dict(d["projection_stats"])
             if d.get("projection_stats") else None)
    if kind in ("fixed", "mixed"):
        items.sort(key=lambda s: s.label)
        if [s.label for s in items] != list(range(1, K + 1)):
            raise UsageError("summaries JSON: field 'summaries' needs one entry per class")
        return kind, items, stats, D
    if kind == "marginal":
        out = {}
        for h in items:
            out.setdefault(tuple(h.subset), []).append(h)
        for hs in out.values():
            hs.sort(key=lambda h: h.label)
        return kind, out, stats, D
    if kind == "quantile":
        grid = [[None] * D for _ in range(K)]
        for q in items:
            grid[q.label - 1][q.margin] = q
        if any(q is None for row in grid for q in row):
            raise UsageError("summaries JSON: field 'summaries' misses a class/margin")
        return kind, grid, stats, D
    raise UsageError(f"summaries JSON: unknown kind '{kind}'")


# --- commands ------------------------------------------------------------------

def cmd_aggregate(args) -> int:
    data = _load_data(args.input, rank=args.rank_normalize)
    modes = sum(x is not None for x in (args.tau, args.quantile, args.marginal))
    if modes > 1:
        raise UsageError("choose at most one of --tau, --quantile, --marginal")
    stats = None
    if args.quantile is not None:
        kind = "quantile"
        summaries = agg.aggregate_quantile(data, args.quantile, args.tail_trim)
        stats = estimate_projection_stats(data, 1, args.independent)
    elif args.marginal is not None:
        kind = "marginal"
        summaries = agg.marginal_histograms(data, args.bins, args.marginal, args.shared_grid)
        stats = estimate_projection_stats(data, args.marginal, args.independent)
    elif args.tau is not None:
        kind = "mixed"
        summaries = agg.aggregate_mixed(data, args.bins, args.tau, args.shared_grid)
    else:
        kind = "fixed"
        summaries = agg.aggregate_fixed(data, args.bins, args.shared_grid)
    _write(args.output, json.dumps(summaries_to_json(kind, data, summaries, stats)) + "\n")
    return 0


def _config_from_args(args, base: dict | None = None) -> FitConfig:
    d = dict(base or {})
    for key, attr in (("family", "family"), ("kind", "kind"), ("j", "j"), ("bins", "bins"),
                      ("tau", "tau"), ("quantile_bins", "quantile_bins"),
                      ("tail_trim", "tail_trim"), ("penalty", "penalty"),
                      ("cv_folds", "folds"), ("nodes_per_dim", "nodes"),
                      ("variance_form", "variance_form"), ("max_iter", "max_iter"),
                      ("gtol", "gtol")):
        val = getattr(args, attr, None)
        if val is not None:
            d[key] = val
    if getattr(args, "independent", False):
        d["independent"] = True
    if getattr(args, "shared_grid", False):
        d["shared_grid"] = True
    if getattr(args, "no_check", False):
        d["check_separation"] = False
    d["seed"] = args.seed
    d["threads"] = args.threads
    try:
        return FitConfig.from_dict(d)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _split(data: Dataset, fraction: float, seed: int):
    rng = np.random.Generator(np.random.Philox(key=[seed, 7]))
    perm = rng.permutation(data.N)
    n_test = int(round(fraction * data.N))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def _subsample(data: Dataset, fraction: float, seed: int) -> Dataset:
    rng = np.random.Generator(np.random.Philox(key=[seed, 11]))
    n = max(1, int(round(fraction * data.N)))
    return data.subset(np.sort(rng.choice(data.N, size=n, replace=False)))


def _info(args, msg: str):
    # keep stdout clean for the document when it is written there
    print(msg, file=sys.stderr if args.output in (None, "-") else sys.stdout)


def _report_accuracy(args, label: str, beta, data: Dataset) -> dict:
    acc = prediction_accuracy(predict(beta, data.X), data.y, data.K)
    per = ", ".join(f"{k}: {v:.4f}" for k, v in acc.per_class.items())
    _info(args, f"{label} accuracy: {acc.overall:.4f} (per class {per})")
    return {"overall": acc.overall, "per_class": {str(k): v for k, v in acc.per_class.items()}}


def cmd_fit(args) -> int:
    preset = load_preset(args.preset) if args.preset else {}
    if preset and "fit" not in preset:
        raise UsageError(f"preset '{args.preset}' is not a fitting preset")
    config = _config_from_args(args, preset.get("fit"))
    path = Path(args.input)
    if path.suffix.lower() == ".json":
        if args.preset:
            raise UsageError("presets take raw data, not summaries")
        return _fit_summaries(args, config, _read_json(path))
    fmt = args.format or preset.get("format", "csv")
    rank = args.rank_normalize or preset.get("rank_normalize", False)
    data = _load_data(path, fmt, rank)
    if args.subsample is not None:
        data = _subsample(data, args.subsample, args.seed)
    test_fraction = args.test_fraction if args.test_fraction is not None else \
        preset.get("test_fraction", 0.0)
    train, test = (_split(data, test_fraction, args.seed) if test_fraction > 0
                   else (data, None))
    use_cv = args.cv or bool(preset)
    t0 = time.perf_counter()
    result = cross_validate(config, train) if use_cv else fit(config, train)
    wall = time.perf_counter() - t0
    doc = result.to_dict()
    doc["wall_seconds"] = wall
    doc["train_accuracy"] = _report_accuracy(args, "in-sample", result.coefficients, train)
    if test is not None and test.N:
        doc["test_accuracy"] = _report_accuracy(args, "test", result.coefficients, test)
    _info(args, f"fit seconds: {result.seconds:.3f} (total {wall:.3f}), "
          f"penalty: {result.penalty:g}, converged: {result.converged}")
    _write(args.output, json.dumps(doc, indent=1) + "\n")
    if not result.converged:
        print("error: optimiser did not converge", file=sys.stderr)
        return 2
    return 0


def _fit_summaries(args, config: FitConfig, doc: dict) -> int:
    kind, summaries, stats, D = summaries_from_json(doc)
    if args.cv:
        raise UsageError("cross-validation needs raw data")
    fam = config.family
    if kind in ("fixed", "mixed"):
        expected = {"fixed": ("SM", "SO"), "mixed": ("SM", "SO", "MM", "MO")}[kind]
        if fam not in expected:
            raise UsageError(f"{kind} summaries need --family {' or '.join(expected)}")
        result = fit(config, summaries)
    else:
        if fam != "composite":
            raise UsageError(f"{kind} summaries need --family composite")
        ckind = "quantile" if kind == "quantile" else config.kind
        if ckind == "classical":
            raise UsageError("classical composite fits need raw data")
        j = 1 if kind == "quantile" else len(next(iter(summaries)))
        if ckind == "naive":
            stats = None
        elif stats is None and j < D:
            raise UsageError("summaries JSON: missing field 'projection_stats'")
        if stats is not None and config.independent and stats.source != "assumed-independent":
            raise UsageError("stored projection stats are not the independent kind")
        ev = build_composite(summaries, j, ckind, stats, config.variance_form,
                             config.variance_constant, config.nodes_per_dim)
        K = int(doc["K"])
        sep = summaries if kind == "marginal" else None
        obj = Objective(ev, D, K, "ovr", float(doc.get("N", ev.n_obs)), sep, "ovr")
        result = fit_objective(obj, replace(config, check_separation=(
            config.check_separation and sep is not None)))
    _info(args, f"fit seconds: {result.seconds:.3f}, converged: {result.converged}")
    _write(args.output, json.dumps(result.to_dict(), indent=1) + "\n")
    return 0 if result.converged else 2


def _read_predict_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_y = header[0] == "y"
    body = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            body.append([float(v) for v in row])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    arr = np.asarray(body, dtype=float).reshape(len(body), len(header))
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{path}: non-finite input")
    if has_y:
        return arr[:, 1:], arr[:, 0].astype(np.int64)
    return arr, None


def cmd_predict(args) -> int:
    doc = _read_json(args.model)
    try:
        result = FitResult.from_dict(doc)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{args.model}: {exc}") from None
    X, y = _read_predict_csv(args.input)
    if args.rank_normalize:
        X = rank_normalize(X)
    beta = result.coefficients
    if X.shape[1] != beta.D:
        raise UsageError(f"model has D={beta.D} covariates, input has {X.shape[1]}")
    pred = predict(beta, X)
    lines = ["label"] + [str(int(p)) for p in pred]
    _write(args.output, "\n".join(lines) + "\n")
    if y is not None:
        acc = prediction_accuracy(pred, y, beta.K)
        _info(args, f"accuracy: {acc.overall:.4f}")
    return 0


def cmd_check(args) -> int:
    path = Path(args.input)
    if path.suffix.lower() == ".json":
        kind, summaries, _, _ = summaries_from_json(_read_json(path))
        if kind not in ("fixed", "mixed"):
            raise UsageError("check takes point data, fixed or mixed summaries")
        target = summaries
    else:
        data = _load_data(path, args.format or "csv")
        if args.bins is not None:
            target = (agg.aggregate_mixed(data, args.bins, args.tau) if args.tau
                      else agg.aggregate_fixed(data, args.bins))
        else:
            target = data
    report = detect_separation(target, args.scheme, args.vertex_budget)
    _write(args.output, json.dumps(report.to_dict(), indent=1) + "\n")
    return 0


def _experiment_from_json(doc: dict):
    for key in ("design", "methods", "sweep"):
        if key not in doc:
            raise UsageError(f"design JSON: missing field '{key}'")
    try:
        design = SimDesign.from_dict(doc["design"])
        options = ExperimentOptions.from_dict(doc.get("options", {}))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"design JSON: {exc}") from None
    sweep = doc["sweep"]
    if "var" not in sweep or "values" not in sweep:
        raise UsageError("design JSON: field 'sweep' needs 'var' and 'values'")
    return design, list(doc["methods"]), sweep["var"], list(sweep["values"]), options


def cmd_simulate(args) -> int:
    if (args.design is None) == (args.preset is None):
        raise UsageError("give exactly one of --design or --preset")
    doc = load_preset(args.preset) if args.preset else _read_json(args.design)
    design, methods, var, values, options = _experiment_from_json(doc)
    design = replace(design, seed=args.seed)
    if args.replicates is not None:
        design = replace(design, replicates=args.replicates)
    try:
        result = run_experiment(design, methods, var, values, options, threads=args.threads)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write(args.output, result.to_csv(timing=not args.no_timing))
    return 0


def cmd_bench(args) -> int:
    doc = load_preset(args.preset)
    design, _, _, _, options = _experiment_from_json(doc)
    design = replace(design, seed=args.seed)
    methods = args.methods.split(",")
    rows = ["N,method,fit_seconds,total_seconds,replicates"]
    for n in args.sizes:
        res = run_experiment(replace(design, replicates=args.replicates), methods, "N", [n],
                             replace(options, bins=args.bins), threads=1)
        for row in res.rows:
            rows.append(f"{n},{row['method']},{row['fit_seconds']!r},"
                        f"{row['total_seconds']!r},{row['replicates']}")
    _write(args.output, "\n".join(rows) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="histlogit", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=42, help="single source of randomness")
    p.add_argument("--threads", type=int, default=1, help="worker cap")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("aggregate", help="CSV -> histogram summaries JSON")
    a.add_argument("--input", required=True)
    a.add_argument("--output", default="-")
    a.add_argument("--bins", type=_bins, default=10)
    a.add_argument("--tau", type=int)
    a.add_argument("--quantile", type=int, metavar="B")
    a.add_argument("--tail-trim", type=float, default=0.0)
    a.add_argument("--marginal", type=int, metavar="J")
    a.add_argument("--independent", action="store_true")
    a.add_argument("--shared-grid", action="store_true")
    a.add_argument("--rank-normalize", action="store_true")
    a.set_defaults(func=cmd_aggregate)

    f = sub.add_parser("fit", help="raw CSV or summaries JSON -> fit result JSON")
    f.add_argument("--input", required=True)
    f.add_argument("--output", default="-")
    f.add_argument("--preset", choices=["susy", "susy-quantile", "crop"])
    f.add_argument("--format", choices=["csv", "susy"])
    f.add_argument("--family", choices=["M", "O", "SM", "SO", "MM", "MO", "composite"])
    f.add_argument("--kind", choices=["classical", "symbolic", "quantile", "naive"])
    f.add_argument("--j", type=int)
    f.add_argument("--bins", type=_bins)
    f.add_argument("--tau", type=int)
    f.add_argument("--quantile-bins", type=int)
    f.add_argument("--tail-trim", type=float)
    f.add_argument("--independent", action="store_true")
    f.add_argument("--variance-form", choices=["divided", "scaled"])
    f.add_argument("--shared-grid", action="store_true")
    f.add_argument("--nodes", type=int)
    f.add_argument("--penalty", type=float)
    f.add_argument("--cv", action="store_true")
    f.add_argument("--folds", type=int)
    f.add_argument("--gtol", type=float)
    f.add_argument("--max-iter", type=int)
    f.add_argument("--no-check", action="store_true", help="skip the separation check")
    f.add_argument("--test-fraction", type=float)
    f.add_argument("--subsample", type=float, metavar="FRACTION")
    f.add_argument("--rank-normalize", action="store_true")
    f.set_defaults(func=cmd_fit)

    r = sub.add_parser("predict", help="fit JSON + CSV -> labels CSV")
    r.add_argument("--model", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--output", default="-")
    r.add_argument("--rank-normalize", action="store_true")
    r.set_defaults(func=cmd_predict)

    c = sub.add_parser("check", help="separation report JSON")
    c.add_argument("--input", required=True)
    c.add_argument("--output", default="-")
    c.add_argument("--format", choices=["csv", "susy"])
    c.add_argument("--scheme", choices=["ovr", "multinomial"], default="ovr")
    c.add_argument("--bins", type=_bins)
    c.add_argument("--tau", type=int)
    c.add_argument("--vertex-budget", type=int, default=2_000_000)
    c.set_defaults(func=cmd_check)

    s = sub.add_parser("simulate", help="experiment design JSON -> result CSV")
    s.add_argument("--design")
    s.add_argument("--preset", choices=["sim-bins", "sim-subsample"])
    s.add_argument("--output", default="-")
    s.add_argument("--replicates", type=int)
    s.add_argument("--no-timing", action="store_true",
                   help="write NaN timings so the output is byte-reproducible")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="fit time against N at fixed B")
    b.add_argument("--preset", choices=["sim-bins", "sim-subsample"], default="sim-subsample")
    b.add_argument("--sizes", type=lambda t: [int(v) for v in t.split(",")],
                   default=[10000, 20000, 40000, 80000])
    b.add_argument("--bins", type=int, default=15)
    b.add_argument("--methods", default="M,SO(1)-corr")
    b.add_argument("--replicates", type=int, default=3)
    b.add_argument("--output", default="-")
    b.set_defaults(func=cmd_bench)
    return p


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, KeyError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except (NoMLEError, VertexBudgetError, ArithmeticError, np.linalg.LinAlgError,
            ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
