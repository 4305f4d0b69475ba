"""Command-line front end.

Subcommands: ``estimate``, ``tune``, ``benchmark``, ``oracle`` and
``report``.  Library errors are written to stderr as one JSON object and
mapped to exit codes: 2 for usage and configuration errors, 3 for data
that cannot be read, 4 for numerical or degenerate results.

``QOSA_FOREST_THREADS`` sets the number of worker threads used by
``benchmark`` replications and the Monte-Carlo oracle (default 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import warnings

from . import __version__
from ._rng import child_seed
from .bench import SWEEP_AXES, ExperimentConfig, dimension_sweep, run_experiment
from .cond_dist import CondQuantileMethod, check_alphas
from .dataset import Dataset, generate, load_csv, parse_model
from .errors import ConfigurationError, IngestionError, QosaError
from .forest import ForestParams
from .oracle import mc_brute_force, qosa_true
from .qosa.estimators import ESTIMATOR_TAGS, EstimatorId
from .qosa.procedure import TUNING_STRATEGIES, QosaResult, estimate_qosa
from .tuning import LeafGrid, cv_tune, oob_tune

__all__ = ["main", "build_parser", "ranked_report", "THREADS_ENV"]

THREADS_ENV = "QOSA_FOREST_THREADS"
FORMATS = ("json", "csv", "tsv")


class _UsageError(ConfigurationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _alphas(text: str) -> list:
    try:
        values = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse alpha list {text!r}") from None
    return [float(a) for a in check_alphas(values)]


def _ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse integer list {text!r}") from None


def _add_source(p):
    src = p.add_argument_group("data source (exactly one)")
    src.add_argument("--csv", help="CSV file with a header row")
    src.add_argument("--model", help="synthetic model: exp-diff or additive-exp:<rates>")
    src.add_argument("--output", help="output column of the CSV file")
    src.add_argument("--n", type=int, default=10_000, help="rows drawn from --model")
    src.add_argument("--eval-csv", help="second CSV file used as the evaluation sample")
    src.add_argument("--inputs", help="comma-separated input names (default: all)")


def _add_forest(p):
    p.add_argument("--alpha", default="0.5", help="comma-separated levels in (0, 1)")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--grid", default="5:300:20", help="leaf sizes, lo:hi:count or a list")
    p.add_argument("--tuning", choices=TUNING_STRATEGIES, default="cv")
    p.add_argument("--folds", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)


def _add_output(p):
    p.add_argument("--format", choices=FORMATS, default="json")
    p.add_argument("--out", help="write here instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="qosa-forest",
        description="Random-forest estimation of first-order quantile-oriented sensitivity indices.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="estimate the indices of every input")
    _add_source(p)
    _add_forest(p)
    p.add_argument("--estimator", default="Q2o", help=f"one of {' '.join(ESTIMATOR_TAGS)}")
    p.add_argument("--p-variant", choices=("P1", "P2"), default="P1")
    p.add_argument("--leaf-size", type=int, help="fixed leaf size (skips tuning)")
    p.add_argument("--full-leaf-size", type=int, default=2, help="leaf size of the Q3 forest")
    p.add_argument("--refit-oob", action="store_true",
                   help="report the out-of-bag error of each refitted forest")
    p.add_argument("--timings", action="store_true", help="include wall times in the output")
    _add_output(p)

    p = sub.add_parser("tune", help="select leaf sizes by cross-validation or out-of-bag error")
    _add_source(p)
    _add_forest(p)
    p.add_argument("--method", default="R1o", help="quantile estimator: R1b R1o R2b R2o")
    p.add_argument("--timings", action="store_true", help="include wall times in the output")
    _add_output(p)

    p = sub.add_parser("benchmark", help="replicated experiment on a synthetic model")
    p.add_argument("--model", required=True)
    p.add_argument("--estimators", default="Q1o", help="comma-separated estimator ids")
    _add_forest(p)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--replications", type=int, default=20)
    p.add_argument("--sweep", choices=SWEEP_AXES, default="none")
    p.add_argument("--values", default="", help="comma-separated sweep values")
    p.add_argument("--leaf-size", type=int)
    p.add_argument("--full-leaf-size", type=int, default=2)
    _add_output(p)

    p = sub.add_parser("oracle", help="true index values of a synthetic model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="comma-separated 1-based input numbers (default: all)")
    p.add_argument("--alpha", default="0.5")
    p.add_argument("--mc", action="store_true", help="add the Monte-Carlo brute-force value")
    p.add_argument("--n-outer", type=int, default=2000)
    p.add_argument("--n-inner", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("report", help="rank inputs and normalize the indices")
    p.add_argument("estimates", help="JSON written by 'estimate' ('-' for stdin)")
    _add_output(p)
    return parser


def _emit(text: str, out: str | None):
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _rows(rows: list, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2)
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), delimiter="," if fmt == "csv" else "\t",
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else v for k, v in r.items()})
    return buf.getvalue()


def _load(args):
    """Training data and optional evaluation data from the source flags."""
    if bool(args.csv) == bool(args.model):
        raise _UsageError("give exactly one of --csv and --model")
    if args.csv:
        if not args.output:
            raise _UsageError("--output is required with --csv")
        data = load_csv(args.csv, args.output)
        ev = load_csv(args.eval_csv, args.output) if args.eval_csv else None
    else:
        if args.eval_csv:
            raise _UsageError("--eval-csv goes with --csv")
        data = generate(parse_model(args.model), args.n, child_seed(args.seed, "data"))
        ev = None
    if ev is not None and ev.input_names != data.input_names:
        raise IngestionError("the two CSV files have different columns")
    return data, ev


def _inputs(args, data: Dataset):
    if not args.inputs:
        return None
    names = [t.strip() for t in args.inputs.split(",") if t.strip()]
    unknown = [t for t in names if t not in data.input_names]
    if unknown:
        raise ConfigurationError(f"unknown inputs {unknown}; available {list(data.input_names)}")
    return [data.input_names.index(t) for t in names]


def _strip_times(d: dict) -> dict:
    for t in d.get("tuning", []):
        t.pop("wall_time", None)
    return d


def cmd_estimate(args) -> str:
    est = EstimatorId(args.estimator, args.p_variant)
    data, ev = _load(args)
    if est.needs_eval_sample and ev is None:
        data, ev = data.split(child_seed(args.seed, "split"))
    result = estimate_qosa(
        data,
        _alphas(args.alpha),
        est,
        eval_data=ev,
        n_trees=args.trees,
        tuning=args.tuning,
        grid=LeafGrid.parse(args.grid),
        folds=args.folds,
        leaf_size=args.leaf_size,
        full_leaf_size=args.full_leaf_size,
        seed=args.seed,
        inputs=_inputs(args, data),
        refit_oob=args.refit_oob,
    )
    if args.format == "json":
        d = result.to_dict()
        return json.dumps(d if args.timings else _strip_times(d), indent=2)
    return _rows([e.to_dict() for e in result.estimates], args.format)


def cmd_tune(args) -> str:
    method = CondQuantileMethod.from_tag(args.method)
    data, _ = _load(args)
    grid = LeafGrid.parse(args.grid)
    alphas = _alphas(args.alpha)
    inputs = _inputs(args, data)
    rows = []
    for i in range(data.d) if inputs is None else inputs:
        params = ForestParams(n_trees=args.trees, seed=child_seed(args.seed, "input", i))
        if args.tuning == "cv":
            reports = cv_tune(data.view(i), grid, args.folds, alphas, method, params)
        elif args.tuning == "oob":
            reports = oob_tune(data.view(i), grid, alphas, method, params, keep_forest=False)
        else:
            raise _UsageError("tune needs --tuning cv or oob")
        for r in reports:
            d = dict(r.to_dict(), input_index=i, input_name=data.input_names[i])
            if not args.timings:
                d.pop("wall_time")
            rows.append(d)
    if args.format == "json":
        return json.dumps(rows, indent=2)
    flat = [
        {k: v for k, v in r.items() if k not in ("grid", "errors", "fold_errors", "skipped_observations")}
        for r in rows
    ]
    return _rows(flat, args.format)


def cmd_benchmark(args) -> str:
    cfg = ExperimentConfig(
        model=parse_model(args.model),
        estimators=tuple(t.strip() for t in args.estimators.split(",") if t.strip()),
        alphas=tuple(_alphas(args.alpha)),
        n=args.n,
        n_eval=args.n_eval,
        n_trees=args.trees,
        replications=args.replications,
        grid=LeafGrid.parse(args.grid),
        tuning=args.tuning,
        folds=args.folds,
        seed=args.seed,
        sweep=args.sweep,
        sweep_values=tuple(_ints(args.values)),
        leaf_size=args.leaf_size,
        full_leaf_size=args.full_leaf_size,
    )
    workers = _threads()
    if cfg.sweep == "dimension":
        report = dimension_sweep(cfg, workers=workers)
    else:
        report = run_experiment(cfg, workers=workers)
    return report.dumps(args.format)


def cmd_oracle(args) -> str:
    model = parse_model(args.model)
    d = model.dimension
    inputs = _ints(args.input) if args.input else list(range(1, d + 1))
    rows = []
    for a in _alphas(args.alpha):
        for i in inputs:
            row = {"model": model.model_id, "input": i, "alpha": a, "value": qosa_true(model, i, a)}
            if args.mc:
                mc = mc_brute_force(model, i, a, args.n_outer, args.n_inner, args.seed,
                                    workers=_threads())
                row.update(mc_value=mc.value, mc_stderr=mc.stderr)
            rows.append(row)
    return json.dumps(rows, indent=2)


def ranked_report(estimates) -> list:
    """Per level, inputs sorted by decreasing index with normalized shares.

    ``estimates`` are :class:`QosaEstimate` records or their dicts.  Shares
    are ``max(S_i, 0) / sum_j max(S_j, 0)``; negative estimates are floored
    for the share only and flagged.  When every floored value is zero the
    shares are ``None`` and a warning is issued.
    """
    recs = [e if isinstance(e, dict) else e.to_dict() for e in estimates]
    if not recs:
        raise ConfigurationError("no estimates to report")
    rows = []
    for alpha in sorted({r["alpha"] for r in recs}):
        group = sorted((r for r in recs if r["alpha"] == alpha),
                       key=lambda r: (-r["s_hat"], r["input_index"]))
        total = sum(max(r["s_hat"], 0.0) for r in group)
        if not total > 0:
            warnings.warn(f"indices at alpha={alpha} sum to zero; shares not computed", stacklevel=2)
        for rank, r in enumerate(group, start=1):
            rows.append({
                "alpha": alpha,
                "rank": rank,
                "input_index": r["input_index"],
                "input_name": r.get("input_name", ""),
                "s_hat": r["s_hat"],
                "share": max(r["s_hat"], 0.0) / total if total > 0 else None,
                "floored": r["s_hat"] < 0,
                "estimator": r.get("estimator", ""),
            })
    return rows


def cmd_report(args) -> str:
    try:
        if args.estimates == "-":
            payload = json.load(sys.stdin)
        else:
            with open(args.estimates, encoding="utf-8") as fh:
                payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"no such file: {args.estimates}") from None
    except json.JSONDecodeError as exc:
        raise IngestionError(f"cannot parse estimates JSON: {exc}") from None
    try:
        result = QosaResult.from_dict(payload)
    except (TypeError, KeyError, AttributeError) as exc:
        raise IngestionError(f"not an estimate report: {exc}") from None
    return _rows(ranked_report(result.estimates), args.format)


COMMANDS = {
    "estimate": cmd_estimate,
    "tune": cmd_tune,
    "benchmark": cmd_benchmark,
    "oracle": cmd_oracle,
    "report": cmd_report,
}


def _fail(exc: QosaError) -> int:
    code = exc.exit_code
    json.dump({"error": type(exc).__name__.lstrip("_"), "message": str(exc), "exit_code": code},
              sys.stderr)
    sys.stderr.write("\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        text = COMMANDS[args.command](args)
        _emit(text, getattr(args, "out", None))
    except QosaError as exc:
        return _fail(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
