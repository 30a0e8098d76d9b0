"""``prunekit`` command-line tool.

Subcommands::

    prunekit synth    --out data.bin [--split 0.2]
    prunekit prune    --data data.bin (--epsilon E | --keep-m M) --out run/
    prunekit baseline --data data.bin --method el2n --ratios 0.3,0.5 --out base/
    prunekit oracle   --train train.bin --test test.bin --masks run/mask.json ... --out gaps/
    prunekit verify   [--quick]

Exit codes: 0 success, 1 invalid configuration or arguments, 2 data error,
3 solver error, 4 failed verification.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, baselines
from .benchmark import STANDARD_LAMBDA, standard_dataset
from .config import RunConfig, load_config
from .data_io import (
    load_dataset,
    load_mask_meta,
    make_synthetic,
    save_dataset,
    save_mask,
    train_test_split,
    trace_path_for,
    write_csv,
    write_report,
    write_scores,
)
from .errors import ConfigError, DataError, PrunekitError
from .influence import build_hessian, influence_vectors
from .oracle import correlation, loo_sweep, measure_gap
from .pruner import prune_cardinality, prune_generalization
from .trainer import accuracy, fit_erm, fit_sgd_traced, training_objective
from .types import PruneMask

logger = logging.getLogger("prunekit")

EXIT_VERIFY = 4
ORACLE_COLUMNS = ("method", "m", "epsilon", "achieved_norm", "predicted_gap", "measured_gap", "bound_value", "seed")


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _parse_floats(text: str, what: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text: str, what: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated integers, got {text!r}") from None


def _config(args, overrides: dict, sources: Optional[set] = None) -> RunConfig:
    common = {
        "anneal.threads": getattr(args, "threads", None),
        "run.plots": False if getattr(args, "no_plots", False) else None,
    }
    return load_config(args.config, overrides={**common, **overrides}, sources=sources)


def _require(value, flag: str, key: str):
    if value is None:
        raise ConfigError(f"{flag} is required (or set {key} in the config file)")
    return value


def _fit_and_influence(cfg: RunConfig, data):
    params = fit_erm(data, cfg.train)
    hessian = build_hessian(params, data, mode=cfg.run.hessian_mode)
    S = influence_vectors(params, data, cfg.ihvp, grad_tol=cfg.train.grad_tol, hessian=hessian)
    return params, S


def _plot(cfg: RunConfig, fn, *args) -> None:
    if not cfg.run.plots:
        return
    from . import plotting

    path = getattr(plotting, fn)(*args)
    logger.info("wrote %s", path)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_prune(args) -> int:
    if args.epsilon is not None and args.keep_m is not None:
        raise ConfigError("--epsilon and --keep-m are mutually exclusive: pass one to pick the pruning mode")
    cfg = _config(
        args,
        {
            "paths.data": args.data,
            "paths.test": args.test,
            "paths.out": args.out,
            "run.epsilon": args.epsilon,
            "run.keep_m": args.keep_m,
            "run.max_prune_fraction": args.max_prune_fraction,
            "ihvp.method": args.method,
            "anneal.seed": args.seed,
            "anneal.iterations": args.iterations,
            "anneal.restarts": args.restarts,
            "train.reg_lambda": args.reg_lambda,
        },
    )
    eps, keep_m = cfg.run.epsilon, cfg.run.keep_m
    if (eps is None) == (keep_m is None):
        raise ConfigError("pass exactly one of --epsilon or --keep-m")
    data = load_dataset(_require(cfg.paths.data, "--data", "paths.data"))
    out = Path(cfg.paths.out or "prune_out")

    params, S = _fit_and_influence(cfg, data)
    if eps is not None:
        cap = int(np.floor(cfg.run.max_prune_fraction * data.n))
        report = prune_generalization(S, eps, cfg.anneal, max_selected=cap)
    else:
        if not 0 <= keep_m <= data.n:
            raise ConfigError(f"--keep-m {keep_m} outside [0, n={data.n}]")
        report = prune_cardinality(S, data.n - keep_m, cfg.anneal)

    report.extras.update(
        {
            "train_accuracy": accuracy(params, data),
            "train_objective": training_objective(params, data),
            "ihvp_method": cfg.ihvp.method,
            "hessian_mode": cfg.run.hessian_mode,
            "reg_lambda": cfg.train.reg_lambda,
        }
    )
    if cfg.paths.test is not None:
        test = load_dataset(cfg.paths.test)
        gap = measure_gap(data, test, report.mask, cfg.train, epsilon=eps, params=params, S=S)
        report.predicted_gap = gap.predicted_gap
        report.measured_gap = gap.measured_gap
        report.extras["gap"] = gap.to_dict()

    save_mask(report.mask, out / "mask.json", method="optimized", mode=report.mode, epsilon=eps, seed=cfg.anneal.seed)
    report_path = write_report(report, out / "report.json")
    if report.objective_trace:
        its, vals = zip(*report.objective_trace)
        _plot(cfg, "plot_objective_trace", its, vals, out / "report_trace.png", f"{report.mode} mode")
    print(
        f"pruned {report.m} of {data.n} samples ({report.mode} mode), "
        f"achieved norm {report.achieved_norm:.6g}, feasible={report.feasible}"
    )
    print(f"wrote {out / 'mask.json'}, {report_path}, {trace_path_for(report_path)}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(
        args,
        {"paths.data": args.data, "paths.out": args.out, "train.reg_lambda": args.reg_lambda, "ihvp.method": args.method_ihvp},
    )
    method = args.method
    if method not in baselines.METHODS:
        raise ConfigError(f"unknown baseline method {method!r}; choose from {', '.join(baselines.METHODS)}")
    if method == "forgetting" and args.sgd_epochs is None:
        raise ConfigError("method 'forgetting' needs an SGD trace: pass --sgd-epochs")
    ratios = _parse_floats(args.ratios, "--ratios")
    for r in ratios:
        baselines.prune_count(1, r)
    data = load_dataset(_require(cfg.paths.data, "--data", "paths.data"))
    out = Path(cfg.paths.out or "baseline_out")

    ctx = {"dataset": data, "seed": args.seed, "n": data.n}
    if method in ("grand", "el2n"):
        ctx["params"] = fit_erm(data, cfg.train)
    elif method == "influence_norm":
        ctx["params"], ctx["influence"] = _fit_and_influence(cfg, data)
    elif method == "forgetting":
        _, ctx["trace"] = fit_sgd_traced(
            data, args.sgd_epochs, args.sgd_lr, min(args.sgd_batch_size, data.n), args.seed, cfg.train.reg_lambda
        )
    scores = baselines.score(method, baselines.ScoringContext(**ctx))
    write_scores(scores.scores, out / f"scores_{method}.csv")
    for ratio in ratios:
        m = baselines.prune_count(data.n, ratio)
        mask = baselines.select_keep(scores, data.n - m)
        path = save_mask(mask, out / f"mask_{method}_{ratio:g}.json", method=method, ratio=ratio, seed=args.seed)
        print(f"{method} ratio {ratio:g}: pruned {mask.selected_count} of {data.n} -> {path}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _config(
        args,
        {
            "paths.data": args.train,
            "paths.test": args.test,
            "paths.out": args.out,
            "train.reg_lambda": args.reg_lambda,
        },
    )
    train = load_dataset(_require(cfg.paths.data, "--train", "paths.data"))
    test = load_dataset(_require(cfg.paths.test, "--test", "paths.test"))
    out = Path(cfg.paths.out or "oracle_out")
    seeds = _parse_ints(args.seeds, "--seeds")
    if not seeds:
        raise ConfigError("--seeds must name at least one seed")

    masks = []
    for path in args.masks or []:
        mask, meta = load_mask_meta(path)
        if mask.n != train.n:
            raise DataError(f"{path}: mask has n={mask.n} but the training set has n={train.n}")
        masks.append((str(meta.get("method") or Path(path).stem), mask, meta.get("epsilon")))
    if args.control:
        masks.append(("empty", PruneMask.empty(train.n), None))
    if not masks and not args.loo:
        raise ConfigError("nothing to do: pass --masks, --control or --loo")

    rows = []
    for seed in seeds:
        tcfg = replace(cfg.train, seed=seed)
        params, S = _fit_and_influence(replace(cfg, train=tcfg), train)
        for method, mask, eps in masks:
            gap = measure_gap(train, test, mask, tcfg, epsilon=eps, params=params, S=S)
            rows.append(
                {
                    "method": method,
                    "m": gap.m,
                    "epsilon": gap.epsilon,
                    "achieved_norm": gap.achieved_norm,
                    "predicted_gap": gap.predicted_gap,
                    "measured_gap": gap.measured_gap,
                    "bound_value": gap.bound_value,
                    "seed": seed,
                }
            )
    if rows:
        path = write_csv(out / "oracle.csv", ORACLE_COLUMNS, ([r[c] for c in ORACLE_COLUMNS] for r in rows))
        print(f"wrote {len(rows)} rows to {path}")
        _summarize(rows)
        _plot(cfg, "plot_gap_scatter", rows, out / "gap_vs_norm.png")

    if args.loo:
        params, S = _fit_and_influence(cfg, train)
        sweep = loo_sweep(train, params, S, cfg.train)
        path = write_csv(
            out / "loo.csv",
            ("index", "predicted_norm", "actual_norm"),
            zip(sweep["index"].tolist(), sweep["predicted_norm"], sweep["actual_norm"]),
        )
        r = _safe_corr(sweep["predicted_norm"], sweep["actual_norm"], "pearson")
        frac = float(np.mean(sweep["cosine"] >= 0.9))
        print(f"leave-one-out: pearson {r}, cosine >= 0.9 for {frac:.1%} of samples -> {path}")
        _plot(cfg, "plot_loo", sweep["predicted_norm"], sweep["actual_norm"], out / "loo.png")
    return 0


def _safe_corr(xs, ys, kind: str) -> str:
    try:
        return f"{correlation(xs, ys, kind):.4f}"
    except ValueError:
        return "n/a"


def _summarize(rows) -> None:
    pred = [r["predicted_gap"] for r in rows]
    meas = [r["measured_gap"] for r in rows]
    print(
        f"r(predicted, measured): pearson {_safe_corr(pred, meas, 'pearson')}, "
        f"spearman {_safe_corr(pred, meas, 'spearman')} over {len(rows)} rows"
    )
    for method in sorted({r["method"] for r in rows}):
        gaps = [r["measured_gap"] for r in rows if r["method"] == method]
        print(f"  {method}: mean measured gap {np.mean(gaps):.6g} over {len(gaps)} rows")


def cmd_verify(args) -> int:
    from .verify import run_checks

    sources: set = set()
    cfg = _config(args, {"train.reg_lambda": args.reg_lambda}, sources)
    lam = cfg.train.reg_lambda if "train.reg_lambda" in sources else STANDARD_LAMBDA
    mode = "quick" if args.quick else "full"
    print(f"verify ({mode}) on the standard benchmark, lambda={lam:g}, seed={args.seed}")
    results = run_checks(quick=args.quick, reg_lambda=lam, seed=args.seed, report=lambda r: print(r.line(), flush=True))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        return EXIT_VERIFY
    print(f"all {len(results)} checks passed")
    return 0


def cmd_synth(args) -> int:
    cfg = _config(
        args,
        {
            "synthetic.n_per_class": args.n_per_class,
            "synthetic.k": args.k,
            "synthetic.d": args.d,
            "synthetic.class_separation": args.separation,
            "synthetic.noise_sigma": args.sigma,
            "synthetic.seed": args.seed,
            "paths.out": args.out,
        },
    )
    out = Path(_require(cfg.paths.out, "--out", "paths.out"))
    if args.standard:
        data = standard_dataset(cfg.synthetic.seed)
    else:
        data = make_synthetic(cfg.synthetic)
    if args.limit is not None:
        if not 1 <= args.limit <= data.n:
            raise ConfigError(f"--limit {args.limit} outside [1, {data.n}]")
        data = data.subset(np.arange(args.limit))
    if args.split is None:
        path = save_dataset(data, out, args.format)
        print(f"wrote {data.n} samples (k={data.k}, d={data.d}) to {path}")
        return 0
    if not 0.0 < args.split < 1.0:
        raise ConfigError("--split must be in (0, 1)")
    train, test = train_test_split(data, args.split, cfg.synthetic.seed)
    suffix = out.suffix
    for name, part in (("train", train), ("test", test)):
        path = save_dataset(part, out.with_name(f"{out.stem}_{name}{suffix}"), args.format)
        print(f"wrote {part.n} {name} samples to {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prunekit", description="Influence-based dataset pruning on a logistic surrogate.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    common.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1, help="worker cap for annealing restarts (default: all cores)"
    )
    common.add_argument("--no-plots", action="store_true", help="skip the PNG figures next to the CSV outputs")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prune", parents=[common], help="fit, compute influence and select the pruned set")
    p.add_argument("--data", help="training set (.bin or .csv)")
    p.add_argument("--test", help="optional held-out set; adds predicted and measured gaps to the report")
    p.add_argument("--epsilon", type=float, help="generalization-guaranteed mode: bound on the summed influence norm")
    p.add_argument("--keep-m", type=int, help="cardinality-guaranteed mode: number of samples to keep")
    p.add_argument("--max-prune-fraction", type=float, help="cap on the pruned fraction in epsilon mode (default 0.25)")
    p.add_argument("--method", choices=("auto", "cholesky", "cg", "lissa"), help="inverse Hessian-vector product solver")
    p.add_argument("--reg-lambda", type=float, help="L2 strength of the surrogate")
    p.add_argument("--seed", type=int, help="annealing seed")
    p.add_argument("--iterations", type=int, help="annealing steps per restart")
    p.add_argument("--restarts", type=int, help="independent annealing chains")
    p.add_argument("--out", help="output directory (default prune_out)")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("baseline", parents=[common], help="score-based selection at one or more prune ratios")
    p.add_argument("--data", help="training set")
    p.add_argument("--method", required=True, help=f"one of {', '.join(baselines.METHODS)}")
    p.add_argument("--ratios", default="0.3,0.5,0.7", help="comma-separated prune ratios")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sgd-epochs", type=int, help="epochs of the SGD run behind forgetting scores (required for it)")
    p.add_argument("--sgd-lr", type=float, default=0.1)
    p.add_argument("--sgd-batch-size", type=int, default=16)
    p.add_argument("--reg-lambda", type=float)
    p.add_argument("--ihvp", dest="method_ihvp", choices=("auto", "cholesky", "cg", "lissa"), help="solver for influence_norm")
    p.add_argument("--out", help="output directory (default baseline_out)")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("oracle", parents=[common], help="retrain without each mask and measure the test-loss gap")
    p.add_argument("--train", help="training set the masks index into")
    p.add_argument("--test", help="held-out set")
    p.add_argument("--masks", nargs="*", help="mask JSON files")
    p.add_argument("--seeds", default="0", help="comma-separated seeds (initialization of every fit)")
    p.add_argument("--control", action="store_true", help="add an empty-mask control row per seed")
    p.add_argument("--loo", action="store_true", help="also run the leave-one-out sweep (writes loo.csv)")
    p.add_argument("--reg-lambda", type=float)
    p.add_argument("--out", help="output directory (default oracle_out)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("verify", parents=[common], help="self-check on the standard benchmark")
    p.add_argument("--quick", action="store_true", help="subset of the checks (about a second after compilation)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reg-lambda", type=float, help=f"override lambda (default {STANDARD_LAMBDA:g})")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", parents=[common], help="generate a Gaussian-blob dataset")
    p.add_argument("--out", help="output path (.bin or .csv)")
    p.add_argument("--format", choices=("binary", "csv"), help="override the format implied by the suffix")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--separation", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--standard", action="store_true", help="the 200-sample standard benchmark for --seed")
    p.add_argument("--limit", type=int, help="keep only the first N samples")
    p.add_argument("--split", type=float, help="also split off this test fraction (writes <stem>_train/_test)")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except PrunekitError as exc:
        print(f"prunekit {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"prunekit {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
