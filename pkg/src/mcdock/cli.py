"""Command-line entry point: ``mcdock {score,synth,train,evaluate,crossval,ablate}``.

Exit codes: 0 success, 2 usage error, 3 invalid input or configuration,
4 unexpected internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .data import (Dataset, Regime, SynthSpec, generate_synthetic, load_dataset, load_features,
                   load_performance, save_dataset)
from .errors import ConfigError, McDockError
from .evaluation import (ablation_grid, baseline_method, cross_validate, fixed_split,
                         gated_success, refine_portfolio, selection_frequencies)
from .model import Standardizer, load_checkpoint, save_checkpoint, select, train
from .report import dumps_report, render_frequencies, render_table
from .scoring import ScoreConfig, build_label_matrix

log = logging.getLogger("mcdock")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVALID = 3
EXIT_INTERNAL = 4

DEFAULT_M_GRID = ["1", "2", "ln11", "3", "5"]
DEFAULT_ALPHA_GRID = [0.1, 0.3, 0.5, 0.7, 0.9]


def _write_text(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _run_config(args) -> cfgmod.RunConfig:
    overrides = list(getattr(args, "set", None) or [])
    for attr, key in (("features", "data.features"), ("performance", "data.performance"),
                      ("seed", "eval.seed"), ("k", "eval.k"), ("jobs", "eval.jobs"),
                      ("epochs", "train.epochs"), ("portfolio_k", "eval.portfolio_k")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return cfgmod.load_config(getattr(args, "config", None), overrides)


def _dataset(cfg: cfgmod.RunConfig) -> Dataset:
    if not cfg.data.features or not cfg.data.performance:
        raise ConfigError("both data.features and data.performance are required "
                          "(config file or --features/--performance)")
    return load_dataset(cfg.data.features, cfg.data.performance, cfg.data.portfolio,
                        cfg.data.ground_truth)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_score(args) -> int:
    table = load_performance(args.performance)
    cfg = ScoreConfig(args.mode, cfgmod.parse_tolerance(args.M), args.alpha)
    portfolio = args.portfolio.split(",") if args.portfolio else table.algorithms()
    ids = None
    if args.features:
        ids = sorted(load_features(args.features)[0])
    labels = build_label_matrix(table, portfolio, cfg, instance_ids=ids)
    lines = ["instance_id," + ",".join(labels.algorithm_ids)]
    for iid, row in zip(labels.instance_ids, labels.scores):
        lines.append(iid + "," + ",".join(repr(float(v)) for v in row))
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_synth(args) -> int:
    rates = [float(r) for r in args.pb_fail_rate.split(",")]
    spec = SynthSpec(args.n, args.d, args.m, args.regime, args.noise,
                     rates[0] if len(rates) == 1 else tuple(rates), args.seed)
    paths = save_dataset(generate_synthetic(spec), args.out)
    for p in paths.values():
        print(p)
    return EXIT_OK


def _train_metrics(ds: Dataset, selections, cfg: cfgmod.RunConfig) -> dict:
    return {m.key: gated_success(selections, ds.records, m) for m in cfg.eval.metric_specs()}


def cmd_train(args) -> int:
    cfg = _run_config(args)
    ds = _dataset(cfg)
    method = cfg.methods()[0]
    labels = build_label_matrix(ds.records, ds.portfolio, cfg.score, instance_ids=ds.instance_ids)
    portfolio = list(ds.portfolio)
    if cfg.eval.portfolio_k is not None:
        portfolio = refine_portfolio(labels, cfg.eval.portfolio_k)
        labels = labels.columns(portfolio)
    scaler = Standardizer.fit(ds.features)
    x = scaler.transform(ds.features)
    arch = replace(method.arch, input_dim=ds.d, output_dim=len(portfolio))
    params, history = train(x, labels, arch, method.train)
    save_checkpoint(args.model, params, portfolio, scaler)
    picks = np.atleast_1d(select(params, x))
    selections = {iid: portfolio[int(j)] for iid, j in zip(ds.instance_ids, picks)}
    summary = {"method": method.name, "n_instances": ds.n, "portfolio": portfolio,
               "history": history, "metrics": _train_metrics(ds, selections, cfg),
               "selection_frequencies": selection_frequencies(selections, ds.portfolio)}
    if args.out_dir:
        out = _out_dir(args.out_dir)
        cfgmod.dump_config(cfg, out / "resolved_config.json")
        (out / "train_metrics.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary["metrics"], indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    ds = _dataset(cfg)
    ckpt = load_checkpoint(args.model)
    x = ckpt.standardizer.transform(ds.features) if ckpt.standardizer else ds.features
    portfolio = ckpt.portfolio or ds.portfolio
    picks = np.atleast_1d(select(ckpt.params, x))
    selections = {iid: portfolio[int(j)] for iid, j in zip(ds.instance_ids, picks)}
    result = {"n_instances": ds.n, "metrics": _train_metrics(ds, selections, cfg),
              "selection_frequencies": selection_frequencies(selections, ds.portfolio)}
    if args.selections:
        with open(args.selections, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["instance_id", "algorithm"])
            w.writerows(selections.items())
    _write_text(args.out, json.dumps(result, indent=2) + "\n")
    return EXIT_OK


def cmd_crossval(args) -> int:
    overrides = []
    if args.grid:
        overrides.append(f"variants={json.dumps(cfgmod.TABLE_GRID)}")
    args.set = list(args.set or []) + overrides
    cfg = _run_config(args)
    ds = _dataset(cfg)
    if cfg.eval.k > ds.n:
        raise ConfigError(f"k={cfg.eval.k} is larger than the number of instances ({ds.n})")
    folds = [args.only_fold] if args.only_fold is not None else None
    report = cross_validate(ds, cfg.score, cfg.methods(), cfg.eval.metric_specs(), k=cfg.eval.k,
                            seed=cfg.eval.seed, portfolio_k=cfg.eval.portfolio_k,
                            jobs=cfg.eval.jobs, significance=cfg.eval.significance,
                            folds=folds, config=cfg.to_dict())
    out = _out_dir(args.out_dir)
    cfgmod.dump_config(cfg, out / "resolved_config.json")
    (out / "report.json").write_text(dumps_report(report), encoding="utf-8")
    table = render_table(report)
    freqs = {"VBS": report.vbs_frequencies}
    freqs.update({name: r.selection_frequencies for name, r in report.methods.items()})
    (out / "table.txt").write_text(table, encoding="utf-8")
    (out / "frequencies.txt").write_text(render_frequencies(report.portfolio, freqs), encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def ablation_filename(key_threshold: float) -> str:
    return f"ablation_{key_threshold:g}A.csv"


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    ds = _dataset(cfg)
    m_values = [cfgmod.parse_tolerance(t) for t in (args.M or DEFAULT_M_GRID)]
    alphas = args.alpha if args.alpha is not None else DEFAULT_ALPHA_GRID
    method = baseline_method(cfg.decoder.arch(), cfg.train_config())
    split = fixed_split(ds, cfg.eval.k, cfg.eval.seed, args.fold)
    result = ablation_grid(ds, m_values, alphas, not args.no_mul, split, method,
                           cfg.eval.metric_specs(), jobs=cfg.eval.jobs)
    out = _out_dir(args.out_dir)
    cfgmod.dump_config(cfg, out / "resolved_config.json")
    for spec in cfg.eval.metric_specs():
        path = out / ablation_filename(spec.rmsd_threshold)
        path.write_text(result.to_csv(spec.key), encoding="utf-8")
        print(f"{spec.key} -> {path}")
        for label, row in zip(result.row_labels, result.grids[spec.key]):
            print(f"  M={label:>6}: " + " ".join(f"{v:6.2f}" for v in row))
    return EXIT_OK


def _add_run_args(p, data=True):
    p.add_argument("--config", help=f"JSON run config (default: ${cfgmod.CONFIG_ENV})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. --set train.epochs=50 (repeatable)")
    if data:
        p.add_argument("--features", help="features.csv")
        p.add_argument("--performance", help="performance.csv")
    p.add_argument("--seed", type=int, help="evaluation seed (fold assignment)")
    p.add_argument("--epochs", type=int, help="training epochs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcdock", description="Docking-algorithm selection: scoring, training, cross-validation, ablation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="write the composite-score label matrix as CSV")
    p.add_argument("--performance", required=True)
    p.add_argument("--features", help="restrict/align rows to the instances of this file")
    p.add_argument("--mode", choices=["add", "mul"], default="mul")
    p.add_argument("--M", default="ln11", help="RMSD tolerance in Angstrom (number or ln<n>)")
    p.add_argument("--alpha", type=float, default=0.5, help="RMSD weight for --mode add")
    p.add_argument("--portfolio", help="comma-separated algorithm order")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted structure")
    p.add_argument("--regime", choices=[r.value for r in Regime], required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--pb-fail-rate", default="0.1", help="one rate or comma-separated per algorithm")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a decoder on all instances and save a checkpoint")
    _add_run_args(p)
    p.add_argument("--portfolio-k", type=int, help="restrict to the top-k training algorithms")
    p.add_argument("--model", required=True, help="checkpoint path (.npz)")
    p.add_argument("--out-dir", help="directory for resolved config and training metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint's selections on a dataset")
    _add_run_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", help="metrics JSON (default stdout)")
    p.add_argument("--selections", help="also write per-instance selections CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("crossval", help="k-fold evaluation against SBS/VBS")
    _add_run_args(p)
    p.add_argument("--k", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--portfolio-k", type=int, help="top-k portfolio refinement per fold")
    p.add_argument("--grid", action="store_true",
                   help="evaluate the 8 decoder x loss combinations (MLP/Residual x BCE/+NDCG/+PL/+Both)")
    p.add_argument("--only-fold", type=int, help="run a single fold (fixed-split run)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("ablate", help="score ablation grid over tolerance M and alpha")
    _add_run_args(p)
    p.add_argument("--M", nargs="+", help="tolerances (numbers or ln<n>); default 1 2 ln11 3 5")
    p.add_argument("--alpha", nargs="+", type=float, help="additive weights; default 0.1..0.9")
    p.add_argument("--no-mul", action="store_true", help="omit the s_mul column")
    p.add_argument("--fold", type=int, default=0, help="which k-fold split to hold out")
    p.add_argument("--jobs", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except McDockError as exc:
        print(f"mcdock {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"mcdock {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
