"""Command-line entry point: ``contcp <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import synthdata
from .core import SoftIntervention, calibrate, parse_intervention
from .errors import InvalidInputError
from .harness import (SCENARIOS, ExperimentConfig, SeedContext, prepare_seed, read_intervals,
                      run_experiment, single_interval, write_intervals)
from .models import ConditionalDensityConfig, MlpConfig, MlpPredictor, fit_conditional_density, train_mlp
from .models.density import ConditionalDensity
from .models.mlp import mse


def _global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; explicit flags override it")
    p.add_argument("--alpha", type=float, action="append", help="significance level (repeatable)")
    p.add_argument("--error-bound", type=float, dest="error_bound", help="propensity error bound M")
    p.add_argument("--sigma-min", type=float, dest="sigma_min")
    p.add_argument("--sigma-max", type=float, dest="sigma_max")
    p.add_argument("--epsilon", type=float, help="bisection tolerance on S*")
    p.add_argument("--seed", type=int, action="append", help="seed (repeatable)")
    p.add_argument("--scenario", action="append", choices=SCENARIOS)
    p.add_argument("--intervention", action="append", help="soft:DELTA or hard:EXPR, e.g. hard:7x (repeatable)")
    p.add_argument("--dataset", type=int, action="append", choices=(1, 2), help="synthetic dataset id")
    p.add_argument("--data", help="CSV with x_*, a, y columns (replaces the synthetic generator)")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--workers", type=int)


def _config(args) -> ExperimentConfig:
    overrides = {
        "alphas": args.alpha, "error_bound": args.error_bound, "sigma_min": args.sigma_min,
        "sigma_max": args.sigma_max, "epsilon": args.epsilon, "seeds": args.seed,
        "scenarios": args.scenario, "interventions": args.intervention, "datasets": args.dataset,
        "csv_path": args.data, "out": args.out, "epochs": args.epochs, "workers": args.workers,
    }
    if args.config:
        return ExperimentConfig.from_json(args.config, **overrides)
    return ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})


def _load_dataset(path, seed) -> synthdata.Dataset:
    return synthdata.read_csv(path, seed=seed)


def cmd_generate_data(args):
    cfg = _config(args)
    out = Path(args.out or "data.csv")
    for ds in cfg.datasets:
        for seed in cfg.seeds:
            spec = synthdata.GeneratorSpec(ds, cfg.n_train, cfg.n_calibration, cfg.n_test, seed)
            path = out if len(cfg.datasets) * len(cfg.seeds) == 1 else \
                out.with_name(f"{out.stem}_d{ds}_s{seed}{out.suffix or '.csv'}")
            synthdata.write_csv(synthdata.generate(spec), path, synthdata.manifest(spec))
            print(path)


def cmd_train(args):
    cfg = _config(args)
    seed = cfg.seeds[0]
    data = _load_dataset(args.data_file, seed)
    model = train_mlp(MlpConfig(epochs=cfg.epochs, seed=seed), data.subset("train"), data.subset("validation"))
    out = args.out or "model.bin"
    model.save(out)
    test = data.subset("test")
    print(json.dumps({"model": out, "test_mse": mse(model, test) if len(test) else None}))


def cmd_fit_propensity(args):
    data = _load_dataset(args.data_file, (args.seed or [0])[0])
    bw = args.bandwidth if args.bandwidth is not None else "silverman"
    cfg = ConditionalDensityConfig(bandwidth=bw, grouping=args.grouping, h_x=args.h_x)
    dens = fit_conditional_density(cfg, data.subset("train"))
    out = args.out or "propensity.json"
    dens.save(out)
    print(out)


def cmd_calibrate(args):
    data = _load_dataset(args.data_file, (args.seed or [0])[0])
    model = MlpPredictor.load(args.model)
    cal = calibrate(model, data.subset("calibration"))
    out = args.out or "scores.csv"
    np.savetxt(out, np.column_stack([cal.x, cal.a, cal.scores]), delimiter=",",
               header=",".join([f"x_{k}" for k in range(cal.x.shape[1])] + ["a", "score"]), comments="",
               fmt="%.17g")
    print(out)


def cmd_interval(args):
    cfg = _config(args)
    seed = cfg.seeds[0]
    intervention = parse_intervention(cfg.interventions[0] if args.intervention else "hard:7x")
    if args.scenario:
        scenario = cfg.scenarios[0]
    else:
        scenario = "known-propensity" if isinstance(intervention, SoftIntervention) else "unknown-propensity"
    if args.model and args.data_file:
        data = _load_dataset(args.data_file, seed)
        model = MlpPredictor.load(args.model)
        ctx = SeedContext("csv", seed, data, model, calibrate(model, data.subset("calibration")))
        if args.propensity:
            ctx._density = ConditionalDensity.load(args.propensity)
        if args.dataset:
            ctx.spec = synthdata.GeneratorSpec(args.dataset[0], seed=seed)
    else:
        label = "csv" if cfg.csv_path else cfg.datasets[0]
        ctx = prepare_seed(cfg, label, seed)
    x = [float(v) for v in args.x.split(",")]
    out = {}
    for alpha in cfg.alphas if args.alpha else (0.1,):
        iv = single_interval(ctx, cfg, scenario, intervention, x, args.a, alpha)
        out[str(alpha)] = {"center": iv.center, "s_star": iv.s_star, "lower": iv.lower, "upper": iv.upper}
    print(json.dumps({"scenario": scenario, "intervention": intervention.label, "x": x, "intervals": out}))


def cmd_evaluate(args):
    cfg = _config(args)
    report, _ = run_experiment(cfg, cfg.out)
    for row in report.aggregates():
        print(f"{row['dataset']:>4} {row['scenario']:<20} {row['intervention']:<10} alpha={row['alpha']:<5} "
              f"coverage={row['coverage_mean']:.3f}±{row['coverage_sd']:.3f} width={row['width_mean']:.3f}"
              + (f" errors={row['errors']}" if row["errors"] else ""))


def cmd_export(args):
    """Re-emit intervals.csv (sorted) from a previous run, optionally filtered by method."""
    records = read_intervals(args.intervals)
    if args.scenario:
        records = [r for r in records if r.method in args.scenario]
    out = Path(args.out or "export")
    out.mkdir(parents=True, exist_ok=True)
    write_intervals(records, out / "intervals.csv")
    print(out / "intervals.csv")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contcp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("generate-data", help="write synthetic dataset CSVs")
    _global_flags(s)
    s.set_defaults(func=cmd_generate_data)

    s = sub.add_parser("train", help="train the outcome network on a CSV dataset")
    _global_flags(s)
    s.add_argument("data_file")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fit-propensity", help="fit the conditional density of the dose")
    _global_flags(s)
    s.add_argument("data_file")
    s.add_argument("--bandwidth", type=float, help="fixed bandwidth (default: Silverman rule)")
    s.add_argument("--grouping", default="discrete-exact", choices=("discrete-exact", "kernel-weighted"))
    s.add_argument("--h-x", type=float, dest="h_x")
    s.set_defaults(func=cmd_fit_propensity)

    s = sub.add_parser("calibrate", help="write calibration scores for a trained model")
    _global_flags(s)
    s.add_argument("data_file")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("interval", help="interval for a single test point")
    _global_flags(s)
    s.add_argument("--x", required=True, help="comma-separated covariates")
    s.add_argument("--a", type=float, help="observed dose (soft shifts)")
    s.add_argument("--model", help="trained model file (with --data-file)")
    s.add_argument("--data-file", dest="data_file", help="CSV dataset for calibration")
    s.add_argument("--propensity", help="fitted density file")
    s.set_defaults(func=cmd_interval)

    s = sub.add_parser("evaluate", help="run the coverage grid")
    _global_flags(s)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("export", help="re-export interval rows for plotting")
    _global_flags(s)
    s.add_argument("intervals", help="intervals.csv from an evaluate run")
    s.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InvalidInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
