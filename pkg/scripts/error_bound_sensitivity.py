"""Unknown-propensity coverage and width as the density error bound M varies."""

import argparse
from dataclasses import dataclass, field

from contcp.harness import ExperimentConfig, run_experiment


@dataclass
class SensitivityArgs:
    dataset: int = 2
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    bounds: list = field(default_factory=lambda: [1.25, 2.0, 4.0])
    interventions: list = field(default_factory=lambda: ["hard:5x", "hard:7x", "hard:10x"])
    alpha: float = 0.1
    epochs: int = 300


def parse_args() -> SensitivityArgs:
    d = SensitivityArgs()
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--dataset", type=int, default=d.dataset, choices=(1, 2))
    p.add_argument("--seeds", type=int, nargs="+", default=d.seeds)
    p.add_argument("--bounds", type=float, nargs="+", default=d.bounds, help="values of M (> 1)")
    p.add_argument("--interventions", nargs="+", default=d.interventions)
    p.add_argument("--alpha", type=float, default=d.alpha)
    p.add_argument("--epochs", type=int, default=d.epochs)
    return SensitivityArgs(**vars(p.parse_args()))


def main():
    args = parse_args()
    print(f"dataset {args.dataset}, alpha {args.alpha}, seeds {args.seeds}")
    print(f"{'M':>6} {'shift':<9} {'coverage':>9} {'width':>8}")
    for m in args.bounds:
        cfg = ExperimentConfig(datasets=(args.dataset,), seeds=args.seeds, alphas=(args.alpha,),
                               scenarios=("unknown-propensity",), interventions=args.interventions,
                               error_bound=m, epochs=args.epochs)
        report, _ = run_experiment(cfg)
        for row in report.aggregates():
            print(f"{m:>6g} {row['intervention']:<9} {row['coverage_mean']:>9.3f} {row['width_mean']:>8.3f}")


if __name__ == "__main__":
    main()
