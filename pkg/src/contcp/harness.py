"""End-to-end coverage experiments: data, models, intervals, reports and exports."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import synthdata
from .core import (CalibratedScores, Dataset, HardIntervention, PredictionInterval, SoftIntervention,
                   build_interval, calibrate, parse_intervention)
from .errors import InvalidInputError
from .known import CONVENTIONS, intervals_soft
from .models import (ConditionalDensityConfig, MlpConfig, fit_conditional_density, mc_dropout_intervals,
                     train_mlp)
from .models.mlp import mse
from .unknown import DEFAULT_M, default_sigma_bounds, interval_hard

log = logging.getLogger(__name__)

SCENARIOS = ("known-propensity", "unknown-propensity", "mc-dropout-baseline")
DEFAULT_INTERVENTIONS = ("soft:1", "soft:5", "soft:10", "hard:5x", "hard:7x", "hard:10x")


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple = (1, 2)
    csv_path: str | None = None
    scenarios: tuple = SCENARIOS
    interventions: tuple = DEFAULT_INTERVENTIONS
    alphas: tuple = (0.05, 0.1, 0.2)
    seeds: tuple = tuple(range(10))
    error_bound: float = DEFAULT_M
    sigma_min: float | None = None
    sigma_max: float | None = None
    epsilon: float = 1e-3
    weight_convention: str = "shifted-policy"
    mc_samples: int = 100
    n_train: int = 2000
    n_calibration: int = 1000
    n_test: int = 1000
    epochs: int = 300
    interval_seeds: tuple = (0,)      # seeds whose per-point intervals are exported
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        for name in ("datasets", "scenarios", "interventions", "alphas", "seeds", "interval_seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if not self.seeds:
            raise InvalidInputError("need at least one seed")
        if not self.interventions:
            raise InvalidInputError("need at least one intervention")
        if any(not 0 < a < 1 for a in self.alphas) or not self.alphas:
            raise InvalidInputError("alphas must lie in (0, 1)")
        bad = set(self.scenarios) - set(SCENARIOS)
        if bad:
            raise InvalidInputError(f"unknown scenario(s) {sorted(bad)}")
        if self.weight_convention not in CONVENTIONS:
            raise InvalidInputError(f"unknown weight convention {self.weight_convention!r}")
        for text in self.interventions:
            parse_intervention(text)
        if self.csv_path is None and any(d not in (1, 2) for d in self.datasets):
            raise InvalidInputError("synthetic datasets are 1 and 2")

    @classmethod
    def from_json(cls, path, **overrides) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys {sorted(unknown)}")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)

    def sigma_bounds(self, a) -> tuple[float, float]:
        lo, hi = default_sigma_bounds(a)
        return (self.sigma_min or lo, self.sigma_max or hi)

    def dataset_labels(self) -> tuple:
        return ("csv",) if self.csv_path else self.datasets


@dataclass(frozen=True)
class CellResult:
    dataset: str
    scenario: str
    intervention: str
    alpha: float
    seed: int
    coverage: float
    width: float
    runtime: float
    n: int
    error: str = ""


@dataclass(frozen=True, eq=False)
class IntervalRecord:
    dataset: str
    seed: int
    method: str
    intervention: str
    unit: int
    x: tuple
    a: float
    interval: PredictionInterval
    y_true: float
    y: float


@dataclass
class CoverageReport:
    cells: list = field(default_factory=list)
    model_mse: dict = field(default_factory=dict)   # (dataset, seed) -> test MSE

    def sorted_cells(self):
        return sorted(self.cells, key=lambda c: (c.dataset, c.scenario, c.intervention, c.alpha, c.seed))

    def aggregates(self) -> list[dict]:
        groups = {}
        for c in self.cells:
            groups.setdefault((c.dataset, c.scenario, c.intervention, c.alpha), []).append(c)
        out = []
        for key in sorted(groups):
            cs = groups[key]
            ok = [c for c in cs if not c.error]
            cov = np.array([c.coverage for c in ok])
            wid = np.array([c.width for c in ok])
            out.append({
                "dataset": key[0], "scenario": key[1], "intervention": key[2], "alpha": key[3],
                "coverage_mean": float(cov.mean()) if ok else math.nan,
                "coverage_sd": float(cov.std(ddof=1)) if len(ok) > 1 else 0.0,
                "width_mean": float(wid.mean()) if ok else math.nan,
                "seeds": len(ok), "errors": len(cs) - len(ok),
            })
        return out

    def cell(self, dataset, scenario, intervention, alpha) -> dict | None:
        for row in self.aggregates():
            if (row["dataset"], row["scenario"], row["intervention"], row["alpha"]) == \
                    (str(dataset), scenario, intervention, alpha):
                return row
        return None


# --- per-seed pipeline ----------------------------------------------------------

@dataclass(eq=False)
class SeedContext:
    label: str
    seed: int
    data: Dataset
    predictor: object
    calib: CalibratedScores
    spec: synthdata.GeneratorSpec | None = None
    _density: object = None

    @property
    def density(self):
        if self._density is None:
            self._density = fit_conditional_density(ConditionalDensityConfig(), self.data.subset("train"))
        return self._density

    @property
    def true_propensity(self):
        if self.spec is None:
            raise InvalidInputError("the known-propensity scenario needs synthetic data with a true propensity")
        return synthdata.TruePropensity(self.spec.dataset_id)


def prepare_seed(config: ExperimentConfig, label, seed: int) -> SeedContext:
    if label == "csv":
        data = synthdata.read_csv(config.csv_path, seed=seed)
        spec = None
    else:
        spec = synthdata.GeneratorSpec(int(label), n_train=config.n_train, n_calibration=config.n_calibration,
                                       n_test_per_intervention=config.n_test, seed=seed)
        data = synthdata.generate(spec)
    mlp_cfg = MlpConfig(epochs=config.epochs, seed=seed)
    predictor = train_mlp(mlp_cfg, data.subset("train"), data.subset("validation"))
    calib = calibrate(predictor, data.subset("calibration"))
    return SeedContext(str(label), seed, data, predictor, calib, spec)


def _test_points(ctx: SeedContext, intervention):
    """Covariates, observed doses, target doses and outcomes for one intervention."""
    if ctx.spec is not None:
        ts = synthdata.intervention_test_set(ctx.spec, intervention)
        return ts.x, ts.a, ts.a_target, ts.y_true, ts.y_potential
    test = ctx.data.subset("test")
    target = intervention.target(test.x, test.a)
    nan = np.full(len(test), math.nan)
    return test.x, test.a, target, nan, nan


def hard_intervals(ctx: SeedContext, config: ExperimentConfig, x, a_target, alpha) -> list[PredictionInterval]:
    """Unknown-propensity intervals; points sharing ``(x, a*)`` share one solve."""
    bounds = config.sigma_bounds(ctx.calib.a)
    cache = {}
    out = []
    for i, (xi, ai) in enumerate(zip(x, a_target)):
        key = (tuple(xi.tolist()), float(ai))
        if key not in cache:
            cache[key] = interval_hard(ctx.predictor, ctx.density, ctx.calib, xi, float(ai), alpha,
                                       config.error_bound, bounds, config.epsilon)
        iv = cache[key]
        out.append(replace(iv, unit_id=i))
    return out


def cell_intervals(ctx: SeedContext, config: ExperimentConfig, scenario: str, intervention, alpha: float):
    x, a, target, y_true, y = _test_points(ctx, intervention)
    if scenario == "known-propensity":
        ivs = intervals_soft(ctx.predictor, ctx.true_propensity, ctx.calib, x, a, intervention.delta_a, alpha,
                             config.epsilon, config.weight_convention, on_unsupported="unbounded")
    elif scenario == "unknown-propensity":
        ivs = hard_intervals(ctx, config, x, target, alpha)
    else:
        rng = synthdata.stream(ctx.seed, "mc-dropout", intervention.label, alpha)
        ivs = mc_dropout_intervals(ctx.predictor, x, target, alpha, config.mc_samples, rng)
    return ivs, x, target, y_true, y


def applicable(scenario: str, intervention) -> bool:
    if scenario == "known-propensity":
        return isinstance(intervention, SoftIntervention)
    if scenario == "unknown-propensity":
        return isinstance(intervention, HardIntervention)
    return True


def run_seed(config: ExperimentConfig, label, seed: int):
    """All cells for one (dataset, seed); returns ``(cells, interval records, test MSE)``."""
    ctx = prepare_seed(config, label, seed)
    test_mse = mse(ctx.predictor, ctx.data.subset("test"))
    cells, records = [], []
    for scenario in config.scenarios:
        for text in config.interventions:
            intervention = parse_intervention(text)
            if not applicable(scenario, intervention):
                continue
            for alpha in config.alphas:
                t0 = time.perf_counter()
                try:
                    ivs, x, target, y_true, y = cell_intervals(ctx, config, scenario, intervention, alpha)
                except Exception as exc:  # recorded, not fatal
                    log.warning("cell %s/%s/%s/%s/%s failed: %s", label, scenario, text, alpha, seed, exc)
                    cells.append(CellResult(str(label), scenario, intervention.label, alpha, seed,
                                            math.nan, math.nan, time.perf_counter() - t0, 0,
                                            f"{type(exc).__name__}: {exc}"))
                    continue
                runtime = time.perf_counter() - t0
                lo = np.array([iv.lower for iv in ivs])
                hi = np.array([iv.upper for iv in ivs])
                cov = float(np.mean((lo <= y) & (y <= hi))) if np.all(np.isfinite(y)) else math.nan
                width = float(np.mean(hi - lo))
                cells.append(CellResult(str(label), scenario, intervention.label, alpha, seed,
                                        cov, width, runtime, len(ivs)))
                if seed in config.interval_seeds:
                    records.extend(IntervalRecord(str(label), seed, scenario, intervention.label, i,
                                                  tuple(float(v) for v in x[i]), float(target[i]), ivs[i],
                                                  float(y_true[i]), float(y[i]))
                                   for i in range(len(ivs)))
    return cells, records, test_mse


def _run_seed_job(args):
    return run_seed(*args)


def run_experiment(config: ExperimentConfig, out_dir=None):
    """Run the full grid. Returns ``(report, interval records)`` and exports when ``out_dir`` is set."""
    jobs = [(config, label, seed) for label in config.dataset_labels() for seed in config.seeds]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = [_run_seed_job(j) for j in jobs]
    report = CoverageReport()
    records = []
    for (_, label, seed), (cells, recs, test_mse) in zip(jobs, results):
        report.cells.extend(cells)
        records.extend(recs)
        report.model_mse[(str(label), seed)] = test_mse
    out_dir = out_dir or config.out
    if out_dir:
        export_plot_data(report, records, out_dir, config)
    return report, records


# --- individual treatment effects -------------------------------------------------

@dataclass(frozen=True)
class EffectInterval:
    estimate: float
    lower: float
    upper: float
    unit_id: int | None = None

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def ite_interval(treated: PredictionInterval, control: PredictionInterval) -> EffectInterval:
    """Interval for ``Y(a) - Y(0)`` from two potential-outcome intervals at level ``alpha/2``."""
    if treated.unit_id != control.unit_id:
        raise InvalidInputError(f"unit mismatch: {treated.unit_id} vs {control.unit_id}")
    est = treated.center - control.center
    s = treated.s_star + control.s_star
    return EffectInterval(est, est - s, est + s, treated.unit_id)


def ite_coverage(config: ExperimentConfig, label, seed: int, treated: float = 10.0, control: float = 0.0,
                 alpha: float = 0.2, ctx: SeedContext | None = None) -> float:
    """Coverage of effect intervals built from two hard-intervention intervals at ``alpha / 2``."""
    ctx = ctx or prepare_seed(config, label, seed)
    if ctx.spec is None:
        raise InvalidInputError("effect coverage needs synthetic potential outcomes")
    x, y1, y0 = synthdata.ite_test_set(ctx.spec, treated, control)
    iv1 = hard_intervals(ctx, config, x, np.full(len(x), treated), alpha / 2)
    iv0 = hard_intervals(ctx, config, x, np.full(len(x), control), alpha / 2)
    hits = [ite_interval(t, c).contains(a - b) for t, c, a, b in zip(iv1, iv0, y1, y0)]
    return float(np.mean(hits))


# --- export -----------------------------------------------------------------------

COVERAGE_COLUMNS = ("dataset", "scenario", "intervention", "alpha", "seed", "coverage", "width", "n", "error")
INTERVAL_COLUMNS = ("dataset", "seed", "method", "intervention", "alpha", "unit", "x", "a",
                    "center", "lower", "upper", "y_true", "y")


def _num(v) -> str:
    return repr(float(v))


def export_plot_data(report: CoverageReport, records, out_dir, config: ExperimentConfig | None = None) -> None:
    """Write ``coverage.csv``, ``intervals.csv``, ``runtime.csv`` and ``summary.json``.

    Everything except ``runtime.csv`` is a pure function of the configuration.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = report.sorted_cells()
    with (out / "coverage.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COVERAGE_COLUMNS)
        for c in cells:
            w.writerow([c.dataset, c.scenario, c.intervention, _num(c.alpha), c.seed,
                        _num(c.coverage), _num(c.width), c.n, c.error])
    with (out / "runtime.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dataset", "scenario", "intervention", "alpha", "seed", "runtime_seconds"))
        for c in cells:
            w.writerow([c.dataset, c.scenario, c.intervention, _num(c.alpha), c.seed, f"{c.runtime:.6f}"])
    write_intervals(records, out / "intervals.csv")
    summary = {
        "aggregates": report.aggregates(),
        "model_mse": [{"dataset": k[0], "seed": k[1], "test_mse": v} for k, v in sorted(report.model_mse.items())],
    }
    if config is not None:
        # Worker count and output location do not change any result.
        summary["config"] = {k: v for k, v in asdict(config).items() if k not in ("workers", "out")}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def write_intervals(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERVAL_COLUMNS)
        for r in sorted(records, key=lambda r: (r.dataset, r.seed, r.method, r.intervention,
                                                r.interval.alpha, r.unit)):
            iv = r.interval
            w.writerow([r.dataset, r.seed, r.method, r.intervention, _num(iv.alpha), r.unit,
                        ";".join(_num(v) for v in r.x), _num(r.a), _num(iv.center), _num(iv.lower),
                        _num(iv.upper), _num(r.y_true), _num(r.y)])


def read_intervals(path) -> list[IntervalRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            lo, hi, center = float(row["lower"]), float(row["upper"]), float(row["center"])
            iv = PredictionInterval(center, 0.5 * (hi - lo), lo, hi, float(row["alpha"]), int(row["unit"]))
            out.append(IntervalRecord(row["dataset"], int(row["seed"]), row["method"], row["intervention"],
                                      int(row["unit"]), tuple(float(v) for v in row["x"].split(";")),
                                      float(row["a"]), iv, float(row["y_true"]), float(row["y"])))
    return out


def single_interval(ctx: SeedContext, config: ExperimentConfig, scenario: str, intervention, x_new,
                    a_obs: float | None, alpha: float) -> PredictionInterval:
    """One interval for a single covariate vector (``a_obs`` is needed for soft shifts)."""
    x_new = np.asarray(x_new, dtype=float).reshape(1, -1)
    if scenario == "known-propensity":
        if a_obs is None:
            raise InvalidInputError("a soft shift needs the observed dose of the unit")
        return intervals_soft(ctx.predictor, ctx.true_propensity, ctx.calib, x_new, [a_obs],
                              intervention.delta_a, alpha, config.epsilon, config.weight_convention,
                              on_unsupported="unbounded")[0]
    target = float(intervention.target(x_new, np.array([a_obs if a_obs is not None else 0.0]))[0])
    if scenario == "unknown-propensity":
        return interval_hard(ctx.predictor, ctx.density, ctx.calib, x_new[0], target, alpha,
                             config.error_bound, config.sigma_bounds(ctx.calib.a), config.epsilon)
    rng = synthdata.stream(ctx.seed, "mc-dropout", intervention.label, alpha)
    return mc_dropout_intervals(ctx.predictor, x_new, [target], alpha, config.mc_samples, rng)[0]


__all__ = [
    "SCENARIOS", "ExperimentConfig", "CellResult", "CoverageReport", "IntervalRecord", "SeedContext",
    "prepare_seed", "run_seed", "run_experiment", "cell_intervals", "hard_intervals", "EffectInterval",
    "ite_interval", "ite_coverage", "export_plot_data", "write_intervals", "read_intervals",
    "single_interval", "build_interval",
]
