"""Synthetic benchmark data with known propensities and potential outcomes.

Dataset 1: X uniform on {1,2,3,4}; A ~ 0.3 Uniform[0, 5X) + 0.7 Uniform[5X, 40];
Y = sin(pi/6 (0.1A - 0.5X)) + N(0, 0.1).
Dataset 2: X uniform on {1,2,3,4}; A ~ N(5X, 10); Y = sin(pi/2 (0.1A - 0.1X)) + N(0, 0.1).
Both Normal second parameters are standard deviations.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import SPLITS, Dataset, Intervention
from .errors import InvalidInputError

NOISE_SD = 0.1
TREATMENT_SD_2 = 10.0
COVARIATE_VALUES = (1, 2, 3, 4)


@dataclass(frozen=True)
class GeneratorSpec:
    dataset_id: int
    n_train: int = 2000
    n_calibration: int = 1000
    n_test_per_intervention: int = 1000
    seed: int = 0
    n_validation: int = 200

    def __post_init__(self):
        if self.dataset_id not in (1, 2):
            raise InvalidInputError(f"dataset_id must be 1 or 2, got {self.dataset_id}")
        if min(self.n_train, self.n_calibration, self.n_test_per_intervention) <= 0:
            raise InvalidInputError("sample counts must be positive")
        if not 0 <= self.n_validation < self.n_train:
            raise InvalidInputError("validation split must be carved from a larger train split")


def stream(seed: int, *labels) -> np.random.Generator:
    """Independent, reproducible substream for ``(seed, *labels)``."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    key += [zlib.crc32(str(lbl).encode()) for lbl in labels]
    return np.random.default_rng(np.random.SeedSequence(key))


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isin(x, COVARIATE_VALUES)):
        raise InvalidInputError("synthetic covariates must be integers in {1,2,3,4}")
    return x


def true_propensity(dataset_id: int, a, x):
    """Generalized propensity density ``pi(a | x)``."""
    a = np.asarray(a, dtype=float)
    x = _check_x(np.asarray(x, dtype=float).reshape(a.shape) if np.ndim(x) else x)
    if dataset_id == 1:
        cut = 5.0 * x
        out = np.where((a >= 0) & (a < cut), 0.3 / cut,
                       np.where((a >= cut) & (a <= 40.0), 0.7 / (40.0 - cut), 0.0))
    elif dataset_id == 2:
        z = (a - 5.0 * x) / TREATMENT_SD_2
        out = np.exp(-0.5 * z * z) / (TREATMENT_SD_2 * math.sqrt(2 * math.pi))
    else:
        raise InvalidInputError(f"unknown dataset {dataset_id}")
    return out if out.ndim else float(out)


def true_outcome(dataset_id: int, a, x):
    a = np.asarray(a, dtype=float)
    x = np.asarray(x, dtype=float)
    if dataset_id == 1:
        out = np.sin(np.pi / 6 * (0.1 * a - 0.5 * x))
    elif dataset_id == 2:
        out = np.sin(np.pi / 2 * (0.1 * a - 0.1 * x))
    else:
        raise InvalidInputError(f"unknown dataset {dataset_id}")
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class TruePropensity:
    """Density handle wrapping :func:`true_propensity` (covariates as an (m, 1) array)."""

    dataset_id: int

    def pdf(self, a, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        return true_propensity(self.dataset_id, np.asarray(a, dtype=float), np.broadcast_to(x, np.shape(a)))


def sample_treatment(dataset_id: int, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    m = len(x)
    if dataset_id == 1:
        cut = 5.0 * x
        low = rng.random(m) < 0.3
        u = rng.random(m)
        return np.where(low, u * cut, cut + u * (40.0 - cut))
    return rng.normal(5.0 * x, TREATMENT_SD_2)


def _draw(dataset_id, m, rng):
    x = rng.choice(COVARIATE_VALUES, size=m).astype(float)
    a = sample_treatment(dataset_id, x, rng)
    y_true = true_outcome(dataset_id, a, x)
    y = y_true + rng.normal(0.0, NOISE_SD, m)
    return x, a, y, y_true


def generate(spec: GeneratorSpec) -> Dataset:
    """Observational train/validation/calibration/test splits, deterministic per seed."""
    n_fit = spec.n_train - spec.n_validation
    parts = []
    for label, m in (("train", n_fit), ("validation", spec.n_validation),
                     ("calibration", spec.n_calibration), ("test", spec.n_test_per_intervention)):
        if m == 0:
            continue
        x, a, y, y_true = _draw(spec.dataset_id, m, stream(spec.seed, spec.dataset_id, label))
        parts.append(Dataset(x[:, None], a, y, np.full(m, label, dtype=object), y_true))
    return Dataset.concat(parts)


@dataclass(frozen=True, eq=False)
class InterventionTestSet:
    """Fresh test units with their potential outcome under one intervention."""

    x: np.ndarray
    a: np.ndarray          # observed (baseline) dose
    a_target: np.ndarray   # dose under the intervention
    y_true: np.ndarray     # noiseless structural value at a_target
    y_potential: np.ndarray


def intervention_test_set(spec: GeneratorSpec, intervention: Intervention) -> InterventionTestSet:
    rng = stream(spec.seed, spec.dataset_id, "test", intervention.label)
    m = spec.n_test_per_intervention
    x = rng.choice(COVARIATE_VALUES, size=m).astype(float)
    a = sample_treatment(spec.dataset_id, x, rng)
    a_target = intervention.target(x[:, None], a)
    y_true = true_outcome(spec.dataset_id, a_target, x)
    y_pot = y_true + rng.normal(0.0, NOISE_SD, m)
    return InterventionTestSet(x[:, None], a, a_target, y_true, y_pot)


def ite_test_set(spec: GeneratorSpec, treated: float, control: float):
    """Units with both potential outcomes drawn with independent noise.

    Returns ``(x, y_treated, y_control)`` where the outcomes include noise.
    """
    rng = stream(spec.seed, spec.dataset_id, "ite", treated, control)
    m = spec.n_test_per_intervention
    x = rng.choice(COVARIATE_VALUES, size=m).astype(float)
    y1 = true_outcome(spec.dataset_id, np.full(m, treated), x) + rng.normal(0.0, NOISE_SD, m)
    y0 = true_outcome(spec.dataset_id, np.full(m, control), x) + rng.normal(0.0, NOISE_SD, m)
    return x[:, None], y1, y0


# --- CSV serialization --------------------------------------------------------

def write_csv(dataset: Dataset, path, manifest: dict | None = None) -> None:
    path = Path(path)
    d = dataset.dim
    header = [f"x_{k}" for k in range(d)] + ["a", "y", "y_true", "split"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(dataset)):
            y_true = "" if dataset.y_true is None else repr(float(dataset.y_true[i]))
            w.writerow([repr(float(v)) for v in dataset.x[i]]
                       + [repr(float(dataset.a[i])), repr(float(dataset.y[i])), y_true, dataset.split[i]])
    if manifest is not None:
        path.with_suffix(".manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_csv(path, split_fractions=(0.6, 0.1, 0.2, 0.1), seed: int = 0) -> Dataset:
    """Load a dataset with columns ``x_*``, ``a``, ``y`` and optionally ``y_true`` and ``split``.

    Rows without a split column are assigned train/validation/calibration/test
    at random in the given proportions.
    """
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidInputError(f"{path} has no data rows")
    cols = rows[0].keys()
    xcols = sorted((c for c in cols if c.startswith("x_")), key=lambda c: int(c[2:]))
    if not xcols or "a" not in cols or "y" not in cols:
        raise InvalidInputError("CSV needs columns x_0.., a and y")
    x = np.array([[float(r[c]) for c in xcols] for r in rows])
    a = np.array([float(r["a"]) for r in rows])
    y = np.array([float(r["y"]) for r in rows])
    y_true = None
    if "y_true" in cols and all(r["y_true"] not in ("", None) for r in rows):
        y_true = np.array([float(r["y_true"]) for r in rows])
    if "split" in cols and all(r["split"] for r in rows):
        split = np.array([r["split"] for r in rows], dtype=object)
    else:
        split = assign_splits(len(rows), split_fractions, seed)
    return Dataset(x, a, y, split, y_true)


def assign_splits(m: int, fractions=(0.6, 0.1, 0.2, 0.1), seed: int = 0) -> np.ndarray:
    fr = np.asarray(fractions, dtype=float)
    if len(fr) != 4 or np.any(fr < 0) or not math.isclose(fr.sum(), 1.0, abs_tol=1e-9):
        raise InvalidInputError("split fractions must be four non-negative numbers summing to 1")
    counts = np.floor(fr * m).astype(int)
    counts[0] += m - counts.sum()
    labels = np.repeat(np.array(SPLITS, dtype=object), counts)
    return labels[stream(seed, "split").permutation(m)]


def manifest(spec: GeneratorSpec) -> dict:
    return {"format": "contcp-dataset/1", "generator": asdict(spec)}
