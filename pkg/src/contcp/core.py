"""Domain types, residual scoring and interval construction."""

from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol, Sequence, Union

import numpy as np

from .errors import InvalidInputError

SPLITS = ("train", "validation", "calibration", "test")


@dataclass(frozen=True)
class Sample:
    x: tuple
    a: float
    y: float

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(self.x))
        if len(x) < 1:
            raise InvalidInputError("covariate vector must have dimension >= 1")
        if not all(math.isfinite(v) for v in x):
            raise InvalidInputError(f"non-finite covariates {x}")
        if not (math.isfinite(self.a) and math.isfinite(self.y)):
            raise InvalidInputError(f"non-finite treatment/outcome a={self.a}, y={self.y}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of samples, each carrying exactly one split label.

    ``y_true`` holds the noiseless structural outcome when it is known
    (synthetic data) and is ``None`` otherwise.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    split: np.ndarray
    y_true: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.a, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        split = np.asarray(self.split, dtype=object).ravel()
        m = len(a)
        if x.shape[0] != m or len(y) != m or len(split) != m:
            raise InvalidInputError("x, a, y and split must have the same number of rows")
        if x.shape[1] < 1:
            raise InvalidInputError("covariate dimension must be >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(a)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset contains non-finite values")
        bad = set(split) - set(SPLITS)
        if bad:
            raise InvalidInputError(f"unknown split labels {sorted(bad)}")
        y_true = None
        if self.y_true is not None:
            y_true = np.asarray(self.y_true, dtype=float).ravel()
            if len(y_true) != m:
                raise InvalidInputError("y_true length mismatch")
        for name, arr in (("x", x), ("a", a), ("y", y), ("split", split), ("y_true", y_true)):
            if arr is not None:
                arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.a)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def subset(self, label: str) -> "Dataset":
        if label not in SPLITS:
            raise InvalidInputError(f"unknown split {label!r}")
        mask = self.split == label
        return Dataset(
            self.x[mask], self.a[mask], self.y[mask], self.split[mask],
            None if self.y_true is None else self.y_true[mask],
        )

    def samples(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield Sample(tuple(self.x[i]), self.a[i], self.y[i])

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], split: str | Sequence[str]) -> "Dataset":
        if isinstance(split, str):
            split = [split] * len(samples)
        return cls(
            np.array([s.x for s in samples], dtype=float),
            np.array([s.a for s in samples]),
            np.array([s.y for s in samples]),
            np.asarray(split, dtype=object),
        )

    @classmethod
    def concat(cls, parts: Sequence["Dataset"]) -> "Dataset":
        y_true = None
        if all(p.y_true is not None for p in parts):
            y_true = np.concatenate([p.y_true for p in parts])
        return cls(
            np.vstack([p.x for p in parts]),
            np.concatenate([p.a for p in parts]),
            np.concatenate([p.y for p in parts]),
            np.concatenate([p.split for p in parts]),
            y_true,
        )


class Predictor(Protocol):
    def predict(self, x: np.ndarray, a: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class FunctionPredictor:
    """Adapts a plain ``f(x, a)`` callable to the predictor interface."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def predict(self, x, a):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        return np.asarray(self.fn(x, np.asarray(a, dtype=float)), dtype=float)


# --- interventions ----------------------------------------------------------

_ALLOWED_BINOPS = {ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
                   ast.Div: np.divide, ast.Pow: np.power}
_IMPLICIT_MUL = re.compile(r"(\d(?:\.\d*)?(?:[eE][-+]?\d+)?)\s*(x(?:_\d+)?)\b")
_VAR = re.compile(r"^x(?:_(\d+))?$")


def _compile_dose(expr: str):
    text = _IMPLICIT_MUL.sub(r"\1*\2", expr.strip())
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise InvalidInputError(f"cannot parse dose expression {expr!r}") from exc

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _ALLOWED_BINOPS:
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return check(node.operand)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return True
        if isinstance(node, ast.Name) and _VAR.match(node.id):
            return True
        raise InvalidInputError(f"unsupported token in dose expression {expr!r}")

    check(tree)

    def evaluate(node, x):
        if isinstance(node, ast.Expression):
            return evaluate(node.body, x)
        if isinstance(node, ast.BinOp):
            return _ALLOWED_BINOPS[type(node.op)](evaluate(node.left, x), evaluate(node.right, x))
        if isinstance(node, ast.UnaryOp):
            v = evaluate(node.operand, x)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Constant):
            return float(node.value)
        k = int(_VAR.match(node.id).group(1) or 0)
        if k >= x.shape[1]:
            raise InvalidInputError(f"{node.id} out of range for {x.shape[1]}-dim covariates")
        return x[:, k]

    return lambda x: evaluate(tree, x)


@dataclass(frozen=True)
class SoftIntervention:
    """Shift of the observed treatment: ``A* = A + delta_a``."""

    delta_a: float

    def __post_init__(self):
        if not math.isfinite(self.delta_a):
            raise InvalidInputError("delta_a must be finite")

    @property
    def label(self) -> str:
        return f"soft:{self.delta_a:g}"

    def target(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return np.asarray(a, dtype=float) + self.delta_a


@dataclass(frozen=True)
class HardIntervention:
    """Fixed dose, possibly a function of the covariates (e.g. ``"7x"``)."""

    expr: str
    _fn: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "expr", str(self.expr).strip())
        object.__setattr__(self, "_fn", _compile_dose(self.expr))

    @classmethod
    def constant(cls, a_star: float) -> "HardIntervention":
        if not math.isfinite(a_star):
            raise InvalidInputError("a_star must be finite")
        return cls(repr(float(a_star)))

    @property
    def label(self) -> str:
        return f"hard:{self.expr}"

    def dose(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        out = np.broadcast_to(np.asarray(self._fn(x), dtype=float), (x.shape[0],)).copy()
        if not np.all(np.isfinite(out)):
            raise InvalidInputError(f"dose {self.expr!r} is not finite")
        return out

    def target(self, x: np.ndarray, a: np.ndarray) -> np.ndarray:
        return self.dose(x)


Intervention = Union[SoftIntervention, HardIntervention]


def parse_intervention(text: str) -> Intervention:
    """Parse ``soft:<delta>`` or ``hard:<expr>``."""
    kind, sep, value = text.partition(":")
    if not sep:
        raise InvalidInputError(f"intervention {text!r} must look like soft:<delta> or hard:<expr>")
    kind = kind.strip().lower()
    if kind == "soft":
        try:
            return SoftIntervention(float(value))
        except ValueError as exc:
            raise InvalidInputError(f"bad soft shift {value!r}") from exc
    if kind == "hard":
        return HardIntervention(value)
    raise InvalidInputError(f"unknown intervention kind {kind!r}")


# --- scores and intervals ---------------------------------------------------

ScoreFn = Callable[[Sample, float], float]


def residual_score(sample: Sample, prediction: float) -> float:
    if not math.isfinite(prediction):
        raise InvalidInputError(f"non-finite prediction {prediction}")
    return abs(sample.y - float(prediction))


def residual_scores(y, predictions) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    p = np.asarray(predictions, dtype=float)
    if y.shape != p.shape:
        raise InvalidInputError("outcome/prediction shape mismatch")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(p))):
        raise InvalidInputError("non-finite outcomes or predictions")
    return np.abs(y - p)


@dataclass(frozen=True, eq=False)
class CalibratedScores:
    """Calibration scores together with the (x, a) context each was computed at."""

    x: np.ndarray
    a: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(self.a, dtype=float).ravel()
        s = np.asarray(self.scores, dtype=float).ravel()
        if not (x.shape[0] == len(a) == len(s)):
            raise InvalidInputError("calibration arrays have inconsistent lengths")
        if len(s) == 0:
            raise InvalidInputError("calibration set is empty")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError("non-finite calibration scores")
        for name, arr in (("x", x), ("a", a), ("scores", s)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.scores)


def calibrate(predictor: Predictor, calibration: Dataset, score_fn: ScoreFn | None = None) -> CalibratedScores:
    if len(calibration) == 0:
        raise InvalidInputError("calibration split is empty")
    pred = np.asarray(predictor.predict(calibration.x, calibration.a), dtype=float)
    if score_fn is None:
        scores = residual_scores(calibration.y, pred)
    else:
        scores = np.array([score_fn(s, p) for s, p in zip(calibration.samples(), pred)])
    return CalibratedScores(calibration.x, calibration.a, scores)


@dataclass(frozen=True)
class PredictionInterval:
    center: float
    s_star: float
    lower: float
    upper: float
    alpha: float
    unit_id: int | None = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.s_star >= 0.0:
            raise InvalidInputError(f"s_star must be non-negative, got {self.s_star}")
        if not self.lower <= self.upper:
            raise InvalidInputError("lower endpoint exceeds upper endpoint")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, y: float) -> bool:
        return self.lower <= y <= self.upper


def build_interval(center: float, s_star: float, alpha: float, unit_id: int | None = None) -> PredictionInterval:
    """Residual-score prediction set ``{y : |y - center| <= s_star}``."""
    if not math.isfinite(center):
        raise InvalidInputError(f"non-finite center {center}")
    if math.isnan(s_star) or s_star < 0:
        raise InvalidInputError(f"s_star must be non-negative, got {s_star}")
    return PredictionInterval(float(center), float(s_star), center - s_star, center + s_star,
                              float(alpha), unit_id)


def empirical_coverage(intervals: Sequence[PredictionInterval], true_outcomes: Sequence[float]) -> float:
    if len(intervals) != len(true_outcomes):
        raise InvalidInputError("intervals and outcomes differ in length")
    if len(intervals) == 0:
        raise InvalidInputError("cannot compute coverage of an empty list")
    lo = np.array([iv.lower for iv in intervals])
    hi = np.array([iv.upper for iv in intervals])
    y = np.asarray(true_outcomes, dtype=float)
    return float(np.mean((lo <= y) & (y <= hi)))
