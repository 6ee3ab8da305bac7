"""Conditional kernel density estimate of the generalized propensity ``pi(a | x)``.

Discrete covariates get one Gaussian KDE over ``a`` per observed covariate
value. Continuous covariates pool all training doses with Gaussian weights in
``x`` before the same KDE.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..core import Dataset
from ..errors import InsufficientDataError, InvalidInputError

SQRT_2PI = math.sqrt(2.0 * math.pi)
FORMAT = "contcp-density/1"


@dataclass(frozen=True)
class ConditionalDensityConfig:
    bandwidth: str | float = "silverman"     # rule name or a fixed positive h
    grouping: str = "discrete-exact"         # or "kernel-weighted"
    h_x: float | None = None                 # covariate bandwidth for kernel-weighted pooling

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "silverman":
                raise InvalidInputError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise InvalidInputError("fixed bandwidth must be positive")
        if self.grouping not in ("discrete-exact", "kernel-weighted"):
            raise InvalidInputError(f"unknown covariate grouping {self.grouping!r}")
        if self.grouping == "kernel-weighted" and not (self.h_x is not None and self.h_x > 0):
            raise InvalidInputError("kernel-weighted grouping needs a positive h_x")


def silverman_bandwidth(a) -> float:
    """``0.9 * min(sd, IQR / 1.34) * m^(-1/5)``, falling back to whichever spread is non-zero."""
    a = np.asarray(a, dtype=float)
    m = a.size
    sd = float(a.std(ddof=1)) if m > 1 else 0.0
    q75, q25 = np.percentile(a, [75, 25])
    iqr = float(q75 - q25) / 1.34
    spread = min(sd, iqr) if iqr > 0 else sd
    if not spread > 0:
        spread = 1.0
    return 0.9 * spread * m ** (-0.2)


def _kde(a_eval, centers, h, weights=None):
    z = (np.asarray(a_eval, dtype=float)[..., None] - centers) / h
    k = np.exp(-0.5 * z * z) / (SQRT_2PI * h)
    if weights is None:
        return k.mean(axis=-1)
    return (k * weights).sum(axis=-1)


@dataclass(frozen=True, eq=False)
class ConditionalDensity:
    config: ConditionalDensityConfig
    keys: tuple                  # covariate rows (discrete) ; empty for kernel-weighted
    samples: tuple               # per-group dose arrays, or a single pooled array
    bandwidths: tuple
    x_train: np.ndarray | None = None

    def pdf(self, a, x) -> np.ndarray:
        a = np.atleast_1d(np.asarray(a, dtype=float))
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None] if x.size == a.size and a.size > 1 else x.reshape(1, -1)
        x = np.broadcast_to(x, (a.size, x.shape[1]))
        if self.config.grouping == "kernel-weighted":
            return self._pdf_pooled(a, x)
        out = np.empty(a.size)
        lookup = {k: i for i, k in enumerate(self.keys)}
        rows = [tuple(r) for r in x]
        for key in set(rows):
            if key not in lookup:
                raise InvalidInputError(f"covariate value {key} was not seen during fitting")
            g = lookup[key]
            sel = np.fromiter((r == key for r in rows), dtype=bool, count=len(rows))
            out[sel] = _kde(a[sel], self.samples[g], self.bandwidths[g])
        return out

    def _pdf_pooled(self, a, x):
        centers, h = self.samples[0], self.bandwidths[0]
        d2 = ((x[:, None, :] - self.x_train[None, :, :]) ** 2).sum(axis=-1)
        w = np.exp(-0.5 * d2 / self.config.h_x ** 2)
        w_sum = w.sum(axis=1, keepdims=True)
        w = np.where(w_sum > 0, w / np.where(w_sum > 0, w_sum, 1.0), 1.0 / w.shape[1])
        return _kde(a, centers, h, w)

    def mode(self, x, grid=None) -> float:
        grid = np.linspace(*self._range(), 10001) if grid is None else np.asarray(grid, dtype=float)
        return float(grid[int(np.argmax(self.pdf(grid, np.asarray(x, dtype=float).reshape(1, -1))))])

    def _range(self):
        allc = np.concatenate(self.samples)
        hmax = max(self.bandwidths)
        return float(allc.min() - 6 * hmax), float(allc.max() + 6 * hmax)

    # --- serialization ---------------------------------------------------------

    def to_json(self) -> str:
        cfg = {"bandwidth": self.config.bandwidth, "grouping": self.config.grouping, "h_x": self.config.h_x}
        return json.dumps({
            "format": FORMAT, "config": cfg,
            "keys": [list(k) for k in self.keys],
            "samples": [s.tolist() for s in self.samples],
            "bandwidths": list(self.bandwidths),
            "x_train": None if self.x_train is None else self.x_train.tolist(),
        })

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "ConditionalDensity":
        d = json.loads(Path(path).read_text())
        if d.get("format") != FORMAT:
            raise InvalidInputError(f"{path} is not a density file")
        return cls(ConditionalDensityConfig(**d["config"]), tuple(tuple(k) for k in d["keys"]),
                   tuple(np.array(s, dtype=float) for s in d["samples"]), tuple(d["bandwidths"]),
                   None if d["x_train"] is None else np.array(d["x_train"], dtype=float))


def fit_conditional_density(config: ConditionalDensityConfig, train: Dataset) -> ConditionalDensity:
    if len(train) == 0:
        raise InvalidInputError("training set is empty")

    def bw(a):
        return silverman_bandwidth(a) if config.bandwidth == "silverman" else float(config.bandwidth)

    if config.grouping == "kernel-weighted":
        a = np.array(train.a, dtype=float)
        return ConditionalDensity(config, (), (a,), (bw(a),), np.array(train.x, dtype=float))
    keys = sorted({tuple(r) for r in train.x.tolist()})
    rows = [tuple(r) for r in train.x.tolist()]
    samples, bws = [], []
    for key in keys:
        a = np.array([train.a[i] for i, r in enumerate(rows) if r == key], dtype=float)
        if a.size < 2:
            raise InsufficientDataError(f"covariate group {key} has {a.size} sample(s); need at least 2", group=key)
        samples.append(a)
        bws.append(bw(a))
    return ConditionalDensity(config, tuple(keys), tuple(samples), tuple(bws))
