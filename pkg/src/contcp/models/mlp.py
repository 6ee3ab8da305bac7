"""Small feedforward regressor ``phi(x, a)`` with inverted dropout, trained by Adam.

Everything is plain numpy so that a seed fixes the weights bit for bit.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..core import Dataset, PredictionInterval
from ..errors import InvalidInputError, TrainingError

MAGIC = b"CONTCPMLP1"


@dataclass(frozen=True)
class MlpConfig:
    layer_widths: tuple = (16, 16, 16)
    dropout_rate: float = 0.1
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.layer_widths or min(self.layer_widths) <= 0:
            raise InvalidInputError("layer widths must be a non-empty list of positive integers")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidInputError("dropout rate must lie in [0, 1)")
        if self.epochs <= 0 or self.batch_size <= 0 or not self.learning_rate > 0:
            raise InvalidInputError("epochs, batch size and learning rate must be positive")
        if self.activation != "relu":
            raise InvalidInputError("only the rectified-linear activation is supported")


@dataclass(eq=False)
class MlpPredictor:
    """Trained network plus the input standardization it was fitted with."""

    config: MlpConfig
    weights: list            # [W1, b1, W2, b2, ...]
    mean: np.ndarray
    scale: np.ndarray
    history: list = field(default_factory=list)

    def _inputs(self, x, a):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        a = np.asarray(a, dtype=float).reshape(-1, 1)
        z = np.hstack([x, a])
        return (z - self.mean) / self.scale

    def predict(self, x, a) -> np.ndarray:
        """Deterministic mode: dropout off (inverted dropout needs no rescaling)."""
        h = self._inputs(x, a)
        n_layers = len(self.weights) // 2
        for i in range(n_layers):
            h = h @ self.weights[2 * i] + self.weights[2 * i + 1]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
        return h[:, 0]

    def sample(self, x, a, num_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Stochastic forward passes with dropout active; shape ``(num_samples, m)``."""
        z = self._inputs(x, a)
        p = self.config.dropout_rate
        n_layers = len(self.weights) // 2
        h = np.broadcast_to(z, (num_samples,) + z.shape)
        for i in range(n_layers):
            h = h @ self.weights[2 * i] + self.weights[2 * i + 1]
            if i < n_layers - 1:
                h = np.maximum(h, 0.0)
                if p > 0:
                    h = h * (rng.random(h.shape) >= p) / (1.0 - p)
        return h[..., 0]

    def predict_stochastic(self, x, a, rng: np.random.Generator) -> np.ndarray:
        return self.sample(x, a, 1, rng)[0]

    # --- serialization ---------------------------------------------------------

    def save(self, path) -> None:
        header = json.dumps({"config": asdict(self.config),
                             "shapes": [list(w.shape) for w in self.weights],
                             "inputs": len(self.mean)}).encode()
        arrays = [self.mean, self.scale] + list(self.weights)
        with Path(path).open("wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for arr in arrays:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "MlpPredictor":
        data = Path(path).read_bytes()
        if not data.startswith(MAGIC):
            raise InvalidInputError(f"{path} is not a model checkpoint")
        off = len(MAGIC)
        (hlen,) = struct.unpack_from("<I", data, off)
        off += 4
        header = json.loads(data[off:off + hlen])
        off += hlen

        def take(shape):
            nonlocal off
            size = int(np.prod(shape)) * 8
            arr = np.frombuffer(data, dtype="<f8", count=int(np.prod(shape)), offset=off).reshape(shape)
            off += size
            return arr.astype(float)

        d = header["inputs"]
        mean, scale = take((d,)), take((d,))
        weights = [take(tuple(s)) for s in header["shapes"]]
        if off != len(data):
            raise InvalidInputError(f"{path} has trailing or missing bytes")
        cfg = header["config"]
        cfg["layer_widths"] = tuple(cfg["layer_widths"])
        return cls(MlpConfig(**cfg), weights, mean, scale)


def _init_weights(sizes, rng):
    weights = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in), (fan_in, fan_out)))
        weights.append(np.zeros(fan_out))
    return weights


def _forward_backward(weights, z, y, p, rng):
    """MSE loss and gradients for one minibatch with inverted dropout on hidden layers."""
    n_layers = len(weights) // 2
    acts, masks = [z], []
    h = z
    for i in range(n_layers):
        h = h @ weights[2 * i] + weights[2 * i + 1]
        if i < n_layers - 1:
            h = np.maximum(h, 0.0)
            m = (rng.random(h.shape) >= p) / (1.0 - p) if p > 0 else np.ones_like(h)
            h = h * m
            masks.append(m)
        acts.append(h)
    err = acts[-1][:, 0] - y
    loss = float(np.mean(err * err))
    grads = [None] * len(weights)
    delta = (2.0 / len(y)) * err[:, None]
    for i in reversed(range(n_layers)):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[2 * i].T) * masks[i - 1] * (acts[i] > 0)
    return loss, grads


def train_mlp(config: MlpConfig, train: Dataset, validation: Dataset | None = None) -> MlpPredictor:
    """Fit ``phi`` on ``(x, a) -> y`` with minibatch Adam on the squared error."""
    if len(train) == 0:
        raise InvalidInputError("training set is empty")
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed) & 0xFFFFFFFFFFFFFFFF, 0x4D4C50]))
    z_raw = np.hstack([train.x, train.a[:, None]])
    mean = z_raw.mean(axis=0)
    scale = z_raw.std(axis=0)
    scale[scale == 0] = 1.0
    z = (z_raw - mean) / scale
    y = np.asarray(train.y, dtype=float)
    weights = _init_weights([z.shape[1], *config.layer_widths, 1], rng)
    m_state = [np.zeros_like(w) for w in weights]
    v_state = [np.zeros_like(w) for w in weights]
    b1, b2, eps, lr = 0.9, 0.999, 1e-8, config.learning_rate
    step = 0
    history = []
    model = MlpPredictor(config, weights, mean, scale, history)
    for epoch in range(config.epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for start in range(0, len(y), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = _forward_backward(weights, z[idx], y[idx], config.dropout_rate, rng)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            total += loss * len(idx)
            step += 1
            for j, g in enumerate(grads):
                m_state[j] = b1 * m_state[j] + (1 - b1) * g
                v_state[j] = b2 * v_state[j] + (1 - b2) * g * g
                m_hat = m_state[j] / (1 - b1 ** step)
                v_hat = v_state[j] / (1 - b2 ** step)
                weights[j] -= lr * m_hat / (np.sqrt(v_hat) + eps)
        record = {"epoch": epoch, "train_mse": total / len(y)}
        if validation is not None and len(validation) and (epoch % 10 == 9 or epoch == config.epochs - 1):
            record["validation_mse"] = mse(model, validation)
        history.append(record)
    return model


def mse(predictor, data: Dataset, target: str = "y") -> float:
    y = data.y if target == "y" else data.y_true
    return float(np.mean((predictor.predict(data.x, data.a) - y) ** 2))


def mc_dropout_interval(predictor: MlpPredictor, x, a: float, alpha: float, num_samples: int = 100,
                        rng: np.random.Generator | None = None,
                        unit_id: int | None = None) -> PredictionInterval:
    """Interval from the empirical ``alpha/2`` and ``1 - alpha/2`` quantiles of dropout samples."""
    if num_samples < 2:
        raise InvalidInputError("need at least two dropout samples")
    rng = np.random.default_rng(0) if rng is None else rng
    draws = predictor.sample(np.asarray(x, dtype=float).reshape(1, -1), [a], num_samples, rng)[:, 0]
    return interval_from_samples(draws, alpha, unit_id)


def interval_from_samples(draws, alpha: float, unit_id: int | None = None) -> PredictionInterval:
    draws = np.asarray(draws, dtype=float)
    if not np.all(np.isfinite(draws)):
        raise InvalidInputError("non-finite dropout samples")
    if not 0 < alpha < 1:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    lo, hi = np.quantile(draws, [alpha / 2, 1 - alpha / 2], method="linear")
    # The mean need not be the midpoint; s_star reports the half-width.
    return PredictionInterval(float(draws.mean()), 0.5 * float(hi - lo), float(lo), float(hi), alpha, unit_id)


def mc_dropout_intervals(predictor: MlpPredictor, x, a, alpha: float, num_samples: int = 100,
                         rng: np.random.Generator | None = None) -> list[PredictionInterval]:
    """Vectorized over test points; each column gets its own dropout masks."""
    rng = np.random.default_rng(0) if rng is None else rng
    draws = predictor.sample(x, a, num_samples, rng)
    return [interval_from_samples(draws[:, i], alpha, i) for i in range(draws.shape[1])]
