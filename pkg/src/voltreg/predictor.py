"""Fully connected predictors with hand-written backpropagation and Adam.

Each site (PV plant or the aggregate load) owns a :class:`SitePredictor`
made of an MLP, a min-max feature normalizer, a target scale (capacity or
peak demand) and its optimizer state. Models work in normalized units;
``predict_kw`` converts back to kW.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class StaleTapeError(RuntimeError):
    """A forward tape was used after the model's parameters changed."""


@dataclasses.dataclass
class MLP:
    """ReLU network; ``weights[k]`` has shape ``(dims[k], dims[k+1])``."""

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    version: int = 0

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        if len(self.layer_dims) < 2:
            raise ValueError("an MLP needs at least an input and an output layer")
        if len(self.weights) != len(self.layer_dims) - 1 or len(self.biases) != len(self.weights):
            raise ValueError("parameter count does not match layer_dims")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (self.layer_dims[k], self.layer_dims[k + 1]) or b.shape != (self.layer_dims[k + 1],):
                raise ValueError(f"layer {k} parameters have incompatible shapes")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {k} parameters are not finite")

    @classmethod
    def init(cls, layer_dims, rng: np.random.Generator) -> "MLP":
        """Glorot-uniform weights, zero biases."""
        dims = tuple(int(d) for d in layer_dims)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(dims, weights, biases)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MLP":
        return MLP(self.layer_dims, [W.copy() for W in self.weights],
                   [b.copy() for b in self.biases], self.version)

    def to_dict(self) -> dict:
        return {"layer_dims": list(self.layer_dims),
                "weights": [W.tolist() for W in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, doc: dict) -> "MLP":
        return cls(tuple(doc["layer_dims"]),
                   [np.array(W, dtype=float).reshape(a, b) for W, a, b in
                    zip(doc["weights"], doc["layer_dims"][:-1], doc["layer_dims"][1:])],
                   [np.array(b, dtype=float) for b in doc["biases"]])


@dataclasses.dataclass(frozen=True)
class Tape:
    model_id: int
    version: int
    inputs: tuple  # input of every layer
    pre: tuple  # pre-activation of every hidden layer


def forward(model: MLP, features: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Normalized prediction for one feature vector (or a batch of rows)."""
    h = np.asarray(features, dtype=float)
    if h.shape[-1] != model.layer_dims[0]:
        raise ValueError(f"expected {model.layer_dims[0]} features, got {h.shape[-1]}")
    inputs, pre = [], []
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(h)
        a = h @ W + b
        if k < last:
            pre.append(a)
            h = np.maximum(a, 0.0)
        else:
            h = a
    return h, Tape(id(model), model.version, tuple(inputs), tuple(pre))


def backward(model: MLP, tape: Tape, grad_output: np.ndarray) -> list[np.ndarray]:
    """Gradient of ``sum(grad_output * prediction)`` in the order of ``model.params``.

    Batched tapes accumulate over the leading axis.
    """
    if tape.model_id != id(model) or tape.version != model.version:
        raise StaleTapeError("tape does not belong to the current model parameters")
    g = np.asarray(grad_output, dtype=float)
    grads: list[np.ndarray] = []
    for k in range(len(model.weights) - 1, -1, -1):
        x = tape.inputs[k]
        if x.ndim == 1:
            dW = np.outer(x, g)
            db = g.copy()
        else:
            dW = x.T @ g
            db = g.sum(axis=0)
        grads.append(db)
        grads.append(dW)
        if k > 0:
            g = (g @ model.weights[k].T) * (tape.pre[k - 1] > 0)
    return grads[::-1]


def mse_and_grad(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over the horizon and its gradient ``(2/T)(pred - truth)``."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction and target lengths differ")
    err = pred - truth
    T = err.shape[-1]
    return float(np.mean(err ** 2)), 2.0 * err / T


@dataclasses.dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    learning_rate: float = 3e-4
    decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model: MLP, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in model.params], [np.zeros_like(p) for p in model.params], **kw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("step", "learning_rate", "decay", "beta1", "beta2", "eps")}
        d["m"] = [a.tolist() for a in self.m]
        d["v"] = [a.tolist() for a in self.v]
        return d

    @classmethod
    def from_dict(cls, doc: dict, model: MLP) -> "AdamState":
        shapes = [p.shape for p in model.params]
        m = [np.array(a, dtype=float).reshape(s) for a, s in zip(doc["m"], shapes)]
        v = [np.array(a, dtype=float).reshape(s) for a, s in zip(doc["v"], shapes)]
        kw = {k: doc[k] for k in ("step", "learning_rate", "decay", "beta1", "beta2", "eps")}
        return cls(m, v, **kw)


def adam_step(model: MLP, grads: list[np.ndarray], state: AdamState) -> None:
    """In-place Adam update with decoupled weight decay."""
    params = model.params
    if len(grads) != len(params) or any(g.shape != p.shape for g, p in zip(grads, params)):
        raise ValueError("gradient shapes do not match the model")
    state.step += 1
    b1, b2, lr = state.beta1, state.beta2, state.learning_rate
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * ((m / c1) / (np.sqrt(v / c2) + state.eps) + state.decay * p)
    model.version += 1


def clamp_prediction(pred_kw: np.ndarray, capacity: float) -> tuple[np.ndarray, np.ndarray]:
    """Clamp to ``[0, capacity]``; also returns the in-range mask used as the gradient gate."""
    pred_kw = np.asarray(pred_kw, dtype=float)
    inside = (pred_kw >= 0.0) & (pred_kw <= capacity)
    n_out = int(inside.size - inside.sum())
    if n_out:
        logger.debug("clamped %d of %d predictions to [0, %g]", n_out, inside.size, capacity)
    return np.clip(pred_kw, 0.0, capacity), inside


@dataclasses.dataclass(frozen=True)
class Normalizer:
    """Min-max scaling of features and a single scale for the target."""

    feat_min: np.ndarray
    feat_max: np.ndarray
    target_scale: float

    def __post_init__(self):
        if not np.all(self.feat_max > self.feat_min):
            raise ValueError("every feature needs max > min")
        if not self.target_scale > 0:
            raise ValueError("target scale must be positive")

    @classmethod
    def fit(cls, features: np.ndarray, target_scale: float) -> "Normalizer":
        lo = features.min(axis=0)
        hi = features.max(axis=0)
        # constant features (e.g. a night-time hour) get a unit range
        hi = np.where(hi > lo, hi, lo + 1.0)
        return cls(lo, hi, float(target_scale))

    def features(self, raw: np.ndarray) -> np.ndarray:
        return (raw - self.feat_min) / (self.feat_max - self.feat_min)

    def features_inverse(self, scaled: np.ndarray) -> np.ndarray:
        return scaled * (self.feat_max - self.feat_min) + self.feat_min

    def target(self, kw: np.ndarray) -> np.ndarray:
        return np.asarray(kw, dtype=float) / self.target_scale

    def target_inverse(self, scaled: np.ndarray) -> np.ndarray:
        return np.asarray(scaled, dtype=float) * self.target_scale

    def to_dict(self) -> dict:
        return {"feat_min": self.feat_min.tolist(), "feat_max": self.feat_max.tolist(),
                "target_scale": self.target_scale}

    @classmethod
    def from_dict(cls, doc: dict) -> "Normalizer":
        return cls(np.array(doc["feat_min"], dtype=float), np.array(doc["feat_max"], dtype=float),
                   float(doc["target_scale"]))


@dataclasses.dataclass
class SitePredictor:
    """Model, scaling and optimizer state of one prediction site.

    ``capacity`` bounds the clamped kW prediction (PV rating, or an upper
    bound on the aggregate load).
    """

    name: str
    model: MLP
    normalizer: Normalizer
    capacity: float
    optimizer: AdamState

    @classmethod
    def create(cls, name: str, features: np.ndarray, target_scale: float, capacity: float,
               rng: np.random.Generator, hidden=(128, 128), horizon: int = 24,
               learning_rate: float = 3e-4, decay: float = 1e-5) -> "SitePredictor":
        norm = Normalizer.fit(features, target_scale)
        model = MLP.init((features.shape[1], *hidden, horizon), rng)
        return cls(name, model, norm, float(capacity),
                   AdamState.for_model(model, learning_rate=learning_rate, decay=decay))

    def forward(self, raw_features: np.ndarray) -> tuple[np.ndarray, Tape]:
        return forward(self.model, self.normalizer.features(raw_features))

    def predict_kw(self, raw_features: np.ndarray) -> np.ndarray:
        """Clamped prediction in kW."""
        out, _ = self.forward(raw_features)
        return clamp_prediction(self.normalizer.target_inverse(out), self.capacity)[0]

    def to_dict(self) -> dict:
        return {"name": self.name, "capacity": self.capacity, "model": self.model.to_dict(),
                "normalizer": self.normalizer.to_dict(), "optimizer": self.optimizer.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "SitePredictor":
        model = MLP.from_dict(doc["model"])
        return cls(doc["name"], model, Normalizer.from_dict(doc["normalizer"]), float(doc["capacity"]),
                   AdamState.from_dict(doc["optimizer"], model))

    def copy(self) -> "SitePredictor":
        return SitePredictor.from_dict(self.to_dict())


def save_checkpoint(predictors: list[SitePredictor], path: str | Path, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"version": CHECKPOINT_VERSION, "meta": meta or {},
           "sites": [p.to_dict() for p in predictors]}
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path: str | Path) -> tuple[list[SitePredictor], dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    return [SitePredictor.from_dict(d) for d in doc["sites"]], doc.get("meta", {})
