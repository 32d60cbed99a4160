"""Feedforward baseline: 13-12-8-1 ReLU network trained with Adam on binary cross-entropy."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyDataset, InvalidConfig
from .svm import Scaler, standardize_fit

MLP_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    layer_sizes: tuple[int, ...] = (13, 12, 8, 1)
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 100
    validation_split: float = 0.2
    init_range: float = 0.05
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or self.layer_sizes[-1] != 1:
            raise InvalidConfig("layer_sizes must end in a single output unit")
        if not 0.0 <= self.validation_split < 1.0:
            raise InvalidConfig("validation_split must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidConfig("batch_size must be positive and epochs non-negative")


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # weights[k] has shape (fan_in, fan_out)
    biases: list[np.ndarray]
    config: MlpConfig = field(default_factory=MlpConfig)
    history: dict = field(default_factory=dict)
    scaler: Scaler | None = None

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    def logits(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise DimensionMismatch(f"network expects {self.dim} inputs, got {x.shape[-1]}")
        if self.scaler is not None:
            x = self.scaler.apply(x)
        return preactivations(self.weights, self.biases, np.atleast_2d(x))[-1][:, 0]

    def predict_proba(self, x):
        # saturated logits would round to exactly 0 or 1
        p = np.clip(sigmoid(self.logits(x)), np.finfo(float).tiny, np.nextafter(1.0, 0.0))
        return float(p[0]) if np.ndim(x) == 1 else p

    def predict(self, x):
        p = np.asarray(self.predict_proba(x))
        lab = np.where(p >= 0.5, 1, -1)
        return int(lab) if lab.ndim == 0 else lab

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["layer_sizes"] = list(cfg["layer_sizes"])
        return {
            "version": MLP_VERSION,
            "kind": "nn",
            "layer_sizes": list(self.config.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "config": cfg,
            "history": self.history,
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> MlpModel:
        if d.get("version") != MLP_VERSION:
            raise InvalidConfig(f"unsupported network version {d.get('version')!r}")
        cfg = dict(d.get("config", {}))
        cfg["layer_sizes"] = tuple(d["layer_sizes"])
        return cls(
            weights=[np.asarray(w, dtype=np.float64) for w in d["weights"]],
            biases=[np.asarray(b, dtype=np.float64) for b in d["biases"]],
            config=MlpConfig(**cfg),
            history=d.get("history", {}),
            scaler=None if d.get("scaler") is None else Scaler.from_dict(d["scaler"]),
        )


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def preactivations(weights, biases, x):
    """Pre-activations of every layer; the last entry is the output logit."""
    pre = []
    h = x
    for k, (w, b) in enumerate(zip(weights, biases)):
        z = h @ w + b
        pre.append(z)
        if k < len(weights) - 1:
            h = np.maximum(z, 0.0)
    return pre


def init_mlp(cfg: MlpConfig = MlpConfig(), rng: np.random.Generator | None = None) -> MlpModel:
    """Uniform(-r, r) weights, zero biases."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    sizes = cfg.layer_sizes
    weights = [rng.uniform(-cfg.init_range, cfg.init_range, size=(a, b))
               for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(b) for b in sizes[1:]]
    return MlpModel(weights, biases, cfg)


def forward(model: MlpModel, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("forward takes a single feature row")
    return float(model.predict_proba(x))


def predict_label(model: MlpModel, x) -> int:
    return 1 if forward(model, x) >= 0.5 else -1


def bce_from_logits(z, t) -> float:
    """Mean binary cross-entropy of sigmoid(z) against 0/1 targets."""
    z = np.asarray(z, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, z) - t * z))


def loss_and_grads(weights, biases, x, t):
    """Mean BCE over the batch and its gradients with respect to every parameter."""
    pre = preactivations(weights, biases, x)
    z = pre[-1][:, 0]
    loss = bce_from_logits(z, t)
    delta = ((sigmoid(z) - t) / x.shape[0])[:, None]
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    for k in range(len(weights) - 1, -1, -1):
        h_in = x if k == 0 else np.maximum(pre[k - 1], 0.0)
        gw[k] = h_in.T @ delta
        gb[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ weights[k].T) * (pre[k - 1] > 0)
    return loss, gw, gb


class Adam:
    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _metrics(weights, biases, x, t):
    if x.shape[0] == 0:
        return None, None
    z = preactivations(weights, biases, x)[-1][:, 0]
    return bce_from_logits(z, t), float(np.mean((z >= 0) == (t > 0.5)))


def train_mlp(data, cfg: MlpConfig = MlpConfig()) -> MlpModel:
    """Mini-batch Adam training with a held-out validation tail.

    Rows are shuffled once with the config seed; the last
    ``validation_split`` fraction is kept aside for per-epoch metrics.
    Every epoch reshuffles the training rows and keeps the final short batch.
    """
    if isinstance(data, tuple):
        X, y = data
    else:
        X, y = data.vectors, data.labels
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.shape[0] == 0:
        raise EmptyDataset("no training rows")
    if X.shape[1] != cfg.layer_sizes[0]:
        raise DimensionMismatch(f"network expects {cfg.layer_sizes[0]} inputs, got {X.shape[1]}")
    t = (y > 0).astype(np.float64)

    rng = np.random.default_rng(cfg.seed)
    model = init_mlp(cfg, rng)
    order = rng.permutation(X.shape[0])
    n_val = int(np.floor(cfg.validation_split * X.shape[0]))
    n_train = X.shape[0] - n_val
    if n_train == 0:
        raise EmptyDataset("validation split leaves no training rows")
    tr_idx, va_idx = order[:n_train], order[n_train:]
    if cfg.standardize:
        model.scaler = standardize_fit(X[tr_idx])
        X = model.scaler.apply(X)
    xtr, ttr, xva, tva = X[tr_idx], t[tr_idx], X[va_idx], t[va_idx]

    params = model.weights + model.biases
    n_layers = len(model.weights)
    opt = Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    hist = {"loss": [], "accuracy": [], "val_loss": [], "val_accuracy": []}
    for _ in range(cfg.epochs):
        perm = rng.permutation(n_train)
        for s in range(0, n_train, cfg.batch_size):
            b = perm[s:s + cfg.batch_size]
            _, gw, gb = loss_and_grads(model.weights, model.biases, xtr[b], ttr[b])
            opt.step(params, gw + gb)
        model.weights, model.biases = params[:n_layers], params[n_layers:]
        loss, acc = _metrics(model.weights, model.biases, xtr, ttr)
        vloss, vacc = _metrics(model.weights, model.biases, xva, tva)
        hist["loss"].append(loss)
        hist["accuracy"].append(acc)
        hist["val_loss"].append(vloss)
        hist["val_accuracy"].append(vacc)
    model.history = hist
    return model


def save_mlp(path, model: MlpModel, meta: dict | None = None) -> None:
    d = model.to_dict()
    if meta:
        d["meta_info"] = meta
    Path(path).write_text(json.dumps(d, sort_keys=True) + "\n", encoding="utf-8")


def load_mlp(path) -> MlpModel:
    return MlpModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
