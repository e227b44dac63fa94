"""Differentiable classifiers: logistic regression and a 3-layer MLP.

Both expose a numpy ``predict_proba`` / ``predict`` surface and a
graph-building ``predict_proba_tensor`` so the probabilities stay
differentiable with respect to the input during counterfactual search.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .base import BaseEstimator, check_array, check_X_y
from .optim import Adam

__all__ = ["TrainConfig", "LogisticRegression", "MlpClassifier", "load_classifier"]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 128
    seed: int = 0
    weight_decay: float = 0.0
    patience: int = 20
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


def _one_hot(y: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((y.shape[0], n_classes), dtype=np.float64)
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _val_split(n: int, fraction: float, rng: np.random.Generator):
    idx = rng.permutation(n)
    n_val = max(1, int(round(n * fraction))) if fraction > 0 else 0
    return idx[n_val:], idx[:n_val]


class _GradientClassifier(BaseEstimator):
    """Shared training loop: cross-entropy, Adam, early stop on val loss."""

    arch: str

    def __init__(self, train_config: TrainConfig | None = None):
        self.train_config = train_config

    # subclass surface ---------------------------------------------------
    def _init_params(self, d: int, n_classes: int, rng: np.random.Generator):
        raise NotImplementedError

    def _logits(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    # shared -------------------------------------------------------------
    @property
    def _cfg(self) -> TrainConfig:
        return self.train_config or TrainConfig()

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        classes = np.unique(y)
        if classes.size < 2:
            raise ValueError("training data must contain at least two classes")
        if classes.min() < 0 or classes.max() >= classes.size:
            raise ValueError("labels must be contiguous integers starting at 0")
        cfg = self._cfg
        rng = np.random.default_rng(cfg.seed)
        self.n_features_ = X.shape[1]
        self.n_classes_ = int(classes.size)
        self._init_params(self.n_features_, self.n_classes_, rng)

        train_idx, val_idx = _val_split(X.shape[0], cfg.val_fraction, rng)
        Xtr, ytr = X[train_idx], y[train_idx]
        Xval, yval = X[val_idx], y[val_idx]

        opt = Adam(self._params, lr=cfg.learning_rate)
        best_loss = np.inf
        best_params = [p.copy() for p in self._params]
        stale = 0
        for _ in range(cfg.epochs):
            order = rng.permutation(Xtr.shape[0])
            for start in range(0, Xtr.shape[0], cfg.batch_size):
                batch = order[start : start + cfg.batch_size]
                loss = self._loss(Xtr[batch], ytr[batch], cfg.weight_decay)
                loss.backward()
                opt.step([t.grad for t in self._param_tensors])
                for t in self._param_tensors:
                    t.zero_grad()
            val_loss = (
                float(self._loss(Xval, yval, 0.0).data)
                if Xval.shape[0]
                else float(self._loss(Xtr, ytr, 0.0).data)
            )
            if val_loss < best_loss - 1e-12:
                best_loss = val_loss
                best_params = [p.copy() for p in self._params]
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        for p, best in zip(self._params, best_params):
            p[...] = best
        return self

    def _loss(self, X: np.ndarray, y: np.ndarray, weight_decay: float) -> Tensor:
        logp = ad.log_softmax(self._logits(Tensor(X)))
        onehot = Tensor(_one_hot(y, self.n_classes_))
        nll = -1.0 * ad.tmean(ad.tsum(logp * onehot, axis=1))
        if weight_decay > 0:
            penalty = Tensor(0.0)
            for t in self._weight_tensors:
                penalty = penalty + ad.tsum(ad.square(t))
            nll = nll + Tensor(0.5 * weight_decay) * penalty
        return nll

    def predict_proba_tensor(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.n_features_:
            raise ad.DimensionError(
                f"expected {self.n_features_} features, got {x.shape[-1]}"
            )
        return ad.softmax(self._logits(x))

    def predict_proba(self, X) -> np.ndarray:
        X = check_array(X)
        return self.predict_proba_tensor(Tensor(X)).data

    def predict(self, X) -> np.ndarray:
        return self.predict_proba(X).argmax(axis=1)

    def score(self, X, y) -> float:
        X, y = check_X_y(X, y)
        return float((self.predict(X) == y).mean())

    # persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "layer_shapes": [list(p.shape) for p in self._params],
            "params": [p.tolist() for p in self._params],
            "n_features": self.n_features_,
            "n_classes": self.n_classes_,
            "seed": self._cfg.seed,
            "train_config": asdict(self._cfg),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, payload: dict):
        model = cls(train_config=TrainConfig(**payload["train_config"]))
        model.n_features_ = payload["n_features"]
        model.n_classes_ = payload["n_classes"]
        model._init_params(
            model.n_features_, model.n_classes_, np.random.default_rng(0)
        )
        for p, stored in zip(model._params, payload["params"]):
            p[...] = np.asarray(stored, dtype=np.float64)
        return model


class LogisticRegression(_GradientClassifier):
    """Multinomial logistic regression; the C=2 softmax form covers binary."""

    arch = "lr"

    def _init_params(self, d, n_classes, rng):
        self.weights_ = np.zeros((d, n_classes), dtype=np.float64)
        self.bias_ = np.zeros(n_classes, dtype=np.float64)
        self._params = [self.weights_, self.bias_]
        self._refresh_tensors()

    def _refresh_tensors(self):
        self._param_tensors = [Tensor(p, requires_grad=True) for p in self._params]
        self._weight_tensors = self._param_tensors[:1]

    def _logits(self, x: Tensor) -> Tensor:
        w, b = self._param_tensors
        return x @ w + b


class MlpClassifier(_GradientClassifier):
    """Three affine layers (d -> hidden -> hidden -> C) with relu activations."""

    arch = "mlp"

    def __init__(self, hidden: int = 64, train_config: TrainConfig | None = None):
        super().__init__(train_config)
        self.hidden = hidden

    def _init_params(self, d, n_classes, rng):
        h = self.hidden
        widths = [(d, h), (h, h), (h, n_classes)]
        self._params = []
        for fan_in, fan_out in widths:
            scale = np.sqrt(2.0 / fan_in)
            self._params.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self._params.append(np.zeros(fan_out, dtype=np.float64))
        self._refresh_tensors()

    def _refresh_tensors(self):
        self._param_tensors = [Tensor(p, requires_grad=True) for p in self._params]
        self._weight_tensors = self._param_tensors[0::2]

    def _logits(self, x: Tensor) -> Tensor:
        w1, b1, w2, b2, w3, b3 = self._param_tensors
        h = ad.relu(x @ w1 + b1)
        h = ad.relu(h @ w2 + b2)
        return h @ w3 + b3

    @classmethod
    def from_dict(cls, payload: dict):
        model = cls(
            hidden=payload["layer_shapes"][0][1],
            train_config=TrainConfig(**payload["train_config"]),
        )
        model.n_features_ = payload["n_features"]
        model.n_classes_ = payload["n_classes"]
        model._init_params(model.n_features_, model.n_classes_, np.random.default_rng(0))
        for p, stored in zip(model._params, payload["params"]):
            p[...] = np.asarray(stored, dtype=np.float64)
        return model


_ARCHS = {"lr": LogisticRegression, "mlp": MlpClassifier}


def load_classifier(path):
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return _ARCHS[payload["arch"]].from_dict(payload)
