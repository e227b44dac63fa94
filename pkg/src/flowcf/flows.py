"""Class-conditional Masked Autoregressive Flow.

Each transform is a MADE-style masked network producing per-coordinate
shift and log-scale from the preceding coordinates plus a one-hot class
context; coordinate orderings are reversed between consecutive transforms.
The density direction (data -> latent) needs a single masked pass and is
differentiable with respect to the input, which is what the counterfactual
objective consumes.
"""

from __future__ import annotations

import json

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .base import BaseEstimator, check_X_y, check_array
from .models import TrainConfig, _one_hot, _val_split
from .optim import Adam

__all__ = ["MadeTransform", "MaskedAutoregressiveFlow", "FlowNumericsError",
           "TrainingError", "load_flow"]

LOG_SCALE_BOUND = 7.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class FlowNumericsError(ArithmeticError):
    """A transform produced a non-finite intermediate value."""


class TrainingError(RuntimeError):
    """Flow training hit a non-finite loss."""


class MadeTransform:
    """One masked affine autoregressive transform with class conditioning.

    Output coordinate i (both shift and log-scale heads) depends only on
    input coordinates with strictly smaller degree, plus the unmasked
    context columns.
    """

    def __init__(self, d: int, n_classes: int, hidden: int,
                 degrees: np.ndarray, rng: np.random.Generator):
        self.d = d
        self.n_classes = n_classes
        self.hidden = hidden
        self.degrees = np.asarray(degrees, dtype=np.int64)

        m_hidden = (np.arange(hidden) % max(d - 1, 1)) + 1
        self.m_hidden = m_hidden
        in_dim = d + n_classes
        mask1 = np.zeros((in_dim, hidden))
        mask1[:d] = self.degrees[:, None] <= m_hidden[None, :]
        mask1[d:] = 1.0  # context is fully connected
        mask2 = (m_hidden[:, None] <= m_hidden[None, :]).astype(np.float64)
        mask_out = (m_hidden[:, None] < self.degrees[None, :]).astype(np.float64)
        self.masks = [mask1, mask2, mask_out]

        def he(fan_in, shape):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

        # zeroed heads make the untrained transform the identity
        self.params = [
            he(in_dim, (in_dim, hidden)), np.zeros(hidden),
            he(hidden, (hidden, hidden)), np.zeros(hidden),
            np.zeros((hidden, d)), np.zeros(d),
            np.zeros((hidden, d)), np.zeros(d),
        ]
        self._refresh_tensors()

    def _refresh_tensors(self):
        self.param_tensors = [Tensor(p, requires_grad=True) for p in self.params]
        self._mask_tensors = [Tensor(m) for m in self.masks]

    # graph path ---------------------------------------------------------
    def _shift_log_scale(self, x: Tensor, context: np.ndarray):
        w1, b1, w2, b2, wm, bm, wa, ba = self.param_tensors
        m1, m2, mo = self._mask_tensors
        inp = ad.concatenate([x, Tensor(context)], axis=1)
        h = ad.relu(inp @ (w1 * m1) + b1)
        h = ad.relu(h @ (w2 * m2) + b2)
        shift = h @ (wm * mo) + bm
        log_scale = ad.clip(h @ (wa * mo) + ba, -LOG_SCALE_BOUND, LOG_SCALE_BOUND)
        return shift, log_scale

    def inverse_tensor(self, x: Tensor, context: np.ndarray):
        """Data -> latent; returns (z, per-row sum of log-scales)."""
        shift, log_scale = self._shift_log_scale(x, context)
        z = (x - shift) * ad.exp(-1.0 * log_scale)
        return z, ad.tsum(log_scale, axis=1)

    # numpy path ---------------------------------------------------------
    def _shift_log_scale_np(self, x: np.ndarray, context: np.ndarray):
        w1, b1, w2, b2, wm, bm, wa, ba = self.params
        m1, m2, mo = self.masks
        inp = np.concatenate([x, context], axis=1)
        h = np.maximum(inp @ (w1 * m1) + b1, 0.0)
        h = np.maximum(h @ (w2 * m2) + b2, 0.0)
        shift = h @ (wm * mo) + bm
        log_scale = np.clip(h @ (wa * mo) + ba, -LOG_SCALE_BOUND, LOG_SCALE_BOUND)
        return shift, log_scale

    def inverse_np(self, x: np.ndarray, context: np.ndarray):
        shift, log_scale = self._shift_log_scale_np(x, context)
        z = (x - shift) * np.exp(-log_scale)
        return z, log_scale.sum(axis=1)

    def forward_np(self, z: np.ndarray, context: np.ndarray):
        """Latent -> data, one coordinate per pass in degree order."""
        x = np.zeros_like(z)
        log_det = np.zeros(z.shape[0])
        for deg in range(1, self.d + 1):
            shift, log_scale = self._shift_log_scale_np(x, context)
            i = int(np.where(self.degrees == deg)[0][0])
            x[:, i] = shift[:, i] + z[:, i] * np.exp(log_scale[:, i])
            log_det += log_scale[:, i]
        return x, log_det


class MaskedAutoregressiveFlow(BaseEstimator):
    """Stack of MadeTransforms over a standard-normal base distribution."""

    def __init__(self, n_transforms: int = 5, hidden: int = 64,
                 jitter: float = 0.02,
                 train_config: TrainConfig | None = None):
        self.n_transforms = n_transforms
        self.hidden = hidden
        # std of the per-epoch Gaussian noise added to training features;
        # doubles as dequantization and as a smoothness control on the
        # learned density (larger jitter -> wider ridges, lower peaks)
        self.jitter = jitter
        self.train_config = train_config

    @property
    def _cfg(self) -> TrainConfig:
        return self.train_config or TrainConfig()

    def _build(self, d: int, n_classes: int, rng: np.random.Generator):
        self.d_ = d
        self.n_classes_ = n_classes
        ascending = np.arange(1, d + 1)
        self.transforms_ = [
            MadeTransform(
                d, n_classes, self.hidden,
                ascending if k % 2 == 0 else ascending[::-1], rng,
            )
            for k in range(self.n_transforms)
        ]

    def _context(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64)
        if np.any((y < 0) | (y >= self.n_classes_)):
            raise ValueError(f"labels must lie in [0, {self.n_classes_})")
        return _one_hot(y, self.n_classes_)

    # density ------------------------------------------------------------
    def log_prob_tensor(self, x: Tensor, y) -> Tensor:
        """Differentiable per-row conditional log-density."""
        context = self._context(y)
        z = x
        total_log_scale = None
        for k, tr in enumerate(self.transforms_):
            try:
                z, row_log_scale = tr.inverse_tensor(z, context)
            except ad.DomainError as err:
                raise FlowNumericsError(f"transform {k}: {err}") from err
            total_log_scale = (
                row_log_scale if total_log_scale is None
                else total_log_scale + row_log_scale
            )
        base = -1.0 * (
            ad.tsum(ad.square(z), axis=1) * 0.5 + Tensor(self.d_ * _HALF_LOG_2PI)
        )
        return base - total_log_scale

    def score_samples(self, X, y) -> np.ndarray:
        X = check_array(X)
        context = self._context(y)
        z = X
        total = np.zeros(X.shape[0])
        for k, tr in enumerate(self.transforms_):
            z, row_log_scale = tr.inverse_np(z, context)
            if not np.all(np.isfinite(z)):
                raise FlowNumericsError(f"transform {k}: non-finite latent")
            total += row_log_scale
        base = -0.5 * (z**2).sum(axis=1) - self.d_ * _HALF_LOG_2PI
        return base - total

    def inverse(self, X, y):
        """Data -> latent; returns (z, log|det dz/dx|) per row."""
        X = check_array(X)
        context = self._context(y)
        z = X
        total = np.zeros(X.shape[0])
        for tr in self.transforms_:
            z, row_log_scale = tr.inverse_np(z, context)
            total += row_log_scale
        return z, -total

    def forward(self, Z, y):
        """Latent -> data through the stack in generative order."""
        Z = check_array(Z)
        context = self._context(y)
        x = Z
        total = np.zeros(Z.shape[0])
        for tr in reversed(self.transforms_):
            x, log_det = tr.forward_np(x, context)
            total += log_det
        return x, total

    def sample(self, y, n_samples: int | None = None, seed: int = 0) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64)
        if y.ndim == 0:
            if n_samples is None or n_samples < 1:
                raise ValueError("n_samples must be >= 1 for a scalar label")
            y = np.full(n_samples, int(y))
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((y.shape[0], self.d_))
        x, _ = self.forward(z, y)
        return x

    # training -----------------------------------------------------------
    def fit(self, X, y):
        X, y = check_X_y(X, y)
        classes, counts = np.unique(y, return_counts=True)
        if np.any(counts < 2):
            raise ValueError("every class needs at least 2 samples")
        cfg = self._cfg
        rng = np.random.default_rng(cfg.seed)
        self._build(X.shape[1], int(classes.max()) + 1, rng)

        train_idx, val_idx = _val_split(X.shape[0], cfg.val_fraction, rng)
        Xtr, ytr = X[train_idx], y[train_idx]
        Xval, yval = X[val_idx], y[val_idx]
        ctx_val = self._context(yval) if len(val_idx) else None

        params = [p for tr in self.transforms_ for p in tr.params]
        tensors = [t for tr in self.transforms_ for t in tr.param_tensors]
        opt = Adam(params, lr=cfg.learning_rate)
        best_loss = np.inf
        best_params = [p.copy() for p in params]
        stale = 0
        for epoch in range(cfg.epochs):
            jittered = Xtr + rng.normal(0.0, self.jitter, size=Xtr.shape)
            order = rng.permutation(Xtr.shape[0])
            for batch_no, start in enumerate(range(0, Xtr.shape[0], cfg.batch_size)):
                batch = order[start : start + cfg.batch_size]
                try:
                    logp = self.log_prob_tensor(Tensor(jittered[batch]), ytr[batch])
                    loss = -1.0 * ad.tmean(logp)
                except (FlowNumericsError, ad.DomainError) as err:
                    raise TrainingError(
                        f"non-finite loss at epoch {epoch}, batch {batch_no}"
                    ) from err
                loss.backward()
                opt.step([t.grad for t in tensors])
                for t in tensors:
                    t.zero_grad()
            if ctx_val is not None:
                val_loss = -float(np.mean(self.score_samples(Xval, yval)))
            else:
                val_loss = -float(np.mean(self.score_samples(Xtr, ytr)))
            if val_loss < best_loss - 1e-12:
                best_loss = val_loss
                best_params = [p.copy() for p in params]
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        for p, best in zip(params, best_params):
            p[...] = best
        return self

    # persistence --------------------------------------------------------
    def to_dict(self) -> dict:
        from dataclasses import asdict

        return {
            "n_transforms": self.n_transforms,
            "hidden": self.hidden,
            "jitter": self.jitter,
            "d": self.d_,
            "n_classes": self.n_classes_,
            "seed": self._cfg.seed,
            "train_config": asdict(self._cfg),
            "transforms": [
                {
                    "degrees": tr.degrees.tolist(),
                    "masks": [m.tolist() for m in tr.masks],
                    "params": [p.tolist() for p in tr.params],
                }
                for tr in self.transforms_
            ],
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, payload: dict):
        flow = cls(
            n_transforms=payload["n_transforms"],
            hidden=payload["hidden"],
            jitter=payload.get("jitter", 0.02),
            train_config=TrainConfig(**payload["train_config"]),
        )
        flow._build(payload["d"], payload["n_classes"], np.random.default_rng(0))
        for tr, stored in zip(flow.transforms_, payload["transforms"]):
            tr.degrees = np.asarray(stored["degrees"], dtype=np.int64)
            tr.masks = [np.asarray(m, dtype=np.float64) for m in stored["masks"]]
            for p, sp in zip(tr.params, stored["params"]):
                p[...] = np.asarray(sp, dtype=np.float64)
            tr._refresh_tensors()
        return flow


def load_flow(path):
    with open(path, encoding="utf-8") as fh:
        return MaskedAutoregressiveFlow.from_dict(json.load(fh))
