"""Proxy regressor ``f(x[, c]) -> y`` and the naive gradient-ascent baseline."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .data import Dataset, InputSpace, space_from_json
from .diffcore import MLP, AdamState, Graph, NonFiniteError, Tensor, adam_step
from .diffcore.checkpoint import load_checkpoint, save_checkpoint
from .invmap import Standardizer, input_representation, rep_dim
from .rng import component_rng


@dataclass
class ForwardConfig:
    hidden: Tuple[int, ...] = (256, 256, 256)
    lr: float = 1e-3
    batch_size: int = 128
    steps: int = 2000
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not (self.lr > 0 and self.batch_size > 0 and self.steps >= 0 and 0 <= self.val_fraction < 1):
            raise ValueError("invalid forward-model config")


class ForwardModel:
    def __init__(self, space: InputSpace, config: ForwardConfig, y_std: Standardizer,
                 c_std: Optional[Standardizer] = None):
        self.space = space
        self.config = config
        self.y_std = y_std
        self.c_std = c_std
        c_dim = 0 if c_std is None else len(c_std.mean)
        self.net = MLP([rep_dim(space) + c_dim, *config.hidden, 1],
                       component_rng(config.seed, "forward-init"), prefix="fwd", activation="relu")
        last = self.net.n_layers - 1
        self.net.params[f"fwd.{last}.W"][:] = 0.0

    @property
    def contextual(self) -> bool:
        return self.c_std is not None

    @property
    def params(self):
        return self.net.params

    def _inputs(self, rep: np.ndarray, C=None) -> np.ndarray:
        if self.contextual:
            if C is None:
                raise ValueError("contextual forward model needs contexts")
            C = np.broadcast_to(np.atleast_2d(C), (len(rep), len(self.c_std.mean)))
            return np.concatenate([rep, self.c_std.encode(C)], axis=1)
        if C is not None:
            raise ValueError("non-contextual forward model got contexts")
        return rep

    def build(self, g: Graph, rep: Tensor, C=None) -> Tensor:
        """Standardized prediction on ``g`` with frozen weights (gradients reach ``rep``)."""
        if self.contextual:
            C = np.broadcast_to(np.atleast_2d(C), (rep.shape[0], len(self.c_std.mean)))
            rep = g.concat([rep, g.const(self.c_std.encode(C))])
        return self.net(g, rep, frozen=True)

    def predict_rep(self, rep: np.ndarray, C=None) -> np.ndarray:
        """Standardized predictions from network-side representations."""
        return self.net.predict(self._inputs(np.atleast_2d(rep), C))[:, 0]

    def predict(self, X, C=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X))
        if X.shape[1] != self.space.dim:
            raise ValueError(f"expected inputs of dimension {self.space.dim}, got {X.shape[1]}")
        rep = input_representation(self.space, X)
        return self.y_std.decode(self.predict_rep(rep, C))[:, 0]

    def gradient(self, X, C=None) -> np.ndarray:
        """d prediction / d x in raw input units (continuous spaces only)."""
        if self.space.kind != "continuous":
            raise ValueError("input gradients need a continuous space")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        g = Graph()
        rep = g.param("rep", self.space.to_unit(X))
        out = self.build(g, rep, C)
        grads = g.backward(g.sum(out))
        scale = self.y_std.std[0] * 2.0 / (self.space.hi - self.space.lo)
        return grads["rep"] * scale

    def to_json(self) -> dict:
        cfg = asdict(self.config)
        cfg["hidden"] = list(cfg["hidden"])
        return {"kind": "forward_model", "space": self.space.to_json(), "config": cfg,
                "y_standardizer": self.y_std.to_json(),
                "c_standardizer": None if self.c_std is None else self.c_std.to_json()}


def train_forward(dataset: Dataset, config: Optional[ForwardConfig] = None,
                  y_std: Optional[Standardizer] = None, weights=None) -> Tuple[ForwardModel, float]:
    """Least-squares fit on a seeded 90/10 split; returns the model and validation MSE (raw y units)."""
    dataset.require_nonempty()
    config = config or ForwardConfig()
    rng = component_rng(config.seed, "forward-train")
    n = len(dataset)
    perm = rng.permutation(n)
    n_val = int(round(config.val_fraction * n)) if n >= 10 else 0
    val, tr = perm[:n_val], perm[n_val:]
    y_std = y_std or Standardizer.fit(dataset.y[tr])
    c_std = Standardizer.fit(dataset.C[tr]) if dataset.contextual else None
    model = ForwardModel(dataset.space, config, y_std, c_std)
    inputs = model._inputs(input_representation(dataset.space, dataset.X), dataset.C)
    targets = y_std.encode(dataset.y)
    opt = AdamState.for_params(model.params, lr=config.lr)
    w_tr = None if weights is None else np.asarray(weights, dtype=np.float64)[tr]
    B = min(config.batch_size, len(tr))
    for step in range(config.steps):
        # linear decay to 10% of the base rate
        opt.lr = config.lr * (1.0 - 0.9 * step / max(config.steps, 1))
        if w_tr is None:
            idx = tr[rng.integers(0, len(tr), size=B)]
        else:
            idx = tr[np.minimum(np.searchsorted(np.cumsum(w_tr) / w_tr.sum(), rng.random(B), side="right"),
                                len(tr) - 1)]
        g = Graph()
        pred = model.net(g, g.const(inputs[idx]))
        err = g.sub(pred, targets[idx])
        loss = g.mean(g.square(err))
        try:
            grads = g.backward(loss)
        except NonFiniteError as exc:
            raise NonFiniteError(f"forward model training diverged at step {step}: {exc}") from exc
        adam_step(model.params, grads, opt)
    held = val if len(val) else tr
    pred = y_std.decode(model.net.predict(inputs[held]))[:, 0]
    mse = float(np.mean((pred - dataset.y[held]) ** 2))
    if not np.isfinite(mse):
        raise NonFiniteError("forward model produced a non-finite validation error")
    return model, mse


def predict(model: ForwardModel, X, C=None) -> np.ndarray:
    return model.predict(X, C)


def naive_forward_optimize(model, space: InputSpace, starts, steps: int = 200,
                           step_size: float = 0.05, C=None) -> np.ndarray:
    """Projected gradient ascent on the model's prediction, one trajectory per start.

    Works in unit-box coordinates (``step_size`` is a fraction of the half-range
    per unit gradient) and clips to the bounds every step. Returns, per start,
    the iterate with the highest predicted score. ``model`` needs
    ``predict(X)`` and ``gradient(X)`` in raw input units.
    """
    if space.kind != "continuous":
        raise ValueError("naive forward optimization needs a continuous input space")
    X = np.clip(np.atleast_2d(np.asarray(starts, dtype=np.float64)), space.lo, space.hi)
    half = 0.5 * (space.hi - space.lo)
    u = space.to_unit(X)
    best_x = X.copy()
    best_v = model.predict(X) if C is None else model.predict(X, C)
    for _ in range(steps):
        x = space.from_unit(u)
        grad = model.gradient(x) if C is None else model.gradient(x, C)
        u = np.clip(u + step_size * grad * half, -1.0, 1.0)
        x = np.clip(space.from_unit(u), space.lo, space.hi)
        v = model.predict(x) if C is None else model.predict(x, C)
        better = v > best_v
        best_x[better] = x[better]
        best_v = np.where(better, v, best_v)
    return best_x


def save_forward(prefix: Union[str, Path], model: ForwardModel) -> None:
    prefix = Path(prefix)
    save_checkpoint(prefix.with_suffix(".ckpt"), model.params)
    prefix.with_suffix(".json").write_text(json.dumps(model.to_json(), indent=2, sort_keys=True) + "\n")


def load_forward(prefix: Union[str, Path]) -> ForwardModel:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    cfg = meta["config"]
    config = ForwardConfig(**{**cfg, "hidden": tuple(cfg["hidden"])})
    c_std = None if meta["c_standardizer"] is None else Standardizer.from_json(meta["c_standardizer"])
    model = ForwardModel(space_from_json(meta["space"]), config,
                         Standardizer.from_json(meta["y_standardizer"]), c_std)
    params = load_checkpoint(prefix.with_suffix(".ckpt"))
    for k in model.params:
        model.params[k] = params[k]
    return model
