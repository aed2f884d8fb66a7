"""Stochastic inverse map ``(z, y[, c]) -> x`` trained as a score-conditioned GAN."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from .data import Dataset, InputSpace, space_from_json
from .diffcore import MLP, AdamState, Graph, NonFiniteError, Tensor, adam_step, sample_gumbel
from .diffcore.checkpoint import load_checkpoint, save_checkpoint
from .rng import component_rng


@dataclass
class GanConfig:
    d_z: Optional[int] = None  # None: 32 continuous, 16 categorical
    hidden: Tuple[int, ...] = (256, 256)
    lr_g: float = 5e-4
    lr_d: float = 5e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 64
    steps: int = 2000
    d_steps: int = 1
    gumbel_tau: float = 0.75
    instance_noise: Optional[float] = None  # None: 0.1 for categorical heads, 0 for continuous
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        bad = [k for k in ("lr_g", "lr_d", "batch_size", "d_steps", "gumbel_tau")
               if not getattr(self, k) > 0]
        if self.d_z is not None and self.d_z < 1:
            bad.append("d_z")
        if self.steps < 0 or (self.instance_noise or 0.0) < 0 or any(h < 1 for h in self.hidden):
            bad.append("steps/instance_noise/hidden")
        if bad:
            raise ValueError(f"invalid GAN config values: {bad}")

    def noise_level(self, space: InputSpace) -> float:
        if self.instance_noise is not None:
            return float(self.instance_noise)
        return 0.1 if space.kind == "categorical" else 0.0

    def latent_dim(self, space: InputSpace) -> int:
        if self.d_z is not None:
            return self.d_z
        return 16 if space.kind == "categorical" else 32


@dataclass
class Standardizer:
    """Affine map to zero mean / unit variance, fitted on the training set."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values) -> "Standardizer":
        v = np.asarray(values, dtype=np.float64)
        v = v.reshape(len(v), -1) if v.ndim > 1 else v.reshape(-1, 1)
        mean = v.mean(axis=0)
        std = v.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(mean, std)

    def encode(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        v = v.reshape(-1, len(self.mean))
        return (v - self.mean) / self.std

    def decode(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64).reshape(-1, len(self.mean))
        return v * self.std + self.mean

    def to_json(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Standardizer":
        return cls(np.array(obj["mean"], dtype=np.float64), np.array(obj["std"], dtype=np.float64))

    def __eq__(self, other):
        return (isinstance(other, Standardizer) and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.std, other.std))


class HeadMismatchError(ValueError):
    pass


def input_representation(space: InputSpace, X) -> np.ndarray:
    """Network-side encoding of inputs: unit box coordinates or flattened one-hots."""
    if space.kind == "categorical":
        return space.onehot(X)
    return space.to_unit(X)


def rep_dim(space: InputSpace) -> int:
    return space.onehot_dim if space.kind == "categorical" else space.dim


class InverseMap:
    """Generator ``x = f^-1(z, y[, c])`` with a tanh or Gumbel-softmax output head."""

    def __init__(self, space: InputSpace, config: GanConfig, y_std: Standardizer,
                 c_std: Optional[Standardizer] = None, rng: Optional[np.random.Generator] = None,
                 y_stats: Optional[dict] = None):
        self.space = space
        self.config = config
        self.d_z = config.latent_dim(space)
        self.y_std = y_std
        self.c_std = c_std
        self.y_stats = dict(y_stats or {})
        c_dim = 0 if c_std is None else len(c_std.mean)
        rng = rng if rng is not None else component_rng(config.seed, "generator-init")
        self.net = MLP([self.d_z + 1 + c_dim, *config.hidden, rep_dim(space)], rng, prefix="gen")

    @property
    def head(self) -> str:
        return self.space.kind

    @property
    def contextual(self) -> bool:
        return self.c_std is not None

    @property
    def params(self):
        return self.net.params

    def log_prior(self, z) -> np.ndarray:
        z = np.atleast_2d(z)
        return -0.5 * np.sum(z * z, axis=1) - 0.5 * self.d_z * np.log(2.0 * np.pi)

    def conditioning(self, y, c, n: int) -> np.ndarray:
        ys = self.y_std.encode(np.broadcast_to(np.asarray(y, dtype=np.float64).reshape(-1, 1), (n, 1)))
        if self.contextual:
            if c is None:
                raise HeadMismatchError("contextual inverse map needs a context")
            cs = self.c_std.encode(np.broadcast_to(np.atleast_2d(c), (n, len(self.c_std.mean))))
            return np.concatenate([ys, cs], axis=1)
        if c is not None:
            raise HeadMismatchError("non-contextual inverse map got a context")
        return ys

    # -- graph-side generation
    def build(self, g: Graph, z: Tensor, cond: Tensor, noise: Optional[np.ndarray] = None,
              frozen: bool = False) -> Tensor:
        """Representation-space output on ``g``: unit coordinates or relaxed one-hots.

        ``noise`` is the Gumbel draw for categorical heads (zeros = noiseless relaxation).
        """
        h = self.net(g, g.concat([z, cond]), frozen=frozen)
        if self.head == "categorical":
            L, A = self.space.length, self.space.alphabet
            n = h.shape[0]
            logits = g.reshape(h, (n, L, A))
            if noise is not None:
                logits = g.add(logits, noise.reshape(n, L, A))
            soft = g.softmax(g.scale(logits, 1.0 / self.config.gumbel_tau))
            return g.reshape(soft, (n, L * A))
        return g.tanh(h)

    # -- numpy-side generation
    def represent(self, z: np.ndarray, cond: np.ndarray, noise: Optional[np.ndarray] = None) -> np.ndarray:
        h = self.net.predict(np.concatenate([z, cond], axis=1))
        if self.head == "categorical":
            L, A = self.space.length, self.space.alphabet
            logits = h.reshape(len(h), L, A)
            if noise is not None:
                logits = logits + noise.reshape(len(h), L, A)
            logits = logits / self.config.gumbel_tau
            logits = logits - logits.max(axis=-1, keepdims=True)
            e = np.exp(logits)
            return (e / e.sum(axis=-1, keepdims=True)).reshape(len(h), L * A)
        return np.tanh(h)

    def decode(self, rep: np.ndarray) -> np.ndarray:
        """Representation -> input space (hard argmax for categorical heads)."""
        if self.head == "categorical":
            return rep.reshape(len(rep), self.space.length, self.space.alphabet).argmax(axis=-1)
        return np.clip(self.space.from_unit(rep), self.space.lo, self.space.hi)

    def sample_with_relaxed(self, y, c=None, n: int = 1, rng: Optional[np.random.Generator] = None):
        """``n`` samples at score ``y``: (inputs, relaxed one-hots or None)."""
        rng = rng if rng is not None else np.random.default_rng(0)
        if not np.all(np.isfinite(y)):
            raise ValueError("y must be finite")
        if n == 0:
            empty = np.zeros((0, self.space.dim), dtype=np.int64 if self.head == "categorical" else np.float64)
            return empty, (np.zeros((0, rep_dim(self.space))) if self.head == "categorical" else None)
        z = rng.normal(size=(n, self.d_z))
        cond = self.conditioning(y, c, n)
        noise = sample_gumbel((n, rep_dim(self.space)), rng) if self.head == "categorical" else None
        rep = self.represent(z, cond, noise)
        return self.decode(rep), (rep if self.head == "categorical" else None)

    def copy(self) -> "InverseMap":
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        return {
            "kind": "inverse_map",
            "head": self.head,
            "space": self.space.to_json(),
            "config": _config_json(self.config),
            "d_z": self.d_z,
            "y_standardizer": self.y_std.to_json(),
            "c_standardizer": None if self.c_std is None else self.c_std.to_json(),
            "y_stats": self.y_stats,
        }


def sample(inverse_map: InverseMap, y, c=None, n: int = 1, rng: Optional[np.random.Generator] = None,
           space: Optional[InputSpace] = None) -> np.ndarray:
    """``n`` inputs from ``f^-1(z, y[, c])`` with ``z ~ N(0, I)``."""
    if space is not None and space != inverse_map.space:
        raise HeadMismatchError("requested space does not match the inverse map's head")
    return inverse_map.sample_with_relaxed(y, c, n, rng)[0]


class Discriminator:
    """``Disc(x | y[, c])`` as an MLP returning a logit; :meth:`prob` applies the sigmoid."""

    def __init__(self, space: InputSpace, config: GanConfig, c_dim: int = 0,
                 rng: Optional[np.random.Generator] = None):
        rng = rng if rng is not None else component_rng(config.seed, "discriminator-init")
        self.space = space
        self.net = MLP([rep_dim(space) + 1 + c_dim, *config.hidden, 1], rng, prefix="disc")

    @property
    def params(self):
        return self.net.params

    def build(self, g: Graph, rep: Tensor, cond: Tensor, frozen: bool = False) -> Tensor:
        return self.net(g, g.concat([rep, cond]), frozen=frozen)

    def prob(self, rep: np.ndarray, cond: np.ndarray) -> np.ndarray:
        logit = self.net.predict(np.concatenate([rep, cond], axis=1))[:, 0]
        return _sigmoid(logit)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def weighted_minibatch(weights, batch: int, rng: np.random.Generator) -> np.ndarray:
    """Indices drawn i.i.d. with probability proportional to ``weights``.

    Inverse-CDF sampling: with equal weights this is exactly
    ``floor(rng.random(batch) * n)``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("all weights are zero")
    cdf = np.cumsum(w) / total
    u = rng.random(batch)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, len(w) - 1)


@dataclass
class TraceRow:
    step: int
    d_loss: float
    g_loss: float
    d_real: float
    d_fake: float


@dataclass
class GanTrainer:
    """Owns a generator/discriminator pair and their optimizer state so training can resume."""

    inverse_map: InverseMap
    discriminator: Discriminator
    opt_g: AdamState
    opt_d: AdamState
    rng: np.random.Generator
    step: int = 0
    trace: List[TraceRow] = field(default_factory=list)

    @classmethod
    def create(cls, dataset: Dataset, config: GanConfig, y_std: Optional[Standardizer] = None,
               c_std: Optional[Standardizer] = None) -> "GanTrainer":
        dataset.require_nonempty()
        y_std = y_std or Standardizer.fit(dataset.y)
        if dataset.contextual and c_std is None:
            c_std = Standardizer.fit(dataset.C)
        inv = InverseMap(dataset.space, config, y_std, c_std if dataset.contextual else None,
                         y_stats=summarize_scores(dataset.y))
        disc = Discriminator(dataset.space, config, 0 if c_std is None or not dataset.contextual else len(c_std.mean))
        kw = dict(beta1=config.beta1, beta2=config.beta2)
        return cls(inv, disc, AdamState.for_params(inv.params, lr=config.lr_g, **kw),
                   AdamState.for_params(disc.params, lr=config.lr_d, **kw),
                   component_rng(config.seed, "gan-train"))

    def copy(self) -> "GanTrainer":
        return copy.deepcopy(self)

    def train(self, dataset: Dataset, weights=None, steps: Optional[int] = None) -> List[TraceRow]:
        """Run ``steps`` generator updates on ``dataset`` with minibatches drawn ∝ ``weights``."""
        dataset.require_nonempty()
        inv, disc, cfg = self.inverse_map, self.discriminator, self.inverse_map.config
        if dataset.space != inv.space:
            raise HeadMismatchError("dataset space differs from the inverse map's space")
        steps = cfg.steps if steps is None else steps
        weights = np.ones(len(dataset)) if weights is None else np.asarray(weights, dtype=np.float64)
        if len(weights) != len(dataset):
            raise ValueError(f"{len(weights)} weights for {len(dataset)} records")
        rep_real = input_representation(dataset.space, dataset.X)
        cond_all = inv.y_std.encode(dataset.y)
        if inv.contextual:
            cond_all = np.concatenate([cond_all, inv.c_std.encode(dataset.C)], axis=1)
        B, rng = cfg.batch_size, self.rng
        cat = inv.head == "categorical"
        rows = []
        for s in range(steps):
            sigma = cfg.noise_level(inv.space) * (1.0 - s / max(steps, 1))
            try:
                for _ in range(cfg.d_steps):
                    idx = weighted_minibatch(weights, B, rng)
                    cond = cond_all[idx]
                    z = rng.normal(size=(B, inv.d_z))
                    gn = sample_gumbel((B, rep_dim(inv.space)), rng) if cat else None
                    fake = inv.represent(z, cond, gn)
                    real = rep_real[idx]
                    if sigma > 0:
                        real = real + sigma * rng.normal(size=real.shape)
                        fake = fake + sigma * rng.normal(size=fake.shape)
                    g = Graph()
                    logits = disc.build(g, g.const(np.concatenate([real, fake])),
                                        g.const(np.concatenate([cond, cond])))
                    # first half real (target 1), second half fake (target 0)
                    sign = np.concatenate([-np.ones((B, 1)), np.ones((B, 1))])
                    d_loss = g.scale(g.sum(g.softplus(g.mul(logits, sign))), 1.0 / B)
                    grads = g.backward(d_loss)
                    adam_step(disc.params, grads, self.opt_d)
                    prob = _sigmoid(logits.value[:, 0])
                    d_real, d_fake = float(prob[:B].mean()), float(prob[B:].mean())
                idx = weighted_minibatch(weights, B, rng)
                cond = cond_all[idx]
                z = rng.normal(size=(B, inv.d_z))
                gn = sample_gumbel((B, rep_dim(inv.space)), rng) if cat else None
                g = Graph()
                c_t = g.const(cond)
                fake_t = inv.build(g, g.const(z), c_t, gn)
                if sigma > 0:
                    fake_t = g.add(fake_t, sigma * rng.normal(size=fake_t.shape))
                # non-saturating generator loss: -log Disc(fake)
                g_loss = g.mean(g.softplus(g.neg(disc.build(g, fake_t, c_t, frozen=True))))
                grads = g.backward(g_loss)
                adam_step(inv.params, grads, self.opt_g)
            except NonFiniteError as exc:
                raise NonFiniteError(f"GAN training diverged at step {self.step}: {exc}") from exc
            row = TraceRow(self.step, float(d_loss.value.item()), float(g_loss.value.item()), d_real, d_fake)
            rows.append(row)
            self.step += 1
        self.trace.extend(rows)
        inv.y_stats = summarize_scores(dataset.y[~dataset.synthetic] if (~dataset.synthetic).any() else dataset.y)
        return rows


def summarize_scores(y) -> dict:
    y = np.asarray(y, dtype=np.float64)
    return {"y_max": float(y.max()), "y_p90": float(np.percentile(y, 90)), "n": int(len(y))}


@dataclass
class TrainResult:
    inverse_map: InverseMap
    discriminator: Discriminator
    trace: List[TraceRow]
    trainer: GanTrainer


def train_inverse_map(dataset: Dataset, weights=None, config: Optional[GanConfig] = None,
                      y_std: Optional[Standardizer] = None) -> TrainResult:
    """Fit the score-conditioned GAN; minibatches are drawn proportional to ``weights``."""
    config = config or GanConfig()
    trainer = GanTrainer.create(dataset, config, y_std)
    trace = trainer.train(dataset, weights, config.steps)
    return TrainResult(trainer.inverse_map, trainer.discriminator, trace, trainer)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def _config_json(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def save_inverse_map(prefix: Union[str, Path], inverse_map: InverseMap,
                     discriminator: Optional[Discriminator] = None) -> None:
    """Write ``<prefix>.ckpt`` (weights) and ``<prefix>.json`` (config, standardizers, head)."""
    prefix = Path(prefix)
    params = dict(inverse_map.params)
    if discriminator is not None:
        params.update(discriminator.params)
    save_checkpoint(prefix.with_suffix(".ckpt"), params)
    prefix.with_suffix(".json").write_text(json.dumps(inverse_map.to_json(), indent=2, sort_keys=True) + "\n")


def load_inverse_map(prefix: Union[str, Path]) -> Tuple[InverseMap, Optional[Discriminator]]:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    params = load_checkpoint(prefix.with_suffix(".ckpt"))
    space = space_from_json(meta["space"])
    cfg = meta["config"]
    config = GanConfig(**{**cfg, "hidden": tuple(cfg["hidden"])})
    c_std = None if meta["c_standardizer"] is None else Standardizer.from_json(meta["c_standardizer"])
    inv = InverseMap(space, config, Standardizer.from_json(meta["y_standardizer"]), c_std,
                     y_stats=meta.get("y_stats"))
    for k in inv.params:
        inv.params[k] = params[k]
    disc = None
    if any(k.startswith("disc.") for k in params):
        disc = Discriminator(space, config, 0 if c_std is None else len(c_std.mean))
        for k in disc.params:
            disc.params[k] = params[k]
    return inv, disc

