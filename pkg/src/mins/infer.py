"""Extracting an optimized input from a trained inverse map.

:func:`approx_infer` searches jointly over the score ``y`` and latent ``z`` for
the largest forward-model prediction of ``f^-1(z, y)`` subject to

* agreement: ``|y - f(f^-1(z, y))| <= eps1`` (standardized score units), and
* plausibility: ``log p0(z) >= eps2``.

Constraints enter as quadratic penalties during gradient ascent and are
re-checked exactly on the returned point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .data import Dataset
from .diffcore import Graph, NonFiniteError
from .forward import ForwardModel
from .invmap import InverseMap, input_representation, sample


class ModelMismatchError(ValueError):
    pass


@dataclass
class InferenceConfig:
    eps1: float = 0.5
    eps2: Optional[float] = None  # None: log-density at radius 2*sqrt(d_z)
    mu1: float = 10.0
    mu2: float = 10.0
    steps: int = 200
    step_size: float = 0.01
    restarts: int = 32
    y_init: str = "extrapolate"  # "extrapolate" | "max"
    y_jitter: float = 0.1
    z_init: str = "prior"  # "prior" | "zero"
    optimize_z: bool = True

    def __post_init__(self):
        if not self.eps1 > 0:
            raise ValueError("eps1 must be positive")
        if self.steps < 1 or self.restarts < 1:
            raise ValueError("need at least one step and one restart")
        if self.mu1 < 0 or self.mu2 < 0:
            raise ValueError("penalty coefficients must be non-negative")
        if self.y_init not in ("extrapolate", "max") or self.z_init not in ("prior", "zero"):
            raise ValueError("unknown initialization rule")

    def log_prior_floor(self, d_z: int) -> float:
        if self.eps2 is not None:
            return float(self.eps2)
        return -2.0 * d_z - 0.5 * d_z * np.log(2.0 * np.pi)


@dataclass
class InferenceResult:
    x_star: np.ndarray
    y_star: float  # raw score units
    z_star: np.ndarray
    prediction: float  # forward model at x_star, raw units
    residual: float  # |y - prediction|, standardized units
    log_prior: float
    feasible: bool
    eps1: float
    eps2: float
    restart: int
    y_star_std: float = 0.0  # y_star in the models' standardized units (exact)
    restarts: List[dict] = field(default_factory=list)
    trace: Optional[np.ndarray] = None  # (restarts, steps + 1) penalized objective
    endpoints: Optional[Tuple[np.ndarray, np.ndarray]] = None  # final (y standardized, z) of every restart

    def to_json(self) -> dict:
        return {
            "x_star": np.asarray(self.x_star).tolist(),
            "y_star": self.y_star,
            "z_star": np.asarray(self.z_star).tolist(),
            "prediction": self.prediction,
            "residual": self.residual,
            "log_prior": self.log_prior,
            "feasible": self.feasible,
            "eps1": self.eps1,
            "eps2": self.eps2,
            "restart": self.restart,
            "y_star_std": self.y_star_std,
            "restarts": self.restarts,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


def _initial_y(inverse_map: InverseMap, config: InferenceConfig) -> float:
    stats = inverse_map.y_stats
    if "y_max" not in stats:
        raise ModelMismatchError("inverse map carries no score summary; train it first")
    y_max = stats["y_max"]
    if config.y_init == "max":
        return y_max
    return y_max + 0.5 * (y_max - stats["y_p90"])


def _penalized(g: Graph, pred, y, z, inverse_map: InverseMap, config: InferenceConfig, eps2: float):
    diff = g.sub(y, pred)
    over = g.add(g.relu(g.sub(diff, config.eps1)), g.relu(g.sub(g.neg(diff), config.eps1)))
    logp = g.sub(g.scale(g.sum(g.square(z), axis=1), -0.5), 0.5 * inverse_map.d_z * np.log(2 * np.pi))
    short = g.relu(g.sub(eps2, logp))
    return g.sub(g.sub(pred, g.scale(g.square(over), config.mu1)), g.scale(g.square(short), config.mu2))


def approx_infer(inverse_map: InverseMap, forward_model: ForwardModel, config: Optional[InferenceConfig] = None,
                 context=None, rng: Optional[np.random.Generator] = None) -> InferenceResult:
    """Best feasible ``(y, z)`` over ``config.restarts`` gradient-ascent runs.

    Every restart is a row of one batch, so the summed objective's gradient is
    the per-restart gradient. If no restart ends feasible the one with the
    smallest agreement residual is returned with ``feasible=False``.
    """
    config = config or InferenceConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    if inverse_map.space != forward_model.space:
        raise ModelMismatchError("inverse map and forward model are over different spaces")
    if inverse_map.y_std != forward_model.y_std:
        raise ModelMismatchError("inverse map and forward model use different score standardizers")
    if inverse_map.contextual != forward_model.contextual:
        raise ModelMismatchError("contextual flags differ between models")
    R, d_z = config.restarts, inverse_map.d_z
    eps2 = config.log_prior_floor(d_z)
    y0 = float(inverse_map.y_std.encode(_initial_y(inverse_map, config))[0, 0])
    y = y0 + config.y_jitter * rng.normal(size=(R, 1))
    z = rng.normal(size=(R, d_z)) if config.z_init == "prior" else np.zeros((R, d_z))
    cat = inverse_map.head == "categorical"
    noise = np.zeros((R, inverse_map.space.onehot_dim)) if cat else None
    C = None if context is None else np.broadcast_to(np.atleast_2d(context), (R, np.atleast_2d(context).shape[1]))
    c_enc = None if C is None else inverse_map.c_std.encode(C)

    def objective(y, z, need_grad):
        g = Graph()
        yt = g.param("y", y)
        zt = g.param("z", z) if config.optimize_z else g.const(z)
        cond = yt if c_enc is None else g.concat([yt, g.const(c_enc)])
        rep = inverse_map.build(g, zt, cond, noise, frozen=True)
        pred = forward_model.build(g, rep, C)
        obj = _penalized(g, pred, yt, zt, inverse_map, config, eps2)
        if not need_grad:
            return obj.value[:, 0], None
        grads = g.backward(g.sum(obj))
        return obj.value[:, 0], grads

    # gradient ascent with per-restart backtracking: a step is taken only if it
    # does not lower that restart's objective, otherwise the step size halves
    trace = np.empty((R, config.steps + 1))
    eta = np.full((R, 1), config.step_size)
    try:
        val, grads = objective(y, z, True)
        trace[:, 0] = val
        for step in range(config.steps):
            y_new = y + eta * grads["y"]
            z_new = z + eta * grads["z"] if config.optimize_z else z
            val_new, grads_new = objective(y_new, z_new, True)
            ok = val_new >= val
            okc = ok[:, None]
            y = np.where(okc, y_new, y)
            z = np.where(okc, z_new, z)
            val = np.where(ok, val_new, val)
            grads = {k: np.where(okc, grads_new[k], grads[k]) for k in grads}
            eta = np.where(okc, np.minimum(eta * 1.5, config.step_size), eta * 0.5)
            trace[:, step + 1] = val
    except NonFiniteError as exc:
        raise NonFiniteError(f"approx_infer objective became non-finite: {exc}") from exc

    # exact post-hoc evaluation on the returned inputs (hard sequences for
    # categorical heads), one restart at a time so the numbers are bit-for-bit
    # what recompute_constraints derives from a single returned (y, z)
    X, pred_std, log_prior = [], np.empty(R), np.empty(R)
    for r in range(R):
        c_r = None if context is None else np.atleast_2d(context)
        x_r, pred_r, lp_r = _evaluate_point(inverse_map, forward_model, y[r:r + 1], z[r:r + 1], c_r)
        X.append(x_r)
        pred_std[r], log_prior[r] = pred_r, lp_r
    X = np.stack(X)
    residual = np.abs(y[:, 0] - pred_std)
    feasible = (residual <= config.eps1) & (log_prior >= eps2)

    rows = []
    y_raw = inverse_map.y_std.decode(y)[:, 0]
    pred_raw = forward_model.y_std.decode(pred_std)[:, 0]
    for r in range(R):
        rows.append({"restart": r, "y": float(y_raw[r]), "prediction": float(pred_raw[r]),
                     "residual": float(residual[r]), "log_prior": float(log_prior[r]),
                     "feasible": bool(feasible[r]), "objective": float(trace[r, -1])})
    if feasible.any():
        cand = np.flatnonzero(feasible)
        # max prediction, then lower residual, then lower index
        best = min(cand, key=lambda r: (-pred_std[r], residual[r], r))
    else:
        best = min(range(R), key=lambda r: (residual[r], r))
    return InferenceResult(
        x_star=X[best], y_star=float(y_raw[best]), z_star=z[best].copy(), prediction=float(pred_raw[best]),
        residual=float(residual[best]), log_prior=float(log_prior[best]), feasible=bool(feasible[best]),
        eps1=config.eps1, eps2=eps2, restart=int(best), y_star_std=float(y[best, 0]), restarts=rows,
        trace=trace, endpoints=(y[:, 0].copy(), z.copy()))


def _evaluate_point(inverse_map: InverseMap, forward_model: ForwardModel, y_std, z, context=None):
    """Hard input, standardized prediction and log-prior for one ``(y, z)`` row."""
    cond = y_std
    if inverse_map.contextual:
        cond = np.concatenate([y_std, inverse_map.c_std.encode(context)], axis=1)
    noise = np.zeros((1, inverse_map.space.onehot_dim)) if inverse_map.head == "categorical" else None
    x = inverse_map.decode(inverse_map.represent(z, cond, noise))
    pred = forward_model.predict_rep(input_representation(inverse_map.space, x), context)
    return x[0], float(pred[0]), float(inverse_map.log_prior(z)[0])


def penalized_objective(inverse_map: InverseMap, forward_model: ForwardModel, y_std, z,
                        config: Optional[InferenceConfig] = None, context=None) -> np.ndarray:
    """Penalized ascent objective at given ``(y, z)`` rows (``y`` standardized).

    Uses the noiseless relaxation for categorical heads, as the ascent does.
    """
    config = config or InferenceConfig()
    y_std = np.atleast_2d(np.asarray(y_std, dtype=np.float64)).reshape(-1, 1)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    n = len(y_std)
    g = Graph()
    yt = g.const(y_std)
    C = None if context is None else np.broadcast_to(np.atleast_2d(context), (n, np.atleast_2d(context).shape[1]))
    cond = yt if C is None else g.concat([yt, g.const(inverse_map.c_std.encode(C))])
    noise = np.zeros((n, inverse_map.space.onehot_dim)) if inverse_map.head == "categorical" else None
    rep = inverse_map.build(g, g.const(z), cond, noise, frozen=True)
    pred = forward_model.build(g, rep, C)
    obj = _penalized(g, pred, yt, g.const(z), inverse_map, config, config.log_prior_floor(inverse_map.d_z))
    return obj.value[:, 0]


def recompute_constraints(result: InferenceResult, inverse_map: InverseMap, forward_model: ForwardModel,
                          context=None) -> dict:
    """Re-derive the agreement residual, log-prior and feasibility from the returned tensors."""
    y_std = np.array([[result.y_star_std]])
    c = None if context is None else np.atleast_2d(context)
    x, pred, log_prior = _evaluate_point(inverse_map, forward_model, y_std, np.atleast_2d(result.z_star), c)
    residual = float(abs(y_std[0, 0] - pred))
    return {"x": x, "residual": residual, "log_prior": log_prior,
            "feasible": residual <= result.eps1 and log_prior >= result.eps2}


def naive_best_y(dataset: Dataset, inverse_map: InverseMap, n: int = 1,
                 rng: Optional[np.random.Generator] = None, context=None) -> np.ndarray:
    """Samples from the inverse map conditioned on the best score in ``dataset``."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    return sample(inverse_map, float(dataset.y.max()), context, n, rng)


def contextual_policy(inverse_map: InverseMap, contexts, y: Optional[float] = None, samples: int = 16,
                      rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Per-context input chosen by majority vote over ``samples`` draws at score ``y``.

    ``y`` defaults to the best score the map was trained on. Only categorical
    heads are supported (the vote needs discrete inputs); ties go to the
    lowest-indexed row pattern.
    """
    if not inverse_map.contextual:
        raise ModelMismatchError("contextual policy needs a contextual inverse map")
    if inverse_map.head != "categorical":
        raise ModelMismatchError("majority vote needs a categorical head")
    if samples < 1:
        raise ValueError("need at least one sample per context")
    rng = rng if rng is not None else np.random.default_rng(0)
    C = np.atleast_2d(np.asarray(contexts, dtype=np.float64))
    y = inverse_map.y_stats["y_max"] if y is None else float(y)
    n = len(C)
    X = sample(inverse_map, y, np.repeat(C, samples, axis=0), n * samples, rng).reshape(n, samples, -1)
    out = np.empty((n, X.shape[2]), dtype=X.dtype)
    for i in range(n):
        rows, counts = np.unique(X[i], axis=0, return_counts=True)
        out[i] = rows[int(np.argmax(counts))]
    return out
