"""Active data collection by randomized labeling.

Each iteration augments the real dataset with synthetic records whose scores
sit just above the best observed ones, retrains an *exploration* copy of the
inverse map on the augmented data and an *exploitation* copy on real data
only, and queries the oracle at an exploration sample conditioned on the
largest (synthetic) score. The final answer comes from the exploitation copy.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, TextIO, Union

import numpy as np

from .data import Dataset, DatasetError
from .forward import ForwardConfig, ForwardModel, train_forward
from .infer import InferenceConfig, InferenceResult, approx_infer
from .invmap import GanConfig, GanTrainer, Standardizer, sample
from .reweight import ReweightConfig, adaptive_tau, bin_scores, training_weights
from .rng import component_rng


class ActiveLoopError(RuntimeError):
    """The oracle failed twice in a row on the same iteration."""


class UnknownOptimumError(ValueError):
    pass


X_RULES = ("uniform", "perturbed", "top")


@dataclass
class ActiveConfig:
    iterations: int = 100
    K: Optional[int] = None  # synthetic records per iteration; None: max(32, |D0| / 20)
    noise_scale: Optional[float] = None  # None: adaptive tau of the current dataset
    steps_per_iter: int = 200
    pretrain_steps: Optional[int] = None  # None: the GAN config's step count
    synthetic_x: str = "top"  # "uniform" | "perturbed" | "top"
    greedy_noise: float = 0.05  # query noise of the greedy ablation, fraction of each range
    record_wallclock: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.K is not None and self.K < 0:
            raise ValueError("K must be non-negative")
        if self.noise_scale is not None and self.noise_scale < 0:
            raise ValueError("noise scale must be non-negative")
        if self.steps_per_iter < 0 or (self.pretrain_steps is not None and self.pretrain_steps < 0):
            raise ValueError("step budgets must be non-negative")
        if self.synthetic_x not in X_RULES:
            raise ValueError(f"unknown synthetic_x rule {self.synthetic_x!r}")
        if self.greedy_noise < 0:
            raise ValueError("greedy noise must be non-negative")

    def synthetic_count(self, n0: int) -> int:
        return self.K if self.K is not None else max(32, n0 // 20)


# ---------------------------------------------------------------------------
# synthetic augmentation
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSet:
    dataset: Dataset  # every record flagged synthetic
    base_y: np.ndarray  # the top-bin score each synthetic score was built from

    def __len__(self) -> int:
        return len(self.dataset)


def _perturb(space, X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if space.kind == "categorical":
        # resample each position with 5% probability
        flip = rng.random(X.shape) < 0.05
        return np.where(flip, rng.integers(0, space.alphabet, size=X.shape), X)
    sigma = 0.05 * (space.hi - space.lo)
    return np.clip(X + sigma * rng.normal(size=X.shape), space.lo, space.hi)


def make_synthetic(dataset: Dataset, K: int, noise_scale: float, rng: np.random.Generator,
                   x_rule: str = "uniform", bins: int = 20) -> SyntheticSet:
    """``K`` synthetic records scored above the dataset's top bin.

    ``y~ = y_b + |N(0, noise_scale)|`` with ``y_b`` drawn from the real records
    in the highest score bin. Inputs are uniform over the space (``x_rule =
    "uniform"``), random real inputs perturbed by 5%-of-range Gaussian noise
    and clipped (``"perturbed"``), or the same perturbation applied to the
    very records the base scores came from (``"top"``). Contexts, if any, are
    copied from random real records.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    space = dataset.space
    real = dataset.real()
    if K == 0:
        empty_c = np.zeros((0, real.C.shape[1])) if real.contextual else None
        return SyntheticSet(Dataset(space, np.zeros((0, space.dim)), np.zeros(0), empty_c,
                                    contextual=real.contextual), np.zeros(0))
    real.require_nonempty()
    edges, _ = bin_scores(real.y, bins)
    top = np.flatnonzero(real.y >= edges[-2])
    pick = rng.choice(top, size=K)
    base = real.y[pick]
    y = base + np.abs(rng.normal(0.0, noise_scale, size=K)) if noise_scale > 0 else base.copy()
    if x_rule == "uniform":
        X = space.sample_uniform(K, rng)
    elif x_rule == "perturbed":
        X = _perturb(space, real.X[rng.integers(0, len(real), size=K)], rng)
    elif x_rule == "top":
        X = _perturb(space, real.X[pick], rng)
    else:
        raise ValueError(f"unknown x rule {x_rule!r}")
    C = real.C[rng.integers(0, len(real), size=K)] if real.contextual else None
    syn = Dataset(space, X, y, C, synthetic=np.ones(K, dtype=bool), contextual=real.contextual)
    return SyntheticSet(syn, base)


# ---------------------------------------------------------------------------
# run history
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


class RunHistory:
    """Per-iteration query log; optionally streamed to CSV one flushed row at a time.

    ``best_so_far`` is the incumbent over the initial data and every query;
    ``query_best`` (not in the CSV) covers the queries alone. Scores are in
    the maximization convention.
    """

    def __init__(self, space, initial_best: float = -np.inf, f_star: Optional[float] = None,
                 seed: Optional[int] = None, stream: Optional[TextIO] = None):
        self.space = space
        self.initial_best = float(initial_best)
        self.f_star = f_star
        self.seed = seed
        self.X: List[np.ndarray] = []
        self.y: List[float] = []
        self.best_so_far: List[float] = []
        self.cum_regret: List[Optional[float]] = []
        self.elapsed_ms: List[Optional[float]] = []
        self._stream = stream
        self._writer = None
        if stream is not None:
            self._writer = csv.writer(stream, lineterminator="\n")
            self._writer.writerow(self.header())
            stream.flush()

    def header(self) -> List[str]:
        xs = ["sequence"] if self.space.kind == "categorical" else [f"x_{i}" for i in range(self.space.dim)]
        return ["iter", *xs, "y", "best_so_far", "cum_regret", "elapsed_ms"]

    def __len__(self) -> int:
        return len(self.y)

    @property
    def query_best(self) -> float:
        return max(self.y) if self.y else -np.inf

    def append(self, x, y: float, elapsed_ms: Optional[float] = None) -> None:
        y = float(y)
        prev = self.best_so_far[-1] if self.best_so_far else self.initial_best
        best = max(prev, y)
        regret = None
        if self.f_star is not None:
            last = self.cum_regret[-1] if self.cum_regret else 0.0
            regret = last + max(self.f_star - y, 0.0)
        self.X.append(np.asarray(x).copy())
        self.y.append(y)
        self.best_so_far.append(best)
        self.cum_regret.append(regret)
        self.elapsed_ms.append(elapsed_ms)
        if self._writer is not None:
            self._writer.writerow(self._row(len(self.y) - 1))
            self._stream.flush()

    def _row(self, t: int) -> List[str]:
        x = self.X[t]
        if self.space.kind == "categorical":
            xs = ["-".join(str(int(v)) for v in x)]
        else:
            xs = [_fmt(v) for v in x]
        reg = "" if self.cum_regret[t] is None else _fmt(self.cum_regret[t])
        ms = "" if self.elapsed_ms[t] is None else f"{self.elapsed_ms[t]:.1f}"
        return [str(t), *xs, _fmt(self.y[t]), _fmt(self.best_so_far[t]), reg, ms]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for t in range(len(self)):
            w.writerow(self._row(t))
        return buf.getvalue()


def compute_regret(history: Union[RunHistory, List[float], np.ndarray], f_star: Optional[float]) -> np.ndarray:
    """Cumulative regret ``sum_t (f* - y_t)`` over the queried scores."""
    if f_star is None:
        raise UnknownOptimumError("regret needs the optimum value f*")
    y = np.asarray(history.y if isinstance(history, RunHistory) else history, dtype=np.float64)
    gaps = np.maximum(float(f_star) - y, 0.0)
    return np.cumsum(gaps)


# ---------------------------------------------------------------------------
# the loop
# ---------------------------------------------------------------------------


@dataclass
class ActiveResult:
    history: RunHistory
    dataset: Dataset
    exploit: GanTrainer
    explore: Optional[GanTrainer]
    forward_model: Optional[ForwardModel] = None
    inference: Optional[InferenceResult] = None
    final_score: Optional[float] = None
    failures: List[dict] = field(default_factory=list)


def _query_oracle(oracle, draw: Callable[[np.random.Generator], np.ndarray], seed: int, t: int,
                  failures: List[dict]):
    """Draw a query and score it; on failure redraw once with a fresh stream, then give up."""
    for attempt in range(2):
        rng = component_rng(seed, "query", t, attempt)
        x = draw(rng)
        try:
            y = float(np.asarray(oracle.evaluate(np.atleast_2d(x)))[0])
            if not np.isfinite(y):
                raise ValueError(f"non-finite score {y}")
            return x, y
        except Exception as exc:  # any oracle failure is recorded and retried once
            failures.append({"iter": t, "attempt": attempt, "error": f"{type(exc).__name__}: {exc}"})
    raise ActiveLoopError(f"oracle failed twice at iteration {t}: {failures[-1]['error']}")


def _open_stream(path):
    if path is None:
        return None
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path.open("w", newline="")


def active_loop(oracle, initial: Dataset, gan_config: Optional[GanConfig] = None,
                active_config: Optional[ActiveConfig] = None,
                reweight_config: Optional[ReweightConfig] = None,
                forward_config: Optional[ForwardConfig] = None,
                infer_config: Optional[InferenceConfig] = None,
                seed: int = 0, history_path=None, greedy: bool = False,
                final_inference: bool = True) -> ActiveResult:
    """Run randomized labeling (or its greedy ablation) for ``iterations`` queries.

    Both model copies start from one pretrained inverse map and are
    warm-started every iteration. With ``greedy=True`` only the exploitation
    copy is kept and each query is its sample at the best observed score plus
    Gaussian noise of ``greedy_noise`` times each coordinate's range.
    """
    if oracle.contextual or initial.contextual:
        raise ValueError("active collection supports non-contextual oracles only")
    if initial.space != oracle.space:
        raise DatasetError("initial dataset space differs from the oracle's")
    initial = initial.real()
    initial.require_nonempty()
    gan_config = gan_config or GanConfig(seed=seed)
    acfg = active_config or ActiveConfig()
    rcfg = reweight_config or ReweightConfig()
    space = initial.space
    K = 0 if greedy else acfg.synthetic_count(len(initial))
    y_std = Standardizer.fit(initial.y)

    base = GanTrainer.create(initial, gan_config, y_std)
    pre = gan_config.steps if acfg.pretrain_steps is None else acfg.pretrain_steps
    base.train(initial, training_weights(initial, rcfg), pre)
    exploit = base
    explore = None if greedy else base.copy()
    if explore is not None:
        explore.rng = component_rng(seed, "explore-train")

    stream = _open_stream(history_path)
    history = RunHistory(space, float(initial.y.max()), oracle.f_star, seed, stream)
    data = initial
    failures: List[dict] = []
    syn_rng = component_rng(seed, "synthetic")
    start = time.perf_counter()
    try:
        for t in range(acfg.iterations):
            exploit.train(data, training_weights(data, rcfg), acfg.steps_per_iter)
            if greedy:
                y_q = float(data.y.max())
                scale = acfg.greedy_noise * (space.hi - space.lo) if space.kind == "continuous" else None

                def draw(rng, y_q=y_q, scale=scale):
                    x = sample(exploit.inverse_map, y_q, None, 1, rng)[0]
                    if scale is not None and acfg.greedy_noise > 0:
                        x = np.clip(x + scale * rng.normal(size=x.shape), space.lo, space.hi)
                    return x
            else:
                noise = adaptive_tau(data.y) if acfg.noise_scale is None else acfg.noise_scale
                syn = make_synthetic(data, K, noise, syn_rng, acfg.synthetic_x, rcfg.bins)
                aug = data.concat(syn.dataset)
                explore.train(aug, training_weights(aug, rcfg), acfg.steps_per_iter)
                y_q = float(aug.y.max())

                def draw(rng, y_q=y_q):
                    return sample(explore.inverse_map, y_q, None, 1, rng)[0]

            x, y = _query_oracle(oracle, draw, seed, t, failures)
            data = data.append(x, y)
            ms = (time.perf_counter() - start) * 1e3 if acfg.record_wallclock else None
            history.append(x, y, ms)
    finally:
        if stream is not None:
            stream.close()

    result = ActiveResult(history, data, exploit, explore, failures=failures)
    if final_inference:
        fcfg = forward_config or ForwardConfig(seed=seed)
        fwd, _ = train_forward(data, fcfg, y_std=exploit.inverse_map.y_std)
        inf = approx_infer(exploit.inverse_map, fwd, infer_config or InferenceConfig(),
                           rng=component_rng(seed, "final-infer"))
        result.forward_model = fwd
        result.inference = inf
        result.final_score = float(oracle.evaluate(np.atleast_2d(inf.x_star))[0])
    return result


def greedy_ablation_loop(oracle, initial: Dataset, **kwargs) -> ActiveResult:
    """The greedy ablation: no synthetic records, query = noisy exploitation sample at max observed y."""
    return active_loop(oracle, initial, greedy=True, **kwargs)
