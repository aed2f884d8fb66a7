"""Ground-truth score functions.

Every oracle maximizes: minimization benchmarks (Branin, Hartmann6) are wrapped
with a sign flip, and :meth:`Oracle.raw` gives values in the benchmark's own
convention.
"""

from __future__ import annotations

import re
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize

from .data import CategoricalSpace, ContinuousSpace, InputSpace
from .rng import component_rng


class OracleError(RuntimeError):
    """The score function could not be evaluated at the requested input."""


# ---------------------------------------------------------------------------
# benchmark functions (raw, minimization convention)
# ---------------------------------------------------------------------------

BRANIN_SPACE = ContinuousSpace((-5.0, 0.0), (10.0, 15.0))
BRANIN_MINIMUM = 0.397887357729738
BRANIN_MINIMIZERS = ((-np.pi, 12.275), (np.pi, 2.275), (9.42478, 2.475))

HARTMANN6_SPACE = ContinuousSpace((0.0,) * 6, (1.0,) * 6)
HARTMANN6_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])
HARTMANN6_A = np.array([
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
])
HARTMANN6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
HARTMANN6_MINIMIZER = (0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573)
HARTMANN6_MINIMUM = -3.32237


def _check_box(x: np.ndarray, space: ContinuousSpace, name: str) -> None:
    if x.shape[-1] != space.dim:
        raise OracleError(f"{name} expects {space.dim}-dimensional inputs, got {x.shape[-1]}")
    if not space.contains(x.reshape(-1, space.dim), atol=1e-9).all():
        raise OracleError(f"{name} input outside {list(zip(space.lower, space.upper))}")


def branin(x) -> np.ndarray:
    """Branin-Hoo on [-5, 10] x [0, 15]; accepts ``(2,)`` or ``(n, 2)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_box(x, BRANIN_SPACE, "branin")
    x1, x2 = x[..., 0], x[..., 1]
    b = 5.1 / (4.0 * np.pi ** 2)
    c = 5.0 / np.pi
    t = 1.0 / (8.0 * np.pi)
    return (x2 - b * x1 ** 2 + c * x1 - 6.0) ** 2 + 10.0 * (1.0 - t) * np.cos(x1) + 10.0


def hartmann6(x) -> np.ndarray:
    """6-D Hartmann on the unit cube; accepts ``(6,)`` or ``(n, 6)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_box(x, HARTMANN6_SPACE, "hartmann6")
    inner = np.sum(HARTMANN6_A * (x[..., None, :] - HARTMANN6_P) ** 2, axis=-1)
    return -np.sum(HARTMANN6_ALPHA * np.exp(-inner), axis=-1)


# ---------------------------------------------------------------------------
# oracle base
# ---------------------------------------------------------------------------


class Oracle:
    """A pure score function over an input space (maximization convention)."""

    name: str = "oracle"
    space: InputSpace
    contextual: bool = False
    minimize: bool = False

    f_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None

    @property
    def known_optimum(self) -> Optional[Tuple[float, np.ndarray]]:
        if self.f_star is None:
            return None
        return self.f_star, self.x_star

    def evaluate(self, X, C=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X, C=None) -> np.ndarray:
        return self.evaluate(X, C)

    def raw(self, X, C=None) -> np.ndarray:
        """Scores in the benchmark's own sign convention."""
        y = self.evaluate(X, C)
        return -y if self.minimize else y

    def to_raw(self, y):
        return -np.asarray(y) if self.minimize else np.asarray(y)

    def verify_optimum(self, tol: float = 1e-9) -> None:
        if self.f_star is None:
            return
        val = float(self.evaluate(np.atleast_2d(self.x_star))[0])
        if abs(val - self.f_star) > tol:
            raise OracleError(f"{self.name}: known optimum witness gives {val}, expected {self.f_star}")


class FunctionOracle(Oracle):
    def __init__(self, name, space, fn, minimize=True, x_star=None, f_star=None):
        self.name = name
        self.space = space
        self.fn = fn
        self.minimize = minimize
        if x_star is not None:
            self.x_star = np.asarray(x_star, dtype=np.float64)
            self.f_star = float(self.evaluate(self.x_star[None])[0]) if f_star is None else f_star

    def evaluate(self, X, C=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        vals = self.fn(X)
        return -vals if self.minimize else vals


def make_branin() -> FunctionOracle:
    return FunctionOracle("branin", BRANIN_SPACE, branin, x_star=BRANIN_MINIMIZERS[1])


def make_hartmann6() -> FunctionOracle:
    # The published minimizer has 6 digits; polish it so regret is never negative.
    res = minimize(lambda v: float(hartmann6(v)), np.array(HARTMANN6_MINIMIZER), method="L-BFGS-B",
                   bounds=[(0.0, 1.0)] * 6, options={"ftol": 1e-15, "gtol": 1e-12})
    x_star = res.x if res.fun <= hartmann6(np.array(HARTMANN6_MINIMIZER)) else HARTMANN6_MINIMIZER
    return FunctionOracle("hartmann6", HARTMANN6_SPACE, hartmann6, x_star=x_star)


# ---------------------------------------------------------------------------
# synthetic manifold task
# ---------------------------------------------------------------------------


class ManifoldTask(Oracle):
    """Scores on a k-dimensional surface embedded in R^D by a frozen tanh net.

    ``evaluate(x) = g(u_hat) - penalty * dist(x)`` where ``u_hat`` is the latent
    point whose image is nearest to ``x`` and ``g(u) = -||u - u_opt||^2``.
    """

    n_starts = 256
    n_refine = 8
    gn_iters = 40

    def __init__(self, seed: int = 0, k: int = 2, D: int = 32, hidden: int = 16,
                 penalty: float = 1.0, noise: float = 0.05, hole: float = 0.4):
        if not 1 <= k <= 4:
            raise ValueError("latent dimension must be in [1, 4]")
        if D < 16:
            raise ValueError("ambient dimension must be >= 16")
        self.name = f"manifold:k{k}d{D}:seed{seed}"
        self.seed, self.k, self.D = seed, k, D
        self.penalty = penalty
        self.noise = noise
        self.hole = hole
        rng = component_rng(seed, "manifold-task")
        self.W1 = rng.normal(0.0, 1.5, size=(k, hidden))
        self.b1 = rng.normal(0.0, 0.5, size=hidden)
        self.W2 = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, D))
        self.b2 = rng.normal(0.0, 0.2, size=D)
        self.u_opt = rng.uniform(-0.5, 0.5, size=k)
        self._starts = rng.uniform(-1.0, 1.0, size=(self.n_starts, k))
        grid = np.stack(np.meshgrid(*[np.linspace(-1, 1, 9)] * k), axis=-1).reshape(-1, k)
        extent = np.abs(self.embed(grid)).max()
        bound = float(np.ceil(1.5 * extent * 4) / 4)
        self.space = ContinuousSpace((-bound,) * D, (bound,) * D)
        self.x_star = self.embed(self.u_opt[None])[0]
        self.f_star = 0.0

    def embed(self, U: np.ndarray) -> np.ndarray:
        return np.tanh(np.atleast_2d(U) @ self.W1 + self.b1) @ self.W2 + self.b2

    def latent_score(self, U: np.ndarray) -> np.ndarray:
        return -np.sum((np.atleast_2d(U) - self.u_opt) ** 2, axis=1)

    def project(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Nearest latent point and distance to the manifold for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        n, k = len(X), self.k
        # coarse pass over all starts, then box-constrained Gauss-Newton from the best few
        img = self.embed(self._starts)
        d2 = ((X[:, None, :] - img[None, :, :]) ** 2).sum(-1)
        best = np.argsort(d2, axis=1)[:, : self.n_refine]
        U = self._starts[best].reshape(-1, k)
        T = np.repeat(X, self.n_refine, axis=0)
        lam = 1e-6
        for _ in range(self.gn_iters):
            H = np.tanh(U @ self.W1 + self.b1)
            r = H @ self.W2 + self.b2 - T
            J = np.einsum("kh,mh,hd->mkd", self.W1, 1.0 - H ** 2, self.W2)
            JJ = J @ J.transpose(0, 2, 1) + lam * np.eye(k)
            step = np.linalg.solve(JJ, np.einsum("mkd,md->mk", J, r)[..., None])[..., 0]
            U_new = np.clip(U - step, -1.0, 1.0)
            old = (r ** 2).sum(1)
            new = ((self.embed(U_new) - T) ** 2).sum(1)
            U = np.where((new <= old)[:, None], U_new, U)
        dist = np.sqrt(((self.embed(U) - T) ** 2).sum(1)).reshape(n, self.n_refine)
        pick = np.argmin(dist, axis=1)
        U = U.reshape(n, self.n_refine, k)[np.arange(n), pick]
        return U, dist[np.arange(n), pick]

    def manifold_distance(self, X) -> np.ndarray:
        return self.project(X)[1]

    def evaluate(self, X, C=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if not self.space.contains(X, atol=1e-9).all():
            raise OracleError(f"{self.name}: input outside the ambient box")
        U, dist = self.project(X)
        return self.latent_score(U) - self.penalty * dist

    def sample_on_manifold(self, n: int, rng: np.random.Generator, noise: Optional[float] = None,
                           hole: Optional[float] = None):
        """Near-manifold records, scored by the oracle.

        Latents are uniform on the box minus a ball of radius ``hole`` around
        the optimum (so the data never contains the answer). Each record gets
        its own jitter scale, uniform on ``[0, 2 * noise]``, so the data mixes
        clean and clearly off-manifold points.
        """
        noise = self.noise if noise is None else noise
        hole = self.hole if hole is None else hole
        U = np.empty((0, self.k))
        while len(U) < n:
            cand = rng.uniform(-1.0, 1.0, size=(2 * (n - len(U)) + 8, self.k))
            keep = np.sum((cand - self.u_opt) ** 2, axis=1) > hole ** 2
            U = np.concatenate([U, cand[keep]])[:n]
        scale = 2.0 * noise * rng.random((n, 1))
        X = self.embed(U) + scale * rng.normal(size=(n, self.D))
        X = np.clip(X, self.space.lo, self.space.hi)
        return X, self.evaluate(X)


# ---------------------------------------------------------------------------
# synthetic sequence task
# ---------------------------------------------------------------------------


class SequenceTask(Oracle):
    """Position-weight-matrix score plus one pairwise interaction term."""

    def __init__(self, pwm: np.ndarray, pair: Tuple[int, int], pair_table: np.ndarray, name: str = "seq"):
        pwm = np.asarray(pwm, dtype=np.float64)
        L, A = pwm.shape
        if L * np.log2(A) > 24 + 1e-9:
            raise ValueError("sequence space too large to enumerate (need L*log2(A) <= 24)")
        self.name = name
        self.pwm = pwm
        self.pair = (int(pair[0]), int(pair[1]))
        self.pair_table = np.asarray(pair_table, dtype=np.float64)
        self.space = CategoricalSpace(L, A)
        scores = self.all_scores()
        best = int(np.argmax(scores))
        self.x_star = self.index_to_sequence(best)
        self.f_star = float(scores[best])

    @classmethod
    def from_seed(cls, seed: int, L: int, A: int, pair_strength: float = 1.5) -> "SequenceTask":
        rng = component_rng(seed, "sequence-task")
        pwm = rng.normal(size=(L, A))
        i, j = sorted(rng.choice(L, size=2, replace=False)) if L > 1 else (0, 0)
        table = pair_strength * rng.normal(size=(A, A))
        return cls(pwm, (i, j), table, name=f"seq:L{L}A{A}:seed{seed}")

    def index_to_sequence(self, idx) -> np.ndarray:
        L, A = self.pwm.shape
        idx = np.asarray(idx, dtype=np.int64)
        digits = (idx[..., None] // A ** np.arange(L - 1, -1, -1)) % A
        return digits

    def all_scores(self) -> np.ndarray:
        """Scores of every sequence, indexed in base-A order (position 0 most significant)."""
        L, A = self.pwm.shape
        total = A ** L
        out = np.empty(total)
        chunk = 1 << 16
        for start in range(0, total, chunk):
            idx = np.arange(start, min(total, start + chunk))
            out[start:start + len(idx)] = self._score(self.index_to_sequence(idx))
        return out

    def _score(self, X: np.ndarray) -> np.ndarray:
        L = self.pwm.shape[0]
        s = self.pwm[np.arange(L), X].sum(axis=1)
        i, j = self.pair
        return s + self.pair_table[X[:, i], X[:, j]]

    def evaluate(self, X, C=None) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X))
        if not self.space.contains(X).all():
            raise OracleError(f"{self.name}: invalid sequence")
        return self._score(X.astype(np.int64))

    def rank_fraction(self, X) -> np.ndarray:
        """Fraction of all sequences scoring strictly higher than each row of ``X``."""
        scores = np.sort(self.all_scores())
        vals = self.evaluate(X)
        higher = len(scores) - np.searchsorted(scores, vals, side="right")
        return higher / len(scores)


# ---------------------------------------------------------------------------
# synthetic contextual bandit
# ---------------------------------------------------------------------------


class ContextualBanditTask(Oracle):
    """Contexts from a Gaussian mixture; the correct arm is the nearest mixture center.

    ``evaluate(arm, c)`` is 1 if ``arm`` is correct for ``c`` and 0 otherwise.
    """

    contextual = True

    def __init__(self, seed: int = 0, context_dim: int = 2, arms: int = 10, spread: float = 4.0):
        if arms > 16 or arms < 2:
            raise ValueError("arms must be in [2, 16]")
        if not 1 <= context_dim <= 8:
            raise ValueError("context dim must be in [1, 8]")
        self.name = f"bandit:c{context_dim}a{arms}:seed{seed}"
        self.context_dim, self.arms = context_dim, arms
        rng = component_rng(seed, "bandit-task")
        self.centers = rng.normal(0.0, spread, size=(arms, context_dim))
        self.space = CategoricalSpace(1, arms)

    def sample_contexts(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.integers(0, self.arms, size=n)
        return self.centers[comp] + rng.normal(size=(n, self.context_dim))

    def correct_arm(self, C) -> np.ndarray:
        C = np.atleast_2d(np.asarray(C, dtype=np.float64))
        d2 = ((C[:, None, :] - self.centers[None]) ** 2).sum(-1)
        return np.argmin(d2, axis=1)

    def evaluate(self, X, C=None) -> np.ndarray:
        if C is None:
            raise OracleError(f"{self.name}: contextual oracle needs contexts")
        X = np.asarray(X).reshape(-1)
        if not ((X >= 0) & (X < self.arms)).all():
            raise OracleError(f"{self.name}: arm index out of range")
        return (X.astype(np.int64) == self.correct_arm(C)).astype(np.float64)

    def logging_policy(self, C, rng: np.random.Generator, correct_rate: Optional[float] = 0.49) -> np.ndarray:
        """Logged arms: correct with probability ``correct_rate`` (``None`` = uniform)."""
        n = len(C)
        if correct_rate is None:
            return rng.integers(0, self.arms, size=(n, 1))
        correct = self.correct_arm(C)
        hit = rng.uniform(size=n) < correct_rate
        other = (correct + rng.integers(1, self.arms, size=n)) % self.arms
        return np.where(hit, correct, other)[:, None]

    def bayes_rate(self) -> float:
        # the correct arm is a deterministic function of the observed context
        return 1.0


# ---------------------------------------------------------------------------
# registry
# ---------------------------------------------------------------------------

_PATTERNS = {
    "manifold": re.compile(r"^manifold:k(\d+)d(\d+):seed(\d+)$"),
    "seq": re.compile(r"^seq:L(\d+)A(\d+):seed(\d+)$"),
    "bandit": re.compile(r"^bandit:c(\d+)a(\d+):seed(\d+)$"),
}


def get_oracle(name: str) -> Oracle:
    """Resolve a registry name such as ``branin`` or ``seq:L8A4:seed3``."""
    if name == "branin":
        return make_branin()
    if name == "hartmann6":
        return make_hartmann6()
    for kind, pat in _PATTERNS.items():
        m = pat.match(name)
        if m:
            a, b, seed = (int(v) for v in m.groups())
            if kind == "manifold":
                return ManifoldTask(seed=seed, k=a, D=b)
            if kind == "seq":
                return SequenceTask.from_seed(seed, L=a, A=b)
            return ContextualBanditTask(seed=seed, context_dim=a, arms=b)
    raise KeyError(f"unknown oracle {name!r}")


ORACLE_NAMES = ("branin", "hartmann6", "manifold:k{K}d{D}:seed{S}", "seq:L{L}A{A}:seed{S}",
                "bandit:c{C}a{A}:seed{S}")

__all__ = [
    "BRANIN_MINIMUM", "BRANIN_SPACE", "ContextualBanditTask", "FunctionOracle", "HARTMANN6_MINIMUM",
    "HARTMANN6_SPACE", "ManifoldTask", "Oracle", "OracleError", "SequenceTask", "branin", "get_oracle",
    "hartmann6", "make_branin", "make_hartmann6",
]
